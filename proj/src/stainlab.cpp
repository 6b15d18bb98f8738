#include "histopipe/stainlab.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "histopipe/error.hpp"
#include "histopipe/rng.hpp"

namespace histopipe::stain {

namespace {

constexpr std::size_t kMinTissuePixels = 100;
constexpr double kDegenerateRatio = 1e-6;
// det(S^T S) = sin^2 of the column angle for unit columns.
constexpr double kSingularDet = 1e-6;

double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

kernels::Mat23 pseudo_inverse(const StainMatrix& stains) {
  const Vec3& h = stains.hematoxylin();
  const Vec3& e = stains.eosin();
  const double hh = dot(h, h);
  const double ee = dot(e, e);
  const double he = dot(h, e);
  const double det = hh * ee - he * he;
  if (det < kSingularDet) {
    throw Error(ErrorCode::SingularStainMatrix, "stain columns are (nearly) parallel");
  }
  kernels::Mat23 pinv;
  for (int i = 0; i < 3; ++i) {
    pinv.row[0][i] = (ee * h[i] - he * e[i]) / det;
    pinv.row[1][i] = (hh * e[i] - he * h[i]) / det;
  }
  return pinv;
}

Vec3 to_nonnegative_unit(Vec3 v) {
  if (v[0] + v[1] + v[2] < 0.0) {
    for (double& x : v) x = -x;
  }
  for (double& x : v) x = std::max(x, 0.0);
  const double n = norm(v);
  if (n == 0.0) {
    throw Error(ErrorCode::DegenerateCovariance, "stain direction collapsed to zero");
  }
  for (double& x : v) x /= n;
  return v;
}

}  // namespace

StainMatrix StainMatrix::from_columns(const Vec3& hematoxylin, const Vec3& eosin) {
  auto unit = [](Vec3 v, const char* name) {
    for (double x : v) {
      if (!(x >= 0.0) || !std::isfinite(x)) {
        throw Error(ErrorCode::InvalidArgument,
                    std::string(name) + " stain column must be finite and non-negative");
      }
    }
    const double n = norm(v);
    if (n == 0.0) {
      throw Error(ErrorCode::InvalidArgument, std::string(name) + " stain column is zero");
    }
    for (double& x : v) x /= n;
    return v;
  };
  return StainMatrix(unit(hematoxylin, "hematoxylin"), unit(eosin, "eosin"));
}

double StainMatrix::separation_degrees() const { return angle_degrees(h_, e_); }

kernels::Mat32 StainMatrix::as_matrix() const {
  kernels::Mat32 m;
  m.col[0] = h_;
  m.col[1] = e_;
  return m;
}

StainMatrix ruifrok_he() {
  return StainMatrix::from_columns({0.65, 0.70, 0.29}, {0.07, 0.99, 0.11});
}

double angle_degrees(const Vec3& a, const Vec3& b) {
  const double c = std::clamp(dot(a, b) / (norm(a) * norm(b)), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

void MacenkoParams::validate() const {
  if (!(i0 > 0.0 && i0 <= 255.0)) throw Error(ErrorCode::InvalidArgument, "i0 must be in (0, 255]");
  if (!(beta > 0.0)) throw Error(ErrorCode::InvalidArgument, "beta must be positive");
  if (!(alpha > 0.0 && alpha < 50.0)) {
    throw Error(ErrorCode::InvalidArgument, "alpha must be in (0, 50)");
  }
  if (!(concentration_percentile > 0.0 && concentration_percentile <= 100.0)) {
    throw Error(ErrorCode::InvalidArgument, "concentration_percentile must be in (0, 100]");
  }
  for (double m : reference_max_concentrations) {
    if (!(m > 0.0)) {
      throw Error(ErrorCode::InvalidArgument, "reference max concentrations must be positive");
    }
  }
}

double percentile(std::vector<double>& values, double q) {
  if (values.empty()) throw Error(ErrorCode::InvalidArgument, "percentile of empty set");
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto k = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(k);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
  const double lo = values[k];
  if (frac == 0.0 || k + 1 >= values.size()) return lo;
  const double hi =
      *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(k) + 1, values.end());
  return lo + frac * (hi - lo);
}

OdImage rgb_to_od(const RgbImage& img, double i0) {
  if (!(i0 > 0.0)) throw Error(ErrorCode::InvalidArgument, "i0 must be positive");
  OdImage od{img.width(), img.height(), std::vector<double>(img.data().size())};
  kernels::omp::rgb_to_od(img.data(), i0, od.values);
  return od;
}

RgbImage od_to_rgb(const OdImage& od, double i0) {
  RgbImage out(od.width, od.height);
  kernels::omp::od_to_rgb(od.values, i0, out.data());
  return out;
}

StainMatrix estimate_stain_matrix(const RgbImage& img, const MacenkoParams& params) {
  params.validate();
  const OdImage od = rgb_to_od(img, params.i0);
  const std::size_t n = od.pixel_count();

  std::vector<std::array<double, 3>> tissue;
  tissue.reserve(n / 2);
  const double beta_sq = params.beta * params.beta;
  for (std::size_t p = 0; p < n; ++p) {
    const double* v = &od.values[3 * p];
    if (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] > beta_sq) tissue.push_back({v[0], v[1], v[2]});
  }
  if (tissue.size() < kMinTissuePixels) {
    throw Error(ErrorCode::InsufficientTissue,
                std::to_string(tissue.size()) + " pixels above the OD threshold, need " +
                    std::to_string(kMinTissuePixels));
  }

  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& t : tissue) mean += Eigen::Vector3d(t[0], t[1], t[2]);
  mean /= static_cast<double>(tissue.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& t : tissue) {
    const Eigen::Vector3d d = Eigen::Vector3d(t[0], t[1], t[2]) - mean;
    cov.noalias() += d * d.transpose();
  }
  cov /= static_cast<double>(tissue.size() - 1);

  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorCode::DegenerateCovariance, "eigen-decomposition failed");
  }
  // Eigenvalues ascend: columns 2 and 1 span the dominant plane.
  const double first = solver.eigenvalues()(2);
  const double second = solver.eigenvalues()(1);
  if (!(first > 0.0) || second < kDegenerateRatio * first) {
    throw Error(ErrorCode::DegenerateCovariance, "OD cloud is (nearly) rank one");
  }
  Eigen::Vector3d v1 = solver.eigenvectors().col(2);
  Eigen::Vector3d v2 = solver.eigenvectors().col(1);
  if (v1.sum() < 0.0) v1 = -v1;
  if (v2(0) < 0.0) v2 = -v2;

  std::vector<double> angles(tissue.size());
  for (std::size_t i = 0; i < tissue.size(); ++i) {
    const Eigen::Vector3d t(tissue[i][0], tissue[i][1], tissue[i][2]);
    angles[i] = std::atan2(t.dot(v2), t.dot(v1));
  }
  const double lo_angle = percentile(angles, params.alpha);
  const double hi_angle = percentile(angles, 100.0 - params.alpha);

  auto direction = [&](double phi) {
    const Eigen::Vector3d d = v1 * std::cos(phi) + v2 * std::sin(phi);
    return to_nonnegative_unit({d(0), d(1), d(2)});
  };
  const Vec3 lo = direction(lo_angle);
  const Vec3 hi = direction(hi_angle);

  bool lo_is_h = lo[0] > hi[0];
  if (lo[0] == hi[0]) lo_is_h = hi[2] > lo[2];
  const StainMatrix stains =
      lo_is_h ? StainMatrix::from_columns(lo, hi) : StainMatrix::from_columns(hi, lo);
  if (stains.separation_degrees() < 1e-3) {
    throw Error(ErrorCode::DegenerateCovariance, "estimated stain columns coincide");
  }
  return stains;
}

ConcentrationMap separate_stains(const RgbImage& img, const StainMatrix& stains, double i0) {
  const kernels::Mat23 pinv = pseudo_inverse(stains);
  ConcentrationMap conc{img.width(), img.height(), std::vector<double>(img.pixel_count() * 2)};
  kernels::omp::unmix(img.data(), pinv, i0, conc.values);
  return conc;
}

RgbImage recompose(const ConcentrationMap& conc, const StainMatrix& stains, double i0) {
  RgbImage out(conc.width, conc.height);
  kernels::omp::remix(conc.values, {1.0, 1.0}, stains.as_matrix(), i0, out.data());
  return out;
}

RgbImage normalize_stains(const RgbImage& img, const MacenkoParams& params) {
  const StainMatrix stains = estimate_stain_matrix(img, params);
  const ConcentrationMap conc = separate_stains(img, stains, params.i0);

  std::array<double, 2> scale{};
  std::vector<double> channel(conc.pixel_count());
  for (int k = 0; k < 2; ++k) {
    for (std::size_t p = 0; p < channel.size(); ++p) channel[p] = conc.values[2 * p + k];
    const double max_c = percentile(channel, params.concentration_percentile);
    if (!(max_c > 1e-9)) {
      throw Error(ErrorCode::InsufficientTissue,
                  std::string(k == 0 ? "hematoxylin" : "eosin") +
                      " concentration percentile is zero");
    }
    scale[k] = params.reference_max_concentrations[k] / max_c;
  }

  RgbImage out(img.width(), img.height());
  kernels::omp::remix(conc.values, scale, params.reference_stains.as_matrix(), params.i0,
                      out.data());
  return out;
}

AugmentationParams sample_augmentation(std::uint64_t seed, bool affine) {
  CounterRng rng(make_key(seed, 0xa06a11ULL));
  AugmentationParams p;
  p.u_h = rng.uniform(kAugmentLow, kAugmentHigh);
  p.u_e = rng.uniform(kAugmentLow, kAugmentHigh);
  const bool fh = rng.below(2) == 1;
  const bool fv = rng.below(2) == 1;
  const int k = static_cast<int>(rng.below(4));
  if (affine) {
    p.flip_h = fh;
    p.flip_v = fv;
    p.rot90_k = k;
  }
  return p;
}

RgbImage apply_affine(const RgbImage& img, const AugmentationParams& params) {
  if (!params.flip_h && !params.flip_v && params.rot90_k % 4 == 0) return img;
  RgbImage out = params.flip_h ? flip_horizontal(img) : img;
  if (params.flip_v) out = flip_vertical(out);
  return rotate90(out, params.rot90_k);
}

RgbImage augment_concentrations(const ConcentrationMap& conc, const StainMatrix& stains,
                                const AugmentationParams& params, double i0) {
  RgbImage out(conc.width, conc.height);
  kernels::omp::remix(conc.values, {params.u_h, params.u_e}, stains.as_matrix(), i0, out.data());
  return apply_affine(out, params);
}

RgbImage augment_he(const RgbImage& img, const StainMatrix& stains,
                    const AugmentationParams& params, double i0) {
  return augment_concentrations(separate_stains(img, stains, i0), stains, params, i0);
}

}  // namespace histopipe::stain
