#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "histopipe/image.hpp"
#include "histopipe/kernels.hpp"

namespace histopipe::stain {

using Vec3 = std::array<double, 3>;

/// Two unit-norm, non-negative optical-density columns: hematoxylin then eosin.
class StainMatrix {
 public:
  /// Normalizes both columns. Throws InvalidArgument on negative entries or a
  /// zero column.
  static StainMatrix from_columns(const Vec3& hematoxylin, const Vec3& eosin);

  const Vec3& hematoxylin() const noexcept { return h_; }
  const Vec3& eosin() const noexcept { return e_; }

  /// Angle between the two columns in degrees.
  double separation_degrees() const;

  kernels::Mat32 as_matrix() const;

  friend bool operator==(const StainMatrix&, const StainMatrix&) = default;

 private:
  StainMatrix(const Vec3& h, const Vec3& e) : h_(h), e_(e) {}
  Vec3 h_{};
  Vec3 e_{};
};

/// Ruifrok & Johnston H&E vectors, normalized.
StainMatrix ruifrok_he();

/// Angle in degrees between two 3-vectors.
double angle_degrees(const Vec3& a, const Vec3& b);

struct MacenkoParams {
  double i0 = 255.0;
  double beta = 0.15;
  double alpha = 1.0;
  double concentration_percentile = 99.0;
  StainMatrix reference_stains = ruifrok_he();
  std::array<double, 2> reference_max_concentrations{1.9, 1.0};

  /// Throws InvalidArgument when an invariant is violated.
  void validate() const;
};

struct AugmentationParams {
  double u_h = 1.0;
  double u_e = 1.0;
  bool flip_h = false;
  bool flip_v = false;
  int rot90_k = 0;

  friend bool operator==(const AugmentationParams&, const AugmentationParams&) = default;
};

inline constexpr double kAugmentLow = 0.7;
inline constexpr double kAugmentHigh = 1.3;

OdImage rgb_to_od(const RgbImage& img, double i0 = 255.0);
RgbImage od_to_rgb(const OdImage& od, double i0 = 255.0);

/// Macenko estimation: threshold the OD cloud at `beta`, project onto the
/// dominant eigen-plane of its covariance and take the `alpha` / `100-alpha`
/// percentile angles as the two stain directions.
///
/// Throws InsufficientTissue with fewer than 100 pixels above `beta`, and
/// DegenerateCovariance when the second eigenvalue is below 1e-6 of the first.
StainMatrix estimate_stain_matrix(const RgbImage& img, const MacenkoParams& params);

/// Least-squares color deconvolution, clamped to non-negative concentrations.
ConcentrationMap separate_stains(const RgbImage& img, const StainMatrix& stains,
                                 double i0 = 255.0);

RgbImage recompose(const ConcentrationMap& conc, const StainMatrix& stains, double i0 = 255.0);

/// Maps the image onto `reference_stains`, rescaling each stain so its
/// `concentration_percentile` over all pixels equals the reference maximum.
RgbImage normalize_stains(const RgbImage& img, const MacenkoParams& params);

/// Deterministic in `seed`. With `affine` false the flips and rotation stay off.
AugmentationParams sample_augmentation(std::uint64_t seed, bool affine = true);

/// Scales H and E concentrations by (u_h, u_e), recomposes, then applies the
/// flips (horizontal first) and the quarter-turn rotation.
RgbImage augment_he(const RgbImage& img, const StainMatrix& stains,
                    const AugmentationParams& params, double i0 = 255.0);

/// Same as augment_he for an image already separated against `stains`.
RgbImage augment_concentrations(const ConcentrationMap& conc, const StainMatrix& stains,
                                const AugmentationParams& params, double i0 = 255.0);

RgbImage apply_affine(const RgbImage& img, const AugmentationParams& params);

/// Linear-interpolated percentile (q in [0, 100]); reorders `values`.
double percentile(std::vector<double>& values, double q);

}  // namespace histopipe::stain
