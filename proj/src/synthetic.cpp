#include "histopipe/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "histopipe/error.hpp"
#include "histopipe/rng.hpp"

namespace histopipe::synth {

namespace {

struct ClassProfile {
  double nuclear_density;  // fraction of area covered by nuclei
  Range radius;            // at 192 px image width
  double lumen_fraction;
  double stroma_eosin;
};

ClassProfile profile_for(Label label) {
  switch (label) {
    case Label::Normal: return {0.06, {2.0, 3.0}, 0.20, 0.55};
    case Label::Benign: return {0.14, {2.5, 3.5}, 0.12, 0.75};
    case Label::InSitu: return {0.26, {3.0, 4.5}, 0.10, 0.65};
    case Label::Invasive: return {0.40, {2.5, 4.0}, 0.03, 0.95};
  }
  return {};
}

template <typename Fn>
void for_each_in_disk(int width, int height, double cx, double cy, double r, Fn&& fn) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
  const int x1 = std::min(width - 1, static_cast<int>(std::ceil(cx + r)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
  const int y1 = std::min(height - 1, static_cast<int>(std::ceil(cy + r)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
      if (d <= r) fn(x, y, d / r);
    }
  }
}

stain::Vec3 rotate_towards_random(const stain::Vec3& v, double degrees, CounterRng& rng) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    stain::Vec3 w{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double along = w[0] * v[0] + w[1] * v[1] + w[2] * v[2];
    for (int i = 0; i < 3; ++i) w[i] -= along * v[i];
    const double n = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
    if (n < 1e-6) continue;
    const double theta = degrees * std::numbers::pi / 180.0;
    stain::Vec3 out{};
    bool ok = true;
    for (int i = 0; i < 3; ++i) {
      out[i] = std::cos(theta) * v[i] + std::sin(theta) * w[i] / n;
      ok = ok && out[i] >= 0.0;
    }
    if (ok) return out;
  }
  return v;
}

}  // namespace

ConcentrationMap mixture_concentrations(int width, int height, const PixelMixture& mix,
                                        std::uint64_t seed) {
  ConcentrationMap c{width, height, std::vector<double>(static_cast<std::size_t>(width) * height * 2)};
  CounterRng rng(make_key(seed, 0x313c5ULL));
  for (std::size_t p = 0; p < c.pixel_count(); ++p) {
    const double r = rng.uniform();
    const auto& [hr, er] = r < mix.nuclear_fraction
                               ? std::pair{mix.nuclear_h, mix.nuclear_e}
                               : (r < mix.nuclear_fraction + mix.stroma_fraction
                                      ? std::pair{mix.stroma_h, mix.stroma_e}
                                      : std::pair{mix.mixed_h, mix.mixed_e});
    c.values[2 * p] = rng.uniform(hr.lo, hr.hi);
    c.values[2 * p + 1] = rng.uniform(er.lo, er.hi);
  }
  return c;
}

ConcentrationMap uniform_concentrations(int width, int height, Range range, std::uint64_t seed) {
  ConcentrationMap c{width, height, std::vector<double>(static_cast<std::size_t>(width) * height * 2)};
  CounterRng rng(make_key(seed, 0x0f0f1ULL));
  for (double& v : c.values) v = rng.uniform(range.lo, range.hi);
  return c;
}

stain::StainMatrix perturbed_stains(std::uint64_t seed, double max_degrees) {
  CounterRng rng(make_key(seed, 0x57a1aULL));
  const stain::StainMatrix base = stain::ruifrok_he();
  const stain::Vec3 h = rotate_towards_random(base.hematoxylin(), rng.uniform(0, max_degrees), rng);
  const stain::Vec3 e = rotate_towards_random(base.eosin(), rng.uniform(0, max_degrees), rng);
  return stain::StainMatrix::from_columns(h, e);
}

RgbImage tissue_image(int width, int height, Label label, std::uint64_t seed) {
  const ClassProfile prof = profile_for(label);
  CounterRng rng(make_key(seed, 0x7155eULL, index_of(label)));
  const double scale = width / 192.0;
  const double strength = rng.uniform(0.8, 1.2);
  const stain::StainMatrix stains = perturbed_stains(rng.next_u64(), 4.0);

  ConcentrationMap c{width, height, std::vector<double>(static_cast<std::size_t>(width) * height * 2)};
  for (std::size_t p = 0; p < c.pixel_count(); ++p) {
    c.values[2 * p] = rng.uniform(0.05, 0.2);
    c.values[2 * p + 1] = prof.stroma_eosin * rng.uniform(0.75, 1.25);
  }

  const double area = static_cast<double>(width) * height;
  double lumen_area = 0.0;
  while (lumen_area < prof.lumen_fraction * area) {
    const double r = rng.uniform(6.0, 14.0) * scale;
    const double cx = rng.uniform(0, width);
    const double cy = rng.uniform(0, height);
    for_each_in_disk(width, height, cx, cy, r, [&](int x, int y, double) {
      const std::size_t p = static_cast<std::size_t>(y) * width + x;
      c.values[2 * p] = rng.uniform(0.0, 0.03);
      c.values[2 * p + 1] = rng.uniform(0.0, 0.05);
    });
    lumen_area += std::numbers::pi * r * r;
  }

  const double mean_r = 0.5 * (prof.radius.lo + prof.radius.hi) * scale;
  const auto nuclei =
      static_cast<int>(prof.nuclear_density * area / (std::numbers::pi * mean_r * mean_r));
  for (int n = 0; n < nuclei; ++n) {
    const double r = rng.uniform(prof.radius.lo, prof.radius.hi) * scale;
    const double cx = rng.uniform(0, width);
    const double cy = rng.uniform(0, height);
    const double peak = rng.uniform(0.9, 1.8);
    for_each_in_disk(width, height, cx, cy, r, [&](int x, int y, double rel) {
      const std::size_t p = static_cast<std::size_t>(y) * width + x;
      c.values[2 * p] = peak * (1.0 - 0.35 * rel * rel);
      c.values[2 * p + 1] = rng.uniform(0.05, 0.15);
    });
  }

  for (double& v : c.values) v *= strength;
  return stain::recompose(c, stains);
}

std::vector<DatasetEntry> write_dataset(const std::filesystem::path& dir, int per_class,
                                        int width, int height, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::vector<DatasetEntry> entries;
  for (Label label : kAllLabels) {
    for (int i = 0; i < per_class; ++i) {
      char id[64];
      std::snprintf(id, sizeof id, "%s_%03d", std::string(to_string(label)).c_str(), i);
      DatasetEntry e{id, std::string(id) + ".png", label};
      write_png(dir / e.filename,
                tissue_image(width, height, label, make_key(seed, index_of(label), i)));
      entries.push_back(std::move(e));
    }
  }
  std::ofstream labels(dir / "labels.csv");
  if (!labels) throw Error(ErrorCode::IoError, "cannot write labels.csv in " + dir.string());
  labels << "image_id,filename,label\n";
  for (const auto& e : entries) labels << e.image_id << ',' << e.filename << ',' << to_string(e.label) << '\n';
  return entries;
}

}  // namespace histopipe::synth
