#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "histopipe/error.hpp"
#include "histopipe/stainlab.hpp"
#include "histopipe/synthetic.hpp"

using namespace histopipe;
using namespace histopipe::stain;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoError;
}

RgbImage mixture_image(const StainMatrix& stains, std::uint64_t seed, int w = 128, int h = 96) {
  return recompose(synth::mixture_concentrations(w, h, synth::PixelMixture{}, seed), stains);
}

int max_abs_diff(const RgbImage& a, const RgbImage& b) {
  int worst = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    worst = std::max(worst, std::abs(int(a.data()[i]) - int(b.data()[i])));
  }
  return worst;
}

}  // namespace

TEST_CASE("stain matrix columns are normalized and validated") {
  const auto m = StainMatrix::from_columns({2, 0, 0}, {0, 3, 4});
  CHECK(m.hematoxylin()[0] == doctest::Approx(1.0));
  CHECK(m.eosin()[1] == doctest::Approx(0.6));
  CHECK(m.eosin()[2] == doctest::Approx(0.8));
  CHECK(m.separation_degrees() == doctest::Approx(90.0));
  CHECK(code_of([] { StainMatrix::from_columns({-1, 0, 0}, {0, 1, 0}); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { StainMatrix::from_columns({0, 0, 0}, {0, 1, 0}); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("percentile interpolates linearly between order statistics") {
  std::vector<double> v{5, 1, 4, 2, 3};
  CHECK(percentile(v, 0) == 1.0);
  CHECK(percentile(v, 100) == 5.0);
  CHECK(percentile(v, 50) == 3.0);
  CHECK(percentile(v, 10) == doctest::Approx(1.4));
  CHECK(percentile(v, 99) == doctest::Approx(4.96));
}

TEST_CASE("optical density of white light is zero and grows with absorption") {
  RgbImage img(2, 1);
  img.at(0, 0, 0) = img.at(0, 0, 1) = img.at(0, 0, 2) = 255;
  img.at(1, 0, 0) = 25;
  img.at(1, 0, 1) = 128;
  img.at(1, 0, 2) = 0;
  const OdImage od = rgb_to_od(img);
  CHECK(od.values[0] == 0.0);
  CHECK(od.values[3] == doctest::Approx(-std::log10(25.0 / 255.0)));
  CHECK(od.values[5] == doctest::Approx(std::log10(255.0)));
  CHECK(od_to_rgb(od).at(1, 0, 1) == 128);
}

TEST_CASE("Macenko recovers a known stain matrix") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const StainMatrix truth = synth::perturbed_stains(seed, 8.0);
    const StainMatrix est = estimate_stain_matrix(mixture_image(truth, 100 + seed), MacenkoParams{});
    CHECK(angle_degrees(est.hematoxylin(), truth.hematoxylin()) < 2.0);
    CHECK(angle_degrees(est.eosin(), truth.eosin()) < 2.0);
  }
}

TEST_CASE("Macenko estimation reports missing tissue and degenerate colour") {
  const RgbImage white(64, 64, 255);
  CHECK(code_of([&] { estimate_stain_matrix(white, MacenkoParams{}); }) == ErrorCode::InsufficientTissue);

  // A single flat colour has a zero-variance OD cloud.
  RgbImage flat(64, 64);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      flat.at(x, y, 0) = 120;
      flat.at(x, y, 1) = 60;
      flat.at(x, y, 2) = 150;
    }
  }
  CHECK(code_of([&] { estimate_stain_matrix(flat, MacenkoParams{}); }) == ErrorCode::DegenerateCovariance);

  MacenkoParams bad;
  bad.alpha = 60.0;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("separation and recomposition round trip within one level") {
  const StainMatrix stains = ruifrok_he();
  const RgbImage img = mixture_image(stains, 7);
  const ConcentrationMap conc = separate_stains(img, stains);
  for (const double c : conc.values) REQUIRE(c >= 0.0);
  CHECK(max_abs_diff(recompose(conc, stains), img) <= 1);
}

TEST_CASE("separation rejects a singular stain matrix") {
  const auto same = StainMatrix::from_columns({0.6, 0.7, 0.3}, {0.6, 0.7, 0.3});
  CHECK(code_of([&] { separate_stains(RgbImage(4, 4, 200), same); }) == ErrorCode::SingularStainMatrix);
}

TEST_CASE("normalization maps an image onto the reference stains") {
  const StainMatrix truth = synth::perturbed_stains(11, 8.0);
  const MacenkoParams params;
  const RgbImage normalized = normalize_stains(mixture_image(truth, 3), params);
  const StainMatrix est = estimate_stain_matrix(normalized, params);
  CHECK(angle_degrees(est.hematoxylin(), params.reference_stains.hematoxylin()) < 2.0);
  CHECK(angle_degrees(est.eosin(), params.reference_stains.eosin()) < 2.0);
}

TEST_CASE("augmentation parameters are deterministic and inside their ranges") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto a = sample_augmentation(seed);
    CHECK(a == sample_augmentation(seed));
    CHECK(a.u_h >= kAugmentLow);
    CHECK(a.u_h <= kAugmentHigh);
    CHECK(a.u_e >= kAugmentLow);
    CHECK(a.u_e <= kAugmentHigh);
    CHECK(a.rot90_k >= 0);
    CHECK(a.rot90_k <= 3);
    const auto plain = sample_augmentation(seed, false);
    CHECK_FALSE(plain.flip_h);
    CHECK_FALSE(plain.flip_v);
    CHECK(plain.rot90_k == 0);
  }
}

TEST_CASE("identity augmentation reproduces the image and scaling darkens it") {
  const StainMatrix stains = ruifrok_he();
  const RgbImage img = mixture_image(stains, 9, 32, 24);
  CHECK(max_abs_diff(augment_he(img, stains, AugmentationParams{}), img) <= 1);

  AugmentationParams darker;
  darker.u_h = 1.3;
  darker.u_e = 1.3;
  const RgbImage d = augment_he(img, stains, darker);
  long before = 0, after = 0;
  for (std::size_t i = 0; i < img.data().size(); ++i) {
    before += img.data()[i];
    after += d.data()[i];
  }
  CHECK(after < before);

  AugmentationParams turned;
  turned.rot90_k = 1;
  turned.flip_h = true;
  const RgbImage t = augment_he(img, stains, turned);
  CHECK(t == rotate90(flip_horizontal(augment_he(img, stains, AugmentationParams{})), 1));
}
