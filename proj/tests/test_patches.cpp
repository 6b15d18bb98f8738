#include <doctest.h>

#include "histopipe/error.hpp"
#include "histopipe/patches.hpp"
#include "histopipe/rng.hpp"
#include "histopipe/synthetic.hpp"
#include "test_support.hpp"

using namespace histopipe;
using namespace histopipe::patches;

namespace {

ErrorCode load_error(const std::filesystem::path& dir, const std::string& csv) {
  testing::write_text(dir / "labels.csv", csv);
  try {
    load_dataset(dir, dir / "labels.csv");
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("dataset loading validates every row") {
  testing::TempDir dir("hp_ds");
  write_png(dir.path() / "a.png", RgbImage(8, 8, 200));
  write_png(dir.path() / "b.png", RgbImage(8, 8, 100));

  const auto m = [&] {
    testing::write_text(dir.path() / "labels.csv",
                        "image_id,filename,label\na,a.png,normal\nb,b.png,invasive\n");
    return load_dataset(dir.path(), dir.path() / "labels.csv", true);
  }();
  REQUIRE(m.records.size() == 2);
  CHECK(m.records[1].label == Label::Invasive);
  CHECK(m.class_counts[0] == 1);
  CHECK(m.class_counts[3] == 1);
  CHECK(m.find("b")->load() == RgbImage(8, 8, 100));
  CHECK(m.find("zzz") == nullptr);

  CHECK(load_error(dir.path(), "image_id,filename,label\na,a.png,tumour\n") == ErrorCode::UnknownLabel);
  CHECK(load_error(dir.path(), "image_id,filename,label\na,a.png,normal\na,b.png,benign\n") ==
        ErrorCode::DuplicateImageId);
  CHECK(load_error(dir.path(), "image_id,filename,label\nc,c.png,normal\n") == ErrorCode::MissingFile);
  CHECK(load_error(dir.path(), "id,file,class\na,a.png,normal\n") == ErrorCode::ConfigError);

  testing::write_text(dir.path() / "bad.png", "garbage");
  CHECK(load_error(dir.path(), "image_id,filename,label\nx,bad.png,normal\n") == ErrorCode::UnreadableImage);

  try {
    load_dataset(dir.path(), dir.path() / "nope.csv");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingFile);
    CHECK(std::string(e.what()).find("nope.csv") != std::string::npos);
  }
}

TEST_CASE("downscale_half averages 2x2 blocks and rejects odd sizes") {
  RgbImage img(4, 2);
  const std::uint8_t v[] = {10, 11, 20, 21};
  img.at(0, 0, 0) = v[0];
  img.at(1, 0, 0) = v[1];
  img.at(0, 1, 0) = v[2];
  img.at(1, 1, 0) = v[3];
  const RgbImage d = downscale_half(img);
  CHECK(d.width() == 2);
  CHECK(d.height() == 1);
  CHECK(d.at(0, 0, 0) == 16);  // (62 + 2) / 4
  CHECK_THROWS_AS(downscale_half(RgbImage(5, 4)), Error);
}

TEST_CASE("default crop grid on a 1024x768 image") {
  const RgbImage img(1024, 768, 128);
  const auto crops = extract_random_crops(img, CropSpec{}, "img", 0);
  REQUIRE(crops.size() == 40);
  int n400 = 0, n650 = 0;
  for (const auto& c : crops) {
    (c.size == 400 ? n400 : n650) += 1;
    CHECK(c.x + c.size <= 1024);
    CHECK(c.y + c.size <= 768);
    CHECK(c.pixels.width() == c.size);
  }
  CHECK(n400 == 20);
  CHECK(n650 == 20);
}

TEST_CASE("crop origins are deterministic and stay in bounds") {
  CounterRng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const int w = 20 + static_cast<int>(rng.below(300));
    const int h = 20 + static_cast<int>(rng.below(300));
    const int size = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min(w, h))));
    const int ordinal = static_cast<int>(rng.below(50));
    const auto o = crop_origin(w, h, size, trial, "id", trial % 3, ordinal);
    REQUIRE(o.x >= 0);
    REQUIRE(o.y >= 0);
    REQUIRE(o.x + size <= w);
    REQUIRE(o.y + size <= h);
    CHECK(o == crop_origin(w, h, size, trial, "id", trial % 3, ordinal));
  }
  // Crops taken at a full-size square can only start at the corner.
  CHECK(crop_origin(30, 30, 30, 1, "x", 0, 0) == Origin{0, 0});
}

TEST_CASE("crop draws depend on every key component") {
  const RgbImage img = synth::tissue_image(200, 150, Label::Benign, 1);
  CropSpec spec{{40}, 8, 3};
  const auto a = extract_random_crops(img, spec, "img", 0);
  const auto b = extract_random_crops(img, spec, "img", 0);
  const auto c = extract_random_crops(img, spec, "img", 1);
  const auto d = extract_random_crops(img, spec, "other", 0);
  int same_c = 0, same_d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].pixels == b[i].pixels);
    CHECK(a[i].ordinal == static_cast<int>(i));
    same_c += a[i].x == c[i].x && a[i].y == c[i].y;
    same_d += a[i].x == d[i].x && a[i].y == d[i].y;
  }
  CHECK(same_c < 3);
  CHECK(same_d < 3);
  spec.sizes = {151};
  CHECK_THROWS_AS(extract_random_crops(img, spec, "img", 0), Error);
}
