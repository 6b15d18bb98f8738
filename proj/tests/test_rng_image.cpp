#include <doctest.h>

#include <set>

#include "../src/binary_io.hpp"
#include "histopipe/error.hpp"
#include "histopipe/image.hpp"
#include "histopipe/rng.hpp"
#include "test_support.hpp"

using namespace histopipe;

namespace {

RgbImage numbered(int w, int h) {
  RgbImage img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>((x * 7 + y * 13 + c * 29) % 256);
    }
  }
  return img;
}

}  // namespace

TEST_CASE("counter rng draws are a pure function of key and position") {
  CounterRng a(make_key(7, 1, 2));
  CounterRng b(make_key(7, 1, 2));
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(make_key(7, 1, 2) != make_key(7, 2, 1));
  CHECK(make_key(7, 1, 2) != make_key(8, 1, 2));
}

TEST_CASE("counter rng uniform and below stay in range") {
  CounterRng rng(42);
  double sum = 0.0;
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    const auto b = rng.below(7);
    REQUIRE(b < 7);
    seen.insert(b);
  }
  CHECK(sum / 20000.0 == doctest::Approx(0.5).epsilon(0.02));
  CHECK(seen.size() == 7);
  CHECK(rng.below(1) == 0);
}

TEST_CASE("fnv1a64 matches the published test vector") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("crop copies the requested window and rejects out-of-bounds windows") {
  const RgbImage img = numbered(10, 6);
  const RgbImage c = img.crop(3, 2, 4, 3);
  CHECK(c.width() == 4);
  CHECK(c.height() == 3);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 4; ++x) CHECK(c.at(x, y, 1) == img.at(x + 3, y + 2, 1));
  }
  CHECK_THROWS_AS(img.crop(7, 0, 4, 3), Error);
  CHECK_THROWS_AS(img.crop(0, 4, 2, 3), Error);
}

TEST_CASE("flips and quarter turns follow their pixel mappings") {
  const RgbImage img = numbered(5, 3);
  const RgbImage fh = flip_horizontal(img);
  const RgbImage fv = flip_vertical(img);
  const RgbImage r1 = rotate90(img, 1);
  const RgbImage r3 = rotate90(img, 3);
  REQUIRE(r1.width() == 3);
  REQUIRE(r1.height() == 5);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 5; ++x) {
      CHECK(fh.at(4 - x, y, 0) == img.at(x, y, 0));
      CHECK(fv.at(x, 2 - y, 0) == img.at(x, y, 0));
      // Counter-clockwise: the top-right corner moves to the top-left.
      CHECK(r1.at(y, 4 - x, 2) == img.at(x, y, 2));
      CHECK(r3.at(2 - y, x, 2) == img.at(x, y, 2));
    }
  }
  CHECK(flip_horizontal(fh) == img);
  CHECK(rotate90(rotate90(rotate90(r1, 1), 1), 1) == img);
  CHECK(rotate90(img, 2) == flip_vertical(flip_horizontal(img)));
  CHECK(rotate90(img, -1) == r3);
}

TEST_CASE("png round trip is lossless and bad files are reported") {
  testing::TempDir dir("hp_png");
  const RgbImage img = numbered(17, 9);
  write_png(dir.path() / "a.png", img);
  CHECK(read_image(dir.path() / "a.png") == img);

  testing::write_text(dir.path() / "junk.png", "not an image");
  try {
    read_image(dir.path() / "junk.png");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnreadableImage);
  }
}

TEST_CASE("byte reader round-trips little-endian values and rejects overruns") {
  detail::ByteWriter w;
  w.u8(0xab);
  w.u32(0x01020304u);
  w.i32(-5);
  w.f32(1.5f);
  w.f64(-0.1);
  w.u64(0x1122334455667788ULL);
  CHECK(static_cast<unsigned char>(w.buffer()[1]) == 0x04);

  detail::ByteReader r(w.buffer().data(), w.buffer().size(), ErrorCode::CorruptModel);
  CHECK(r.u8() == 0xab);
  CHECK(r.u32() == 0x01020304u);
  CHECK(r.i32() == -5);
  CHECK(r.f32() == 1.5f);
  CHECK(r.f64() == -0.1);
  CHECK(r.u64() == 0x1122334455667788ULL);
  CHECK(r.remaining() == 0);
  try {
    r.u8();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CorruptModel);
  }
}
