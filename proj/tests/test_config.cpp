#include <doctest.h>

#include "histopipe/config.hpp"
#include "histopipe/error.hpp"
#include "test_support.hpp"

using namespace histopipe;
using namespace histopipe::pipeline;
namespace fs = std::filesystem;

namespace {

const char* kMinimal = R"(
labels_file = "data/labels.csv"

[[encoders]]
id = "stub"
)";

ErrorCode parse_error(const std::string& text, std::vector<std::string> overrides = {}) {
  try {
    parse_config(text, "/base", overrides);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("defaults follow the standard grid") {
  const auto c = parse_config(kMinimal, "/base");
  CHECK(c.k == 10);
  CHECK(c.seeds.size() == 5);
  CHECK(c.extraction.n_augmentations == 50);
  CHECK(c.extraction.crops.sizes == std::vector<int>{400, 650});
  CHECK(c.extraction.crops.crops_per_size == 20);
  CHECK(c.extraction.pool.p == 3.0);
  CHECK(c.gbdt.num_classes == 4);
  CHECK(c.setpoints == std::vector<double>{0.33, 0.50});
  CHECK(c.labels_file == fs::path("/base/data/labels.csv"));
  CHECK(c.dataset_root == fs::path("/base"));
  CHECK(c.output_dir == fs::path("/base/artifacts"));
  CHECK(c.bank_size() == 10u * 5u * 2u * 1u);
  CHECK(c.descriptors_per_image() == 100u);
}

TEST_CASE("the three-encoder grid gives 300 descriptors per image and 4 sizes give 600 models") {
  std::string text = R"(
labels_file = "l.csv"
[[encoders]]
id = "resnet50"
model = "r.onnx"
[[encoders]]
id = "inception_v3"
model = "i.onnx"
[[encoders]]
id = "vgg16"
model = "v.onnx"
)";
  const auto c = parse_config(text, "/m");
  CHECK(c.descriptors_per_image() == 300u);
  CHECK(c.bank_size() == 300u);
  CHECK(c.encoders[0].model_path == "/m/r.onnx");
  CHECK(c.encoders[2].descriptor_len == 1408u);
  const auto four = parse_config(text, "/m", {"crops.full_scale_sizes=[800, 1300]"});
  CHECK(four.bank_size() == 600u);
}

TEST_CASE("overrides reach nested tables and array elements") {
  const auto c = parse_config(kMinimal, "/b",
                              {"k=3", "gbdt.learning_rate=0.05", "encoders.0.descriptor_len=16",
                               "output_dir=out dir", "seeds=[7]", "seed=11"});
  CHECK(c.k == 3);
  CHECK(c.gbdt.learning_rate == 0.05);
  CHECK(c.encoders[0].descriptor_len == 16u);
  CHECK(c.output_dir == fs::path("/b/out dir"));
  CHECK(c.seeds == std::vector<std::uint64_t>{7});
  CHECK(c.seed == 11u);
  CHECK(c.extraction.seed == 11u);
  CHECK(c.extraction.crops.seed == 11u);
}

TEST_CASE("invalid configurations are ConfigError") {
  CHECK(parse_error("labels_file = 'x'\n") == ErrorCode::ConfigError);
  CHECK(parse_error(std::string(kMinimal) + "bogus = 1\n") == ErrorCode::ConfigError);
  CHECK(parse_error(kMinimal, {"gbdt.depth=3"}) == ErrorCode::ConfigError);
  CHECK(parse_error(kMinimal, {"k=1"}) == ErrorCode::ConfigError);
  CHECK(parse_error(kMinimal, {"n_augmentations=0"}) == ErrorCode::ConfigError);
  CHECK(parse_error(kMinimal, {"seeds=[]"}) == ErrorCode::ConfigError);
  CHECK(parse_error(kMinimal, {"k='ten'"}) == ErrorCode::ConfigError);
  CHECK(parse_error(kMinimal, {"encoders.4.id=stub"}) == ErrorCode::ConfigError);
  CHECK(parse_error(kMinimal, {"noequals"}) == ErrorCode::ConfigError);
  CHECK(parse_error("labels_file = \"x\"\n[[encoders]]\nid = \"resnet50\"\n") == ErrorCode::ConfigError);
  CHECK(parse_error("labels_file = \"x\"\n[[encoders]]\nid = \"alexnet\"\n") == ErrorCode::ConfigError);
  CHECK(parse_error("labels_file = [\n") == ErrorCode::ConfigError);
  CHECK(parse_error(kMinimal, {"crops.full_scale_sizes=[400]"}) == ErrorCode::ConfigError);
  CHECK(parse_error(kMinimal, {"setpoints=[1.5]"}) == ErrorCode::ConfigError);
}

TEST_CASE("load_config resolves paths against the file and round-trips through to_toml") {
  testing::TempDir dir("hp_cfg");
  testing::write_text(dir.path() / "sub" / "run.toml", kMinimal);
  try {
    load_config(dir.path() / "absent.toml");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingFile);
  }
  const auto c = load_config(dir.path() / "sub" / "run.toml", {"gbdt.max_leaves=12"});
  CHECK(c.labels_file == dir.path() / "sub" / "data" / "labels.csv");
  const auto again = parse_config(to_toml(c), "/elsewhere");
  CHECK(again.labels_file == c.labels_file);
  CHECK(again.gbdt == c.gbdt);
  CHECK(again.extraction.crops.sizes == c.extraction.crops.sizes);
  CHECK(again.encoders.size() == 1);
  for (int i = 0; i < 3; ++i) {
    CHECK(again.extraction.stain.reference_stains.eosin()[i] ==
          doctest::Approx(c.extraction.stain.reference_stains.eosin()[i]).epsilon(1e-14));
  }
}
