#include <doctest.h>

#include <nlohmann/json.hpp>

#include "histopipe/error.hpp"
#include "histopipe/report.hpp"
#include "test_support.hpp"

using namespace histopipe;
using namespace histopipe::eval;
using namespace histopipe::report;

namespace {

constexpr int kPerFold = 200;

// Records whose per-fold accuracy equals `row` exactly. Every wrong prediction
// moves a carcinoma case to "normal" so the binary metrics see it too.
std::vector<PredictionRecord> records_for_row(const std::vector<double>& row, FoldAssignment& folds) {
  std::vector<PredictionRecord> out;
  folds.k = static_cast<int>(row.size());
  for (int f = 0; f < folds.k; ++f) {
    const int correct = static_cast<int>(row[static_cast<std::size_t>(f)] * kPerFold / 100.0 + 0.5);
    for (int i = 0; i < kPerFold; ++i) {
      const std::string id = "f" + std::to_string(f) + "_" + std::to_string(i);
      folds.fold_of[id] = f;
      const Label truth = kAllLabels[static_cast<std::size_t>(i % 4)];
      Proba p{0.05, 0.05, 0.05, 0.05};
      const int target = i < correct ? index_of(truth) : (index_of(truth) + 2) % 4;
      p[static_cast<std::size_t>(target)] = 0.85;
      out.push_back(PredictionRecord::from_proba(id, truth, p));
    }
  }
  return out;
}

const std::vector<double> kFusedRow{92.5, 82.5, 87.5, 87.5, 87.5, 90.0, 85.0, 87.5, 87.5, 85.0};
const std::vector<double> kResnet400Row{92.0, 77.5, 86.5, 87.5, 79.5, 84.0, 85.0, 83.0, 84.0, 82.5};

MetricsReport table1_report() {
  FoldAssignment folds;
  const auto fused = records_for_row(kFusedRow, folds);
  FoldAssignment same;
  const auto resnet = records_for_row(kResnet400Row, same);
  const double setpoints[] = {0.33, 0.5};
  return compute_metrics(fused, {{"resnet50_400", resnet}}, folds, setpoints);
}

}  // namespace

TEST_CASE("display names follow the table labels") {
  CHECK(display_name("resnet50_400") == "ResNet-400");
  CHECK(display_name("inception_v3_650") == "Inception-650");
  CHECK(display_name("vgg16_400") == "VGG-400");
  CHECK(display_name("stub_40") == "Stub-40");
  CHECK(display_name("fused") == "Fused");
}

TEST_CASE("per-fold metrics reproduce the reference accuracy rows and the CSV reads back") {
  const MetricsReport m = table1_report();
  CHECK(m.k == 10);
  CHECK(m.num_images == 2000);
  CHECK(m.fused.fold_accuracy == kFusedRow);
  CHECK(m.fused.mean == 87.2);
  CHECK(m.fused.std == 2.6);

  const auto rows = parse_table1_csv(table1_csv(m));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].name == "ResNet-400");
  CHECK(rows[0].fold_accuracy == kResnet400Row);
  CHECK(rows[0].mean == 84.2);
  CHECK(rows.back().name == "Fused");
  CHECK(rows.back().mean == 87.2);
  CHECK(rows.back().std == 2.6);
  CHECK(table1_csv(m).rfind("model,fold_1,", 0) == 0);
}

TEST_CASE("confusion and binary metrics are consistent with the records") {
  const MetricsReport m = table1_report();
  CHECK(m.confusion.total() == 2000);
  for (int r = 0; r < 4; ++r) {
    int row = 0;
    for (const int c : m.confusion.counts[static_cast<std::size_t>(r)]) row += c;
    CHECK(row == 500);
  }
  // Errors always cross the carcinoma boundary, so the binary accuracy matches the 4-class one.
  CHECK(m.binary_collapsed.fold_accuracy == kFusedRow);
  CHECK(m.binary_threshold.fold_accuracy == kFusedRow);
  REQUIRE(m.operating_points.size() == 2);
  CHECK(m.operating_points[0].threshold == 0.33);
  CHECK(m.roc.positives == 1000);
}

TEST_CASE("metrics JSON round trip") {
  const MetricsReport m = table1_report();
  const auto j = to_json(m);
  CHECK(j.at("roc").at("points").at(0).at("threshold").is_null());
  const std::string text = j.dump();
  const MetricsReport back = metrics_from_json(nlohmann::json::parse(text));
  CHECK(back.fused.fold_accuracy == m.fused.fold_accuracy);
  CHECK(back.groups.size() == 1);
  CHECK(back.confusion.counts == m.confusion.counts);
  CHECK(back.roc.auc == m.roc.auc);
  CHECK(back.roc.points.size() == m.roc.points.size());
  CHECK(std::isinf(back.roc.points.front().threshold));
  CHECK(to_json(back).dump() == text);
  CHECK_THROWS_AS(metrics_from_json(nlohmann::json::object()), Error);
}

TEST_CASE("report files") {
  const MetricsReport m = table1_report();
  testing::TempDir dir("hp_report");
  write_report(m, dir.path());
  for (const char* name : {"table1.csv", "roc.csv", "roc.svg", "confusion.csv"}) {
    CHECK(std::filesystem::exists(dir.path() / name));
  }
  const auto roc = testing::read_text(dir.path() / "roc.csv");
  CHECK(roc.rfind("fpr,tpr,threshold\n0,0,inf\n", 0) == 0);
  const auto svg = testing::read_text(dir.path() / "roc.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("AUC") != std::string::npos);
  const auto cm = testing::read_text(dir.path() / "confusion.csv");
  CHECK(cm.rfind("truth\\prediction,normal,benign,in_situ,invasive\n", 0) == 0);
}

TEST_CASE("format_number is shortest round-trip") {
  CHECK(format_number(87.2) == "87.2");
  CHECK(format_number(0.0) == "0");
  CHECK(format_number(0.1 + 0.2) == "0.30000000000000004");
}
