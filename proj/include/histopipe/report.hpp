#pragma once

#include <filesystem>
#include <map>
#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

#include "histopipe/evalkit.hpp"

namespace histopipe::report {

/// Per-fold accuracies of one model group (one row of the accuracy table).
struct GroupMetrics {
  std::string name;
  std::vector<double> fold_accuracy;
  /// Rounded to one decimal, as reported.
  double mean = 0.0;
  double std = 0.0;
  /// Accuracy over all records at once.
  double overall = 0.0;
};

struct MetricsReport {
  int k = 0;
  int num_images = 0;
  GroupMetrics fused;
  std::vector<GroupMetrics> groups;
  eval::ConfusionMatrix confusion;
  /// Carcinoma vs non-carcinoma from the 4-class argmax.
  GroupMetrics binary_collapsed;
  /// Carcinoma vs non-carcinoma from the summed score at threshold 0.5.
  GroupMetrics binary_threshold;
  eval::RocCurve roc;
  std::vector<eval::OperatingPoint> operating_points;
};

GroupMetrics group_metrics(const std::string& name, std::span<const eval::PredictionRecord> records,
                           const eval::FoldAssignment& folds);

MetricsReport compute_metrics(
    std::span<const eval::PredictionRecord> fused,
    const std::vector<std::pair<std::string, std::vector<eval::PredictionRecord>>>& groups,
    const eval::FoldAssignment& folds, std::span<const double> setpoints);

nlohmann::json to_json(const MetricsReport& m);
/// Throws MissingArtifacts when fields are absent.
MetricsReport metrics_from_json(const nlohmann::json& j);

/// Human-readable row label, e.g. "ResNet-400" for group "resnet50_400".
std::string display_name(const std::string& group);

/// Accuracy table layout: model, fold_1..fold_k, mean, std; fused row last.
std::string table1_csv(const MetricsReport& m);
/// Rows of a table1_csv document, in file order.
std::vector<GroupMetrics> parse_table1_csv(const std::string& text);

std::string roc_csv(const eval::RocCurve& curve);
/// ROC plot with the operating points marked and the AUC annotated.
std::string roc_svg(const eval::RocCurve& curve, std::span<const eval::OperatingPoint> points);
/// Rows are ground truth, columns predictions.
std::string confusion_csv(const eval::ConfusionMatrix& m);

/// Writes table1.csv, roc.csv, roc.svg and confusion.csv into `dir`.
void write_report(const MetricsReport& m, const std::filesystem::path& dir);

/// Shortest decimal text that parses back to the same double.
std::string format_number(double v);

}  // namespace histopipe::report
