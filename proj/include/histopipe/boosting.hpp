#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace histopipe::boosting {

struct GbdtParams {
  int num_rounds = 200;
  double learning_rate = 0.1;
  int max_leaves = 31;
  int min_samples_leaf = 5;
  double feature_fraction = 0.8;
  double bagging_fraction = 0.8;
  int num_bins = 255;
  double lambda_l2 = 1.0;
  /// Smallest hessian sum a child may carry.
  double min_child_hessian = 1e-3;
  int num_classes = 4;
  std::uint64_t seed = 0;

  /// Throws InvalidArgument.
  void validate() const;
  friend bool operator==(const GbdtParams&, const GbdtParams&) = default;
};

/// Internal nodes have feature >= 0 and send x <= threshold left; leaves have
/// feature == -1 and carry value.
struct TreeNode {
  std::int32_t feature = -1;
  double threshold = 0.0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const float> row) const;
  int num_leaves() const;
};

struct GbdtModel {
  GbdtParams params;
  std::size_t num_features = 0;
  std::vector<double> base_scores;
  /// Round-major: trees[round * num_classes + class].
  std::vector<DecisionTree> trees;

  int num_classes() const noexcept { return static_cast<int>(base_scores.size()); }
  const DecisionTree& tree(int round, int cls) const {
    return trees[static_cast<std::size_t>(round) * base_scores.size() + static_cast<std::size_t>(cls)];
  }
};

/// Row-major float features with one label and group id per row.
struct TrainingMatrix {
  std::size_t num_features = 0;
  std::vector<float> values;
  std::vector<int> labels;
  std::vector<std::string> group_ids;

  std::size_t num_rows() const noexcept { return labels.size(); }
  std::span<const float> row(std::size_t i) const {
    return {values.data() + i * num_features, num_features};
  }
  void add_row(std::span<const float> features, int label, std::string group_id);
};

/// Per-round diagnostics of a fit.
struct FitTrace {
  /// Training multiclass log-loss before the first round, then after each round.
  std::vector<double> log_loss;
};

/// Leaf-wise histogram GBDT with a softmax objective.
/// Throws EmptyData, SingleClassData, InvalidArgument.
GbdtModel fit(const TrainingMatrix& data, const GbdtParams& params, FitTrace* trace = nullptr);

/// Raw class scores (base score + tree outputs) for one row.
std::vector<double> predict_scores(const GbdtModel& model, std::span<const float> row);

/// Probabilities for `rows` (row-major, `row_len` features each), num_classes
/// values per row. Throws FeatureCountMismatch.
std::vector<double> predict_proba(const GbdtModel& model, std::span<const float> rows,
                                  std::size_t row_len);

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> scores);

/// Quantile bin boundaries of one feature column. When the column has at most
/// `num_bins` distinct values the boundaries are the midpoints between them.
std::vector<double> bin_thresholds(std::vector<float> column, int num_bins);

inline constexpr char kModelMagic[9] = "HPGBDT01";
inline constexpr std::uint8_t kModelVersion = 1;

std::vector<char> serialize_model(const GbdtModel& model);
/// Throws CorruptModel or VersionMismatch.
GbdtModel deserialize_model(std::span<const char> bytes);

}  // namespace histopipe::boosting
