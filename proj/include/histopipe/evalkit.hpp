#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "histopipe/label.hpp"
#include "histopipe/patches.hpp"

namespace histopipe::eval {

struct FoldAssignment {
  int k = 0;
  std::map<std::string, int> fold_of;

  /// Throws FoldCoverageError for an unassigned image.
  int fold(const std::string& image_id) const;
};

/// Deals each class's images, ordered by a seeded hash of their id, into k
/// folds round-robin. Throws TooFewImagesPerClass.
FoldAssignment stratified_group_kfold(const patches::DatasetManifest& manifest, int k,
                                      std::uint64_t seed);

using Proba = std::array<double, kNumClasses>;

/// Index of the largest entry; ties go to the lowest index.
int argmax(std::span<const double> values);

struct PredictionRecord {
  std::string image_id;
  Label true_label = Label::Normal;
  Proba proba{};
  Label predicted_label = Label::Normal;

  static PredictionRecord from_proba(std::string image_id, Label truth, const Proba& proba);
};

/// Percent of records whose prediction matches the truth. Throws EmptyRecords.
double accuracy(std::span<const PredictionRecord> records);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Mean and population standard deviation. Throws EmptyValues.
MeanStd mean_std(std::span<const double> values);
/// mean_std rounded to one decimal, half to even, for reporting.
MeanStd aggregate_mean_std(std::span<const double> values);
double round1(double value);

struct ConfusionMatrix {
  /// counts[truth][prediction]
  std::array<std::array<int, kNumClasses>, kNumClasses> counts{};
  int total() const;
};

/// Throws EmptyRecords.
ConfusionMatrix confusion_matrix(std::span<const PredictionRecord> records);

struct BinaryRecord {
  std::string image_id;
  bool positive = false;
  double score = 0.0;
};

/// Carcinoma (in situ + invasive) against the rest; score is the summed
/// probability of the two carcinoma classes.
std::vector<BinaryRecord> binarize_carcinoma(std::span<const PredictionRecord> records);

/// Percent of records whose 4-class argmax lands on the correct side of the
/// carcinoma split.
double collapsed_binary_accuracy(std::span<const PredictionRecord> records);
/// Percent correct when score >= threshold is called carcinoma.
double thresholded_binary_accuracy(std::span<const BinaryRecord> records, double threshold);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

struct RocCurve {
  /// Thresholds descending; first point (0, 0, +inf), last (1, 1, min score).
  std::vector<RocPoint> points;
  double auc = 0.0;
  int positives = 0;
  int negatives = 0;
};

/// Throws SingleClassRecords.
RocCurve roc_curve(std::span<const BinaryRecord> records);

struct OperatingPoint {
  double threshold = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
};

/// Sensitivity and specificity in percent when score >= threshold is positive.
OperatingPoint operating_point(const RocCurve& curve, double threshold);

}  // namespace histopipe::eval
