#include "histopipe/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "histopipe/error.hpp"
#include "histopipe/rng.hpp"

namespace histopipe::eval {

int FoldAssignment::fold(const std::string& image_id) const {
  const auto it = fold_of.find(image_id);
  if (it == fold_of.end()) {
    throw Error(ErrorCode::FoldCoverageError, "image '" + image_id + "' has no fold");
  }
  return it->second;
}

FoldAssignment stratified_group_kfold(const patches::DatasetManifest& manifest, int k,
                                      std::uint64_t seed) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  std::array<std::vector<std::pair<std::uint64_t, std::string>>, kNumClasses> per_class;
  for (const auto& rec : manifest.records) {
    per_class[static_cast<std::size_t>(index_of(rec.label))].emplace_back(
        make_key(seed, fnv1a64(rec.image_id)), rec.image_id);
  }
  FoldAssignment out;
  out.k = k;
  int next = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    auto& ids = per_class[static_cast<std::size_t>(c)];
    if (ids.empty()) continue;
    if (static_cast<int>(ids.size()) < k) {
      throw Error(ErrorCode::TooFewImagesPerClass,
                  "class '" + std::string(to_string(kAllLabels[static_cast<std::size_t>(c)])) +
                      "' has " + std::to_string(ids.size()) + " images, fewer than k=" +
                      std::to_string(k));
    }
    std::sort(ids.begin(), ids.end());
    // Continuing the deal where the previous class stopped keeps fold sizes
    // balanced overall, not only per class.
    for (const auto& [hash, id] : ids) {
      out.fold_of[id] = next;
      next = (next + 1) % k;
    }
  }
  return out;
}

int argmax(std::span<const double> values) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(values.size()); ++i) {
    if (values[static_cast<std::size_t>(i)] > values[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

PredictionRecord PredictionRecord::from_proba(std::string image_id, Label truth, const Proba& proba) {
  return {std::move(image_id), truth, proba, kAllLabels[static_cast<std::size_t>(argmax(proba))]};
}

double accuracy(std::span<const PredictionRecord> records) {
  if (records.empty()) throw Error(ErrorCode::EmptyRecords, "accuracy of no records");
  const auto correct = std::count_if(records.begin(), records.end(), [](const PredictionRecord& r) {
    return r.true_label == r.predicted_label;
  });
  return 100.0 * static_cast<double>(correct) / static_cast<double>(records.size());
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::EmptyValues, "mean of no values");
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  for (const double v : values) sum += v;
  const double mean = sum / n;
  double ss = 0.0;
  for (const double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

double round1(double value) { return std::nearbyint(value * 10.0) / 10.0; }

MeanStd aggregate_mean_std(std::span<const double> values) {
  const MeanStd raw = mean_std(values);
  return {round1(raw.mean), round1(raw.std)};
}

int ConfusionMatrix::total() const {
  int t = 0;
  for (const auto& row : counts) {
    for (const int c : row) t += c;
  }
  return t;
}

ConfusionMatrix confusion_matrix(std::span<const PredictionRecord> records) {
  if (records.empty()) throw Error(ErrorCode::EmptyRecords, "confusion matrix of no records");
  ConfusionMatrix m;
  for (const auto& r : records) {
    ++m.counts[static_cast<std::size_t>(index_of(r.true_label))]
              [static_cast<std::size_t>(index_of(r.predicted_label))];
  }
  return m;
}

std::vector<BinaryRecord> binarize_carcinoma(std::span<const PredictionRecord> records) {
  std::vector<BinaryRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    out.push_back({r.image_id, is_carcinoma(r.true_label),
                   r.proba[static_cast<std::size_t>(index_of(Label::InSitu))] +
                       r.proba[static_cast<std::size_t>(index_of(Label::Invasive))]});
  }
  return out;
}

double collapsed_binary_accuracy(std::span<const PredictionRecord> records) {
  if (records.empty()) throw Error(ErrorCode::EmptyRecords, "accuracy of no records");
  const auto correct = std::count_if(records.begin(), records.end(), [](const PredictionRecord& r) {
    return is_carcinoma(r.true_label) == is_carcinoma(r.predicted_label);
  });
  return 100.0 * static_cast<double>(correct) / static_cast<double>(records.size());
}

double thresholded_binary_accuracy(std::span<const BinaryRecord> records, double threshold) {
  if (records.empty()) throw Error(ErrorCode::EmptyRecords, "accuracy of no records");
  const auto correct = std::count_if(records.begin(), records.end(), [&](const BinaryRecord& r) {
    return (r.score >= threshold) == r.positive;
  });
  return 100.0 * static_cast<double>(correct) / static_cast<double>(records.size());
}

RocCurve roc_curve(std::span<const BinaryRecord> records) {
  RocCurve curve;
  for (const auto& r : records) (r.positive ? curve.positives : curve.negatives) += 1;
  if (curve.positives == 0 || curve.negatives == 0) {
    throw Error(ErrorCode::SingleClassRecords, "ROC needs both positive and negative records");
  }
  std::vector<std::pair<double, bool>> sorted;
  sorted.reserve(records.size());
  for (const auto& r : records) sorted.emplace_back(r.score, r.positive);
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  const double p = curve.positives;
  const double n = curve.negatives;
  curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  int tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    const double threshold = sorted[i].first;
    // All records sharing a score move together, so ties form one diagonal segment.
    while (i < sorted.size() && sorted[i].first == threshold) {
      (sorted[i].second ? tp : fp) += 1;
      ++i;
    }
    curve.points.push_back({fp / n, tp / p, threshold});
  }
  double area = 0.0;
  for (std::size_t j = 1; j < curve.points.size(); ++j) {
    const auto& a = curve.points[j - 1];
    const auto& b = curve.points[j];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
  }
  curve.auc = area;
  return curve;
}

OperatingPoint operating_point(const RocCurve& curve, double threshold) {
  // Points are ordered by descending threshold; the last one at or above
  // `threshold` counts exactly the records with score >= threshold.
  const RocPoint* chosen = &curve.points.front();
  for (const auto& pt : curve.points) {
    if (pt.threshold >= threshold) chosen = &pt;
  }
  return {threshold, 100.0 * chosen->tpr, 100.0 * (1.0 - chosen->fpr)};
}

}  // namespace histopipe::eval
