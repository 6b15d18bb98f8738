#include "histopipe/boosting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>

#include "binary_io.hpp"
#include "histopipe/error.hpp"
#include "histopipe/kernels.hpp"
#include "histopipe/rng.hpp"

namespace histopipe::boosting {

namespace {

constexpr double kMinGain = 1e-12;
// Candidate gains closer than this (relative) count as ties, so the lower
// feature / threshold wins regardless of summation noise.
constexpr double kGainTieTolerance = 1e-10;
constexpr double kMinHessian = 1e-16;
constexpr double kMinPrior = 1e-6;
constexpr std::uint64_t kBagStream = 0xBA66;
constexpr std::uint64_t kFeatureStream = 0xFEA7;

struct SplitCandidate {
  double gain = -1.0;
  int feature = -1;
  int bin = -1;
};

struct Leaf {
  int node = 0;
  std::vector<std::uint32_t> rows;
  std::vector<kernels::HistBin> hist;
  double grad_sum = 0.0;
  double hess_sum = 0.0;
  SplitCandidate best;
};

struct Binned {
  std::vector<std::vector<double>> thresholds;
  std::vector<std::uint8_t> bins;  // column-major
  std::size_t num_rows = 0;
};

Binned bin_matrix(const TrainingMatrix& data, int num_bins) {
  const std::size_t n = data.num_rows();
  const std::size_t nf = data.num_features;
  Binned b;
  b.num_rows = n;
  b.thresholds.resize(nf);
  b.bins.resize(n * nf);
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t f = 0; f < static_cast<std::ptrdiff_t>(nf); ++f) {
    std::vector<float> col(n);
    for (std::size_t r = 0; r < n; ++r) col[r] = data.values[r * nf + static_cast<std::size_t>(f)];
    auto thr = bin_thresholds(col, num_bins);
    std::uint8_t* out = b.bins.data() + static_cast<std::size_t>(f) * n;
    for (std::size_t r = 0; r < n; ++r) {
      const auto it = std::lower_bound(thr.begin(), thr.end(), static_cast<double>(col[r]));
      out[r] = static_cast<std::uint8_t>(it - thr.begin());
    }
    b.thresholds[static_cast<std::size_t>(f)] = std::move(thr);
  }
  return b;
}

double leaf_objective(double g, double h, double lambda) { return g * g / (h + lambda); }

SplitCandidate best_split(const Leaf& leaf, std::span<const int> features, const Binned& binned,
                          int num_bins, const GbdtParams& p) {
  SplitCandidate best;
  const double parent = leaf_objective(leaf.grad_sum, leaf.hess_sum, p.lambda_l2);
  const auto total_count = static_cast<std::uint32_t>(leaf.rows.size());
  for (std::size_t k = 0; k < features.size(); ++k) {
    const int f = features[k];
    const int nb = static_cast<int>(binned.thresholds[static_cast<std::size_t>(f)].size()) + 1;
    const kernels::HistBin* h = leaf.hist.data() + k * static_cast<std::size_t>(num_bins);
    double gl = 0.0, hl = 0.0;
    std::uint32_t cl = 0;
    for (int bin = 0; bin + 1 < nb; ++bin) {
      // An empty bin repeats the previous candidate, which already won any tie.
      if (h[bin].count == 0) continue;
      gl += h[bin].grad;
      hl += h[bin].hess;
      cl += h[bin].count;
      const std::uint32_t cr = total_count - cl;
      if (cl < static_cast<std::uint32_t>(p.min_samples_leaf)) continue;
      if (cr < static_cast<std::uint32_t>(p.min_samples_leaf)) break;
      const double gr = leaf.grad_sum - gl;
      const double hr = leaf.hess_sum - hl;
      if (hl < p.min_child_hessian || hr < p.min_child_hessian) continue;
      const double gain =
          leaf_objective(gl, hl, p.lambda_l2) + leaf_objective(gr, hr, p.lambda_l2) - parent;
      if (gain <= kMinGain) continue;
      if (best.feature < 0 || gain > best.gain + kGainTieTolerance * std::max(1.0, best.gain)) {
        best = {gain, f, bin};
      }
    }
  }
  return best;
}

void fill_histogram(Leaf& leaf, const Binned& binned, std::span<const double> grad,
                    std::span<const double> hess, std::span<const int> features, int num_bins) {
  leaf.hist.assign(features.size() * static_cast<std::size_t>(num_bins), kernels::HistBin{});
  kernels::omp::build_histograms({binned.bins, binned.num_rows}, leaf.rows, grad, hess, features,
                                 num_bins, leaf.hist);
}

void sum_gradients(Leaf& leaf, std::span<const double> grad, std::span<const double> hess) {
  leaf.grad_sum = 0.0;
  leaf.hess_sum = 0.0;
  for (const std::uint32_t r : leaf.rows) {
    leaf.grad_sum += grad[r];
    leaf.hess_sum += hess[r];
  }
}

/// First `count` entries of a keyed partial Fisher-Yates shuffle of [0, n), sorted.
template <typename T>
std::vector<T> sample_indices(std::size_t n, std::size_t count, std::uint64_t key) {
  std::vector<T> idx(n);
  std::iota(idx.begin(), idx.end(), T{0});
  if (count >= n) return idx;
  CounterRng rng(key);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::size_t fraction_count(std::size_t n, double fraction) {
  const auto c = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5));
  return std::clamp<std::size_t>(c, 1, n);
}

DecisionTree grow_tree(const Binned& binned, std::span<const double> grad,
                       std::span<const double> hess, std::vector<std::uint32_t> rows,
                       std::vector<int> features, const GbdtParams& p) {
  DecisionTree tree;
  tree.nodes.emplace_back();

  std::vector<Leaf> leaves;
  leaves.push_back(Leaf{0, std::move(rows), {}, 0.0, 0.0, {}});
  sum_gradients(leaves[0], grad, hess);
  fill_histogram(leaves[0], binned, grad, hess, features, p.num_bins);
  leaves[0].best = best_split(leaves[0], features, binned, p.num_bins, p);

  while (static_cast<int>(leaves.size()) < p.max_leaves) {
    // Best-first: the leaf with the largest gain; earlier leaves win ties.
    int pick = -1;
    for (int i = 0; i < static_cast<int>(leaves.size()); ++i) {
      if (leaves[i].best.feature < 0) continue;
      if (pick < 0 || leaves[i].best.gain > leaves[pick].best.gain) pick = i;
    }
    if (pick < 0) break;

    Leaf parent = std::move(leaves[pick]);
    const int f = parent.best.feature;
    const int split_bin = parent.best.bin;
    const std::uint8_t* col = binned.bins.data() + static_cast<std::size_t>(f) * binned.num_rows;

    Leaf left, right;
    for (const std::uint32_t r : parent.rows) {
      (col[r] <= split_bin ? left.rows : right.rows).push_back(r);
    }
    sum_gradients(left, grad, hess);
    sum_gradients(right, grad, hess);

    const bool left_small = left.rows.size() <= right.rows.size();
    Leaf& small = left_small ? left : right;
    Leaf& large = left_small ? right : left;
    fill_histogram(small, binned, grad, hess, features, p.num_bins);
    large.hist = std::move(parent.hist);
    for (std::size_t i = 0; i < large.hist.size(); ++i) {
      large.hist[i].grad -= small.hist[i].grad;
      large.hist[i].hess -= small.hist[i].hess;
      large.hist[i].count -= small.hist[i].count;
    }

    TreeNode& node = tree.nodes[static_cast<std::size_t>(parent.node)];
    node.feature = f;
    node.threshold = binned.thresholds[static_cast<std::size_t>(f)][static_cast<std::size_t>(split_bin)];
    node.left = static_cast<std::int32_t>(tree.nodes.size());
    node.right = node.left + 1;
    left.node = node.left;
    right.node = node.right;
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();

    left.best = best_split(left, features, binned, p.num_bins, p);
    right.best = best_split(right, features, binned, p.num_bins, p);
    leaves[pick] = std::move(left);
    leaves.insert(leaves.begin() + pick + 1, std::move(right));
  }

  for (const Leaf& leaf : leaves) {
    tree.nodes[static_cast<std::size_t>(leaf.node)].value =
        -leaf.grad_sum / (leaf.hess_sum + p.lambda_l2) * p.learning_rate;
  }
  return tree;
}

double log_loss(std::span<const double> scores, std::span<const int> labels, int k) {
  double total = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const auto prob = softmax(scores.subspan(r * static_cast<std::size_t>(k), static_cast<std::size_t>(k)));
    total -= std::log(std::max(prob[static_cast<std::size_t>(labels[r])], 1e-300));
  }
  return total / static_cast<double>(labels.size());
}

}  // namespace

void GbdtParams::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, what); };
  if (num_rounds < 1) bad("num_rounds must be at least 1");
  if (!(learning_rate > 0.0)) bad("learning_rate must be positive");
  if (max_leaves < 2) bad("max_leaves must be at least 2");
  if (min_samples_leaf < 1) bad("min_samples_leaf must be at least 1");
  if (!(feature_fraction > 0.0 && feature_fraction <= 1.0)) bad("feature_fraction must be in (0, 1]");
  if (!(bagging_fraction > 0.0 && bagging_fraction <= 1.0)) bad("bagging_fraction must be in (0, 1]");
  if (num_bins < 2 || num_bins > 256) bad("num_bins must be in [2, 256]");
  if (!(lambda_l2 >= 0.0)) bad("lambda_l2 must be non-negative");
  if (!(min_child_hessian >= 0.0)) bad("min_child_hessian must be non-negative");
  if (num_classes < 2) bad("num_classes must be at least 2");
}

double DecisionTree::predict(std::span<const float> row) const {
  std::size_t i = 0;
  while (nodes[i].feature >= 0) {
    const TreeNode& n = nodes[i];
    i = static_cast<std::size_t>(static_cast<double>(row[static_cast<std::size_t>(n.feature)]) <= n.threshold
                                     ? n.left
                                     : n.right);
  }
  return nodes[i].value;
}

int DecisionTree::num_leaves() const {
  return static_cast<int>(std::count_if(nodes.begin(), nodes.end(),
                                        [](const TreeNode& n) { return n.feature < 0; }));
}

void TrainingMatrix::add_row(std::span<const float> features, int label, std::string group_id) {
  if (num_rows() == 0 && num_features == 0) num_features = features.size();
  if (features.size() != num_features) {
    throw Error(ErrorCode::FeatureCountMismatch, "row has " + std::to_string(features.size()) +
                                                     " features, expected " +
                                                     std::to_string(num_features));
  }
  values.insert(values.end(), features.begin(), features.end());
  labels.push_back(label);
  group_ids.push_back(std::move(group_id));
}

std::vector<double> bin_thresholds(std::vector<float> column, int num_bins) {
  std::sort(column.begin(), column.end());
  std::vector<float> distinct = column;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<double> thr;
  if (distinct.size() <= static_cast<std::size_t>(num_bins)) {
    for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
      thr.push_back((static_cast<double>(distinct[i]) + static_cast<double>(distinct[i + 1])) / 2.0);
    }
    return thr;
  }
  const std::size_t n = column.size();
  for (int b = 1; b < num_bins; ++b) {
    const std::size_t idx = static_cast<std::size_t>(b) * n / static_cast<std::size_t>(num_bins);
    if (idx == 0 || idx >= n) continue;
    const double lo = column[idx - 1];
    const double hi = column[idx];
    if (lo < hi) {
      const double t = (lo + hi) / 2.0;
      if (thr.empty() || t > thr.back()) thr.push_back(t);
    }
  }
  return thr;
}

std::vector<double> softmax(std::span<const double> scores) {
  const double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> out(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - m);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

GbdtModel fit(const TrainingMatrix& data, const GbdtParams& params, FitTrace* trace) {
  params.validate();
  const std::size_t n = data.num_rows();
  if (n == 0 || data.num_features == 0) throw Error(ErrorCode::EmptyData, "training matrix is empty");
  if (data.values.size() != n * data.num_features) {
    throw Error(ErrorCode::InvalidArgument, "training matrix values do not match its shape");
  }
  const int k = params.num_classes;
  std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
  for (const int y : data.labels) {
    if (y < 0 || y >= k) {
      throw Error(ErrorCode::InvalidArgument, "label " + std::to_string(y) + " outside [0, " +
                                                  std::to_string(k) + ")");
    }
    ++counts[static_cast<std::size_t>(y)];
  }
  if (std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) < 2) {
    throw Error(ErrorCode::SingleClassData, "training data holds a single class");
  }
  if (n < 2 * static_cast<std::size_t>(params.min_samples_leaf)) {
    throw Error(ErrorCode::EmptyData, "need at least 2 * min_samples_leaf rows, got " +
                                          std::to_string(n));
  }

  GbdtModel model;
  model.params = params;
  model.num_features = data.num_features;
  for (const std::size_t c : counts) {
    model.base_scores.push_back(
        std::log(std::max(static_cast<double>(c) / static_cast<double>(n), kMinPrior)));
  }

  const Binned binned = bin_matrix(data, params.num_bins);
  const auto uk = static_cast<std::size_t>(k);
  std::vector<double> scores(n * uk);
  for (std::size_t r = 0; r < n; ++r) {
    std::copy(model.base_scores.begin(), model.base_scores.end(), scores.begin() + static_cast<std::ptrdiff_t>(r * uk));
  }
  if (trace) trace->log_loss = {log_loss(scores, data.labels, k)};

  std::vector<double> prob(n * uk);
  std::vector<double> grad(n), hess(n);
  const std::size_t bag_count = fraction_count(n, params.bagging_fraction);
  const std::size_t feature_count = fraction_count(data.num_features, params.feature_fraction);
  model.trees.reserve(static_cast<std::size_t>(params.num_rounds) * uk);

  for (int round = 0; round < params.num_rounds; ++round) {
#pragma omp parallel for if (n >= 4096)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(n); ++r) {
      const std::size_t o = static_cast<std::size_t>(r) * uk;
      const auto p = softmax(std::span<const double>(scores).subspan(o, uk));
      std::copy(p.begin(), p.end(), prob.begin() + static_cast<std::ptrdiff_t>(o));
    }
    for (int cls = 0; cls < k; ++cls) {
      for (std::size_t r = 0; r < n; ++r) {
        const double pk = prob[r * uk + static_cast<std::size_t>(cls)];
        grad[r] = pk - (data.labels[r] == cls ? 1.0 : 0.0);
        hess[r] = std::max(pk * (1.0 - pk), kMinHessian);
      }
      const auto ur = static_cast<std::uint64_t>(round);
      const auto uc = static_cast<std::uint64_t>(cls);
      auto rows = sample_indices<std::uint32_t>(n, bag_count, make_key(params.seed, kBagStream, ur, uc));
      auto features =
          sample_indices<int>(data.num_features, feature_count, make_key(params.seed, kFeatureStream, ur, uc));
      model.trees.push_back(grow_tree(binned, grad, hess, std::move(rows), std::move(features), params));
    }
    const std::size_t first = static_cast<std::size_t>(round) * uk;
#pragma omp parallel for if (n >= 4096)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(n); ++r) {
      const auto row = data.row(static_cast<std::size_t>(r));
      for (std::size_t c = 0; c < uk; ++c) {
        scores[static_cast<std::size_t>(r) * uk + c] += model.trees[first + c].predict(row);
      }
    }
    if (trace) trace->log_loss.push_back(log_loss(scores, data.labels, k));
  }
  return model;
}

std::vector<double> predict_scores(const GbdtModel& model, std::span<const float> row) {
  if (row.size() != model.num_features) {
    throw Error(ErrorCode::FeatureCountMismatch, "row has " + std::to_string(row.size()) +
                                                     " features, model expects " +
                                                     std::to_string(model.num_features));
  }
  std::vector<double> scores = model.base_scores;
  const std::size_t k = scores.size();
  for (std::size_t t = 0; t < model.trees.size(); ++t) scores[t % k] += model.trees[t].predict(row);
  return scores;
}

std::vector<double> predict_proba(const GbdtModel& model, std::span<const float> rows,
                                  std::size_t row_len) {
  if (row_len != model.num_features || (row_len > 0 && rows.size() % row_len != 0)) {
    throw Error(ErrorCode::FeatureCountMismatch, "rows have " + std::to_string(row_len) +
                                                     " features, model expects " +
                                                     std::to_string(model.num_features));
  }
  const std::size_t n = row_len == 0 ? 0 : rows.size() / row_len;
  const std::size_t k = model.base_scores.size();
  std::vector<double> out(n * k);
  for (std::size_t r = 0; r < n; ++r) {
    const auto p = softmax(predict_scores(model, rows.subspan(r * row_len, row_len)));
    std::copy(p.begin(), p.end(), out.begin() + static_cast<std::ptrdiff_t>(r * k));
  }
  return out;
}

namespace {

nlohmann::json params_to_json(const GbdtParams& p) {
  return {{"num_rounds", p.num_rounds},         {"learning_rate", p.learning_rate},
          {"max_leaves", p.max_leaves},         {"min_samples_leaf", p.min_samples_leaf},
          {"feature_fraction", p.feature_fraction}, {"bagging_fraction", p.bagging_fraction},
          {"num_bins", p.num_bins},             {"lambda_l2", p.lambda_l2},
          {"min_child_hessian", p.min_child_hessian}, {"num_classes", p.num_classes},
          {"seed", p.seed}};
}

GbdtParams params_from_json(const nlohmann::json& j) {
  GbdtParams p;
  p.num_rounds = j.at("num_rounds").get<int>();
  p.learning_rate = j.at("learning_rate").get<double>();
  p.max_leaves = j.at("max_leaves").get<int>();
  p.min_samples_leaf = j.at("min_samples_leaf").get<int>();
  p.feature_fraction = j.at("feature_fraction").get<double>();
  p.bagging_fraction = j.at("bagging_fraction").get<double>();
  p.num_bins = j.at("num_bins").get<int>();
  p.lambda_l2 = j.at("lambda_l2").get<double>();
  p.min_child_hessian = j.at("min_child_hessian").get<double>();
  p.num_classes = j.at("num_classes").get<int>();
  p.seed = j.at("seed").get<std::uint64_t>();
  return p;
}

}  // namespace

std::vector<char> serialize_model(const GbdtModel& model) {
  detail::ByteWriter w;
  w.bytes(std::string_view(kModelMagic, 8));
  w.u8(kModelVersion);
  const std::string params = params_to_json(model.params).dump();
  w.u32(static_cast<std::uint32_t>(params.size()));
  w.bytes(params);
  w.u64(model.num_features);
  w.u32(static_cast<std::uint32_t>(model.base_scores.size()));
  for (const double s : model.base_scores) w.f64(s);
  w.u32(static_cast<std::uint32_t>(model.trees.size()));
  for (const DecisionTree& t : model.trees) {
    w.u32(static_cast<std::uint32_t>(t.nodes.size()));
    for (const TreeNode& node : t.nodes) {
      w.i32(node.feature);
      w.f64(node.threshold);
      w.i32(node.left);
      w.i32(node.right);
      w.f64(node.value);
    }
  }
  return std::move(w.buffer());
}

GbdtModel deserialize_model(std::span<const char> bytes) {
  detail::ByteReader r(bytes.data(), bytes.size(), ErrorCode::CorruptModel);
  if (r.remaining() < 9 || r.bytes(8) != std::string_view(kModelMagic, 8)) {
    throw Error(ErrorCode::CorruptModel, "bad model magic");
  }
  const std::uint8_t version = r.u8();
  if (version != kModelVersion) {
    throw Error(ErrorCode::VersionMismatch, "model version " + std::to_string(version) +
                                                ", this build reads " +
                                                std::to_string(kModelVersion));
  }
  GbdtModel model;
  const std::uint32_t params_len = r.u32();
  try {
    model.params = params_from_json(nlohmann::json::parse(r.bytes(params_len)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptModel, std::string("bad model parameters: ") + e.what());
  }
  model.num_features = r.u64();
  const std::uint32_t k = r.u32();
  if (k != static_cast<std::uint32_t>(model.params.num_classes)) {
    throw Error(ErrorCode::CorruptModel, "class count disagrees with parameters");
  }
  for (std::uint32_t c = 0; c < k; ++c) model.base_scores.push_back(r.f64());
  const std::uint32_t num_trees = r.u32();
  if (num_trees % k != 0) throw Error(ErrorCode::CorruptModel, "tree count is not a multiple of the class count");
  for (std::uint32_t t = 0; t < num_trees; ++t) {
    const std::uint32_t num_nodes = r.u32();
    if (num_nodes == 0 || num_nodes > r.remaining() / 28) {
      throw Error(ErrorCode::CorruptModel, "tree " + std::to_string(t) + " has an invalid node count");
    }
    DecisionTree tree;
    tree.nodes.resize(num_nodes);
    for (std::uint32_t i = 0; i < num_nodes; ++i) {
      TreeNode& node = tree.nodes[i];
      node.feature = r.i32();
      node.threshold = r.f64();
      node.left = r.i32();
      node.right = r.i32();
      node.value = r.f64();
      if (node.feature >= 0) {
        // Children always follow their parent, which rules out cycles.
        const auto in_range = [&](std::int32_t c) {
          return c > static_cast<std::int32_t>(i) && c < static_cast<std::int32_t>(num_nodes);
        };
        if (static_cast<std::uint64_t>(node.feature) >= model.num_features || !in_range(node.left) ||
            !in_range(node.right)) {
          throw Error(ErrorCode::CorruptModel, "tree " + std::to_string(t) + " node " +
                                                   std::to_string(i) + " is malformed");
        }
      } else if (!std::isfinite(node.value)) {
        throw Error(ErrorCode::CorruptModel, "non-finite leaf value");
      }
    }
    model.trees.push_back(std::move(tree));
  }
  if (r.remaining() != 0) throw Error(ErrorCode::CorruptModel, "trailing bytes after model");
  return model;
}

}  // namespace histopipe::boosting
