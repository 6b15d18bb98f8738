#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>

#include "histopipe/boosting.hpp"
#include "histopipe/error.hpp"
#include "histopipe/rng.hpp"

using namespace histopipe;
using namespace histopipe::boosting;

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

double normal(CounterRng& rng) {
  const double u1 = 1.0 - rng.uniform();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
}

// Four Gaussian blobs in `dims` dimensions; class c is centred at 4 * e_c.
TrainingMatrix gaussian_blobs(int per_class, int dims, std::uint64_t seed) {
  CounterRng rng(seed);
  TrainingMatrix m;
  m.num_features = static_cast<std::size_t>(dims);
  std::vector<float> row(static_cast<std::size_t>(dims));
  for (int c = 0; c < 4; ++c) {
    for (int i = 0; i < per_class; ++i) {
      for (int d = 0; d < dims; ++d) {
        row[static_cast<std::size_t>(d)] = static_cast<float>((d == c ? 4.0 : 0.0) + normal(rng));
      }
      m.add_row(row, c, "g" + std::to_string(c) + "_" + std::to_string(i));
    }
  }
  return m;
}

GbdtParams small_params() {
  GbdtParams p;
  p.num_rounds = 30;
  p.max_leaves = 8;
  p.min_samples_leaf = 3;
  p.seed = 9;
  return p;
}

}  // namespace

TEST_CASE("parameter validation") {
  GbdtParams p;
  CHECK_NOTHROW(p.validate());
  p.learning_rate = 0.0;
  CHECK(code_of([&] { p.validate(); }) == ErrorCode::InvalidArgument);
  p = {};
  p.max_leaves = 1;
  CHECK(code_of([&] { p.validate(); }) == ErrorCode::InvalidArgument);
  p = {};
  p.bagging_fraction = 1.5;
  CHECK(code_of([&] { p.validate(); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("bin thresholds use midpoints between few distinct values") {
  const auto t = bin_thresholds({3.0f, 1.0f, 1.0f, 2.0f, 3.0f}, 255);
  REQUIRE(t.size() == 2);
  CHECK(t[0] == doctest::Approx(1.5));
  CHECK(t[1] == doctest::Approx(2.5));
  CHECK(bin_thresholds({4.0f, 4.0f}, 255).empty());

  std::vector<float> many(1000);
  for (int i = 0; i < 1000; ++i) many[static_cast<std::size_t>(i)] = static_cast<float>(i);
  const auto q = bin_thresholds(many, 16);
  CHECK(q.size() <= 15);
  CHECK(q.size() >= 10);
  CHECK(std::is_sorted(q.begin(), q.end()));
  CHECK(std::adjacent_find(q.begin(), q.end()) == q.end());
}

TEST_CASE("the first split of every class tree matches an exhaustive search") {
  // Few distinct values per feature, so every midpoint is a candidate.
  CounterRng rng(17);
  TrainingMatrix m;
  m.num_features = 3;
  for (int i = 0; i < 60; ++i) {
    const int label = static_cast<int>(rng.below(4));
    const float row[] = {static_cast<float>(rng.below(12)) + 0.1f * static_cast<float>(label),
                         static_cast<float>(rng.below(7)), static_cast<float>(label * 2 + static_cast<int>(rng.below(3)))};
    m.add_row(row, label, std::to_string(i));
  }

  GbdtParams p;
  p.num_rounds = 1;
  p.max_leaves = 2;
  p.min_samples_leaf = 4;
  p.feature_fraction = 1.0;
  p.bagging_fraction = 1.0;
  p.lambda_l2 = 0.7;
  p.learning_rate = 0.3;
  const GbdtModel model = fit(m, p);
  REQUIRE(model.trees.size() == 4);

  const std::size_t n = m.num_rows();
  double counts[4] = {};
  for (const int y : m.labels) counts[y] += 1.0;
  double base[4], prob[4], z = 0.0;
  for (int c = 0; c < 4; ++c) {
    base[c] = std::log(std::max(counts[c] / static_cast<double>(n), 1e-6));
    CHECK(model.base_scores[static_cast<std::size_t>(c)] == doctest::Approx(base[c]));
    z += std::exp(base[c]);
  }
  for (int c = 0; c < 4; ++c) prob[c] = std::exp(base[c]) / z;

  for (int c = 0; c < 4; ++c) {
    CAPTURE(c);
    std::vector<double> g(n), h(n);
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = prob[c] - (m.labels[i] == c ? 1.0 : 0.0);
      h[i] = std::max(prob[c] * (1.0 - prob[c]), 1e-16);
    }
    const auto score = [&](double gs, double hs) { return gs * gs / (hs + p.lambda_l2); };
    double gt = 0.0, ht = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      gt += g[i];
      ht += h[i];
    }
    double best_gain = 0.0;
    int best_f = -1;
    double best_t = 0.0, best_gl = 0.0, best_hl = 0.0;
    for (int f = 0; f < 3; ++f) {
      std::set<float> distinct;
      for (std::size_t i = 0; i < n; ++i) distinct.insert(m.row(i)[static_cast<std::size_t>(f)]);
      std::vector<float> d(distinct.begin(), distinct.end());
      for (std::size_t k = 0; k + 1 < d.size(); ++k) {
        const double t = (static_cast<double>(d[k]) + static_cast<double>(d[k + 1])) / 2.0;
        double gl = 0.0, hl = 0.0;
        int nl = 0;
        for (std::size_t i = 0; i < n; ++i) {
          if (m.row(i)[static_cast<std::size_t>(f)] <= t) {
            gl += g[i];
            hl += h[i];
            ++nl;
          }
        }
        if (nl < p.min_samples_leaf || static_cast<int>(n) - nl < p.min_samples_leaf) continue;
        const double gain = score(gl, hl) + score(gt - gl, ht - hl) - score(gt, ht);
        if (gain > best_gain * (1.0 + 1e-10) + 1e-12) {
          best_gain = gain;
          best_f = f;
          best_t = t;
          best_gl = gl;
          best_hl = hl;
        }
      }
    }
    const DecisionTree& tree = model.tree(0, c);
    REQUIRE(best_f >= 0);
    REQUIRE(tree.nodes.size() == 3);
    const TreeNode& root = tree.nodes[0];
    CHECK(root.feature == best_f);
    CHECK(root.threshold == doctest::Approx(best_t));
    const double left = -best_gl / (best_hl + p.lambda_l2) * p.learning_rate;
    const double right = -(gt - best_gl) / (ht - best_hl + p.lambda_l2) * p.learning_rate;
    CHECK(tree.nodes[static_cast<std::size_t>(root.left)].value == doctest::Approx(left).epsilon(1e-9));
    CHECK(tree.nodes[static_cast<std::size_t>(root.right)].value == doctest::Approx(right).epsilon(1e-9));
  }
}

TEST_CASE("fit rejects unusable data") {
  TrainingMatrix one_class;
  one_class.num_features = 1;
  for (int i = 0; i < 20; ++i) {
    const float v[] = {static_cast<float>(i)};
    one_class.add_row(v, 2, std::to_string(i));
  }
  CHECK(code_of([&] { fit(one_class, small_params()); }) == ErrorCode::SingleClassData);
  CHECK(code_of([] { fit(TrainingMatrix{}, small_params()); }) == ErrorCode::EmptyData);

  TrainingMatrix bad_label = gaussian_blobs(5, 2, 1);
  bad_label.labels[0] = 7;
  CHECK(code_of([&] { fit(bad_label, small_params()); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("separable Gaussian classes are learned") {
  const TrainingMatrix train = gaussian_blobs(60, 6, 2);
  const TrainingMatrix test = gaussian_blobs(60, 6, 3);
  GbdtParams p = small_params();
  p.num_rounds = 60;
  const GbdtModel model = fit(train, p);
  const auto proba = predict_proba(model, test.values, test.num_features);
  REQUIRE(proba.size() == test.num_rows() * 4);
  int correct = 0;
  for (std::size_t i = 0; i < test.num_rows(); ++i) {
    const auto* pr = proba.data() + 4 * i;
    const int pred = static_cast<int>(std::max_element(pr, pr + 4) - pr);
    correct += pred == test.labels[i];
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(test.num_rows()) >= 0.95);
}

TEST_CASE("training log-loss never increases without subsampling") {
  const TrainingMatrix train = gaussian_blobs(40, 4, 5);
  GbdtParams p = small_params();
  p.bagging_fraction = 1.0;
  p.feature_fraction = 1.0;
  FitTrace trace;
  fit(train, p, &trace);
  REQUIRE(trace.log_loss.size() == static_cast<std::size_t>(p.num_rounds) + 1);
  CHECK(trace.log_loss.front() == doctest::Approx(std::log(4.0)).epsilon(1e-9));
  for (std::size_t r = 1; r < trace.log_loss.size(); ++r) {
    CHECK(trace.log_loss[r] <= trace.log_loss[r - 1] + 1e-12);
  }
  CHECK(trace.log_loss.back() < 0.5 * trace.log_loss.front());
}

TEST_CASE("fit is deterministic and seed dependent under subsampling") {
  const TrainingMatrix train = gaussian_blobs(30, 5, 6);
  GbdtParams p = small_params();
  const auto a = serialize_model(fit(train, p));
  const auto b = serialize_model(fit(train, p));
  p.seed += 1;
  const auto c = serialize_model(fit(train, p));
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("probabilities lie on the simplex") {
  const TrainingMatrix train = gaussian_blobs(20, 3, 7);
  const GbdtModel model = fit(train, small_params());
  const auto proba = predict_proba(model, train.values, train.num_features);
  for (std::size_t i = 0; i < train.num_rows(); ++i) {
    double s = 0.0;
    for (int c = 0; c < 4; ++c) {
      const double v = proba[4 * i + static_cast<std::size_t>(c)];
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  const float short_row[] = {1.0f, 2.0f};
  CHECK(code_of([&] { predict_proba(model, short_row, 2); }) == ErrorCode::FeatureCountMismatch);

  const double big[] = {1000.0, 999.0, -1000.0, 0.0};
  const auto sm = softmax(big);
  CHECK(sm[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
  CHECK(std::isfinite(sm[2]));
}

TEST_CASE("a model without trees predicts from its base scores") {
  GbdtModel m;
  m.num_features = 2;
  m.base_scores = {0.0, 0.0, 0.0, 0.0};
  const float row[] = {1.0f, 2.0f};
  const auto p = predict_proba(m, row, 2);
  for (const double v : p) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("model serialization is bit exact and validated") {
  const TrainingMatrix train = gaussian_blobs(20, 3, 8);
  const GbdtModel model = fit(train, small_params());
  const auto bytes = serialize_model(model);
  CHECK(std::memcmp(bytes.data(), kModelMagic, 8) == 0);
  CHECK(static_cast<std::uint8_t>(bytes[8]) == kModelVersion);

  const GbdtModel back = deserialize_model(bytes);
  CHECK(back.params == model.params);
  CHECK(serialize_model(back) == bytes);
  const auto p1 = predict_proba(model, train.values, 3);
  const auto p2 = predict_proba(back, train.values, 3);
  CHECK(p1 == p2);

  auto wrong_magic = bytes;
  wrong_magic[1] = 'Q';
  CHECK(code_of([&] { deserialize_model(wrong_magic); }) == ErrorCode::CorruptModel);
  auto wrong_version = bytes;
  wrong_version[8] = 9;
  CHECK(code_of([&] { deserialize_model(wrong_version); }) == ErrorCode::VersionMismatch);
  for (const std::size_t cut : {std::size_t{4}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<char> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK(code_of([&] { deserialize_model(part); }) == ErrorCode::CorruptModel);
  }
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK(code_of([&] { deserialize_model(trailing); }) == ErrorCode::CorruptModel);
}
