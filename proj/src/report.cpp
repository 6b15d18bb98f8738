#include "histopipe/report.hpp"

#include <charconv>
#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>

#include "binary_io.hpp"
#include "histopipe/error.hpp"
#include "histopipe/features.hpp"

namespace histopipe::report {

using nlohmann::json;

namespace {

template <typename Fn>
GroupMetrics per_fold(const std::string& name, std::span<const eval::PredictionRecord> records,
                      const eval::FoldAssignment& folds, Fn accuracy_of) {
  GroupMetrics g;
  g.name = name;
  std::vector<std::vector<eval::PredictionRecord>> by_fold(static_cast<std::size_t>(folds.k));
  for (const auto& r : records) by_fold[static_cast<std::size_t>(folds.fold(r.image_id))].push_back(r);
  for (const auto& f : by_fold) {
    if (!f.empty()) g.fold_accuracy.push_back(accuracy_of(std::span<const eval::PredictionRecord>(f)));
  }
  const auto ms = eval::aggregate_mean_std(g.fold_accuracy);
  g.mean = ms.mean;
  g.std = ms.std;
  g.overall = accuracy_of(records);
  return g;
}

double threshold_accuracy(std::span<const eval::PredictionRecord> records) {
  const auto bin = eval::binarize_carcinoma(records);
  return eval::thresholded_binary_accuracy(bin, 0.5);
}

json group_json(const GroupMetrics& g) {
  return {{"name", g.name}, {"fold_accuracy", g.fold_accuracy}, {"mean", g.mean},
          {"std", g.std},   {"overall", g.overall}};
}

GroupMetrics group_from_json(const json& j) {
  return {j.at("name").get<std::string>(), j.at("fold_accuracy").get<std::vector<double>>(),
          j.at("mean").get<double>(), j.at("std").get<double>(), j.at("overall").get<double>()};
}

std::string csv_row(const GroupMetrics& g) {
  std::string row = display_name(g.name);
  for (const double a : g.fold_accuracy) row += "," + format_number(a);
  row += "," + format_number(g.mean) + "," + format_number(g.std) + "\n";
  return row;
}

double parse_number(const std::string& s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::InvalidArgument, "not a number: '" + s + "'");
  }
  return v;
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

GroupMetrics group_metrics(const std::string& name, std::span<const eval::PredictionRecord> records,
                           const eval::FoldAssignment& folds) {
  return per_fold(name, records, folds,
                  [](std::span<const eval::PredictionRecord> r) { return eval::accuracy(r); });
}

MetricsReport compute_metrics(
    std::span<const eval::PredictionRecord> fused,
    const std::vector<std::pair<std::string, std::vector<eval::PredictionRecord>>>& groups,
    const eval::FoldAssignment& folds, std::span<const double> setpoints) {
  MetricsReport m;
  m.k = folds.k;
  m.num_images = static_cast<int>(fused.size());
  m.fused = group_metrics("fused", fused, folds);
  for (const auto& [name, records] : groups) m.groups.push_back(group_metrics(name, records, folds));
  m.confusion = eval::confusion_matrix(fused);
  m.binary_collapsed = per_fold("binary_collapsed", fused, folds, [](std::span<const eval::PredictionRecord> r) {
    return eval::collapsed_binary_accuracy(r);
  });
  m.binary_threshold = per_fold("binary_threshold", fused, folds, threshold_accuracy);
  const auto binary = eval::binarize_carcinoma(fused);
  m.roc = eval::roc_curve(binary);
  for (const double t : setpoints) m.operating_points.push_back(eval::operating_point(m.roc, t));
  return m;
}

json to_json(const MetricsReport& m) {
  json groups = json::array();
  for (const auto& g : m.groups) groups.push_back(group_json(g));
  json confusion = json::array();
  for (const auto& row : m.confusion.counts) confusion.push_back(row);
  json points = json::array();
  for (const auto& p : m.roc.points) {
    // JSON has no infinity; the curve's first threshold is written as null.
    points.push_back({{"fpr", p.fpr},
                      {"tpr", p.tpr},
                      {"threshold", std::isfinite(p.threshold) ? json(p.threshold) : json(nullptr)}});
  }
  json ops = json::array();
  for (const auto& op : m.operating_points) {
    ops.push_back({{"threshold", op.threshold},
                   {"sensitivity", op.sensitivity},
                   {"specificity", op.specificity}});
  }
  json labels = json::array();
  for (const Label l : kAllLabels) labels.push_back(std::string(to_string(l)));
  return {{"k", m.k},
          {"num_images", m.num_images},
          {"labels", labels},
          {"fused", group_json(m.fused)},
          {"groups", groups},
          {"confusion", confusion},
          {"binary_collapsed", group_json(m.binary_collapsed)},
          {"binary_threshold", group_json(m.binary_threshold)},
          {"roc", {{"auc", m.roc.auc},
                   {"positives", m.roc.positives},
                   {"negatives", m.roc.negatives},
                   {"points", points}}},
          {"operating_points", ops}};
}

MetricsReport metrics_from_json(const json& j) {
  try {
    MetricsReport m;
    m.k = j.at("k").get<int>();
    m.num_images = j.at("num_images").get<int>();
    m.fused = group_from_json(j.at("fused"));
    for (const auto& g : j.at("groups")) m.groups.push_back(group_from_json(g));
    const auto& conf = j.at("confusion");
    for (std::size_t r = 0; r < static_cast<std::size_t>(kNumClasses); ++r) {
      for (std::size_t c = 0; c < static_cast<std::size_t>(kNumClasses); ++c) {
        m.confusion.counts[r][c] = conf.at(r).at(c).get<int>();
      }
    }
    m.binary_collapsed = group_from_json(j.at("binary_collapsed"));
    m.binary_threshold = group_from_json(j.at("binary_threshold"));
    const auto& roc = j.at("roc");
    m.roc.auc = roc.at("auc").get<double>();
    m.roc.positives = roc.at("positives").get<int>();
    m.roc.negatives = roc.at("negatives").get<int>();
    for (const auto& p : roc.at("points")) {
      const auto& t = p.at("threshold");
      m.roc.points.push_back({p.at("fpr").get<double>(), p.at("tpr").get<double>(),
                              t.is_null() ? std::numeric_limits<double>::infinity() : t.get<double>()});
    }
    for (const auto& op : j.at("operating_points")) {
      m.operating_points.push_back({op.at("threshold").get<double>(), op.at("sensitivity").get<double>(),
                                    op.at("specificity").get<double>()});
    }
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MissingArtifacts, std::string("metrics document is incomplete: ") + e.what());
  }
}

std::string display_name(const std::string& group) {
  if (group == "fused") return "Fused";
  const auto cut = group.rfind('_');
  if (cut == std::string::npos) return group;
  const std::string enc = group.substr(0, cut);
  const std::string size = group.substr(cut + 1);
  std::string pretty = enc;
  if (const auto kind = features::parse_encoder_id(enc)) {
    switch (*kind) {
      case features::EncoderKind::ResNet50: pretty = "ResNet"; break;
      case features::EncoderKind::InceptionV3: pretty = "Inception"; break;
      case features::EncoderKind::Vgg16: pretty = "VGG"; break;
      case features::EncoderKind::Stub: pretty = "Stub"; break;
    }
  }
  return pretty + "-" + size;
}

std::string table1_csv(const MetricsReport& m) {
  std::string out = "model";
  for (int f = 1; f <= m.k; ++f) out += ",fold_" + std::to_string(f);
  out += ",mean,std\n";
  for (const auto& g : m.groups) out += csv_row(g);
  out += csv_row(m.fused);
  return out;
}

std::vector<GroupMetrics> parse_table1_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<GroupMetrics> rows;
  if (!std::getline(in, line)) return rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() < 3) throw Error(ErrorCode::InvalidArgument, "short table row: '" + line + "'");
    GroupMetrics g;
    g.name = cells[0];
    for (std::size_t i = 1; i + 2 < cells.size(); ++i) g.fold_accuracy.push_back(parse_number(cells[i]));
    g.mean = parse_number(cells[cells.size() - 2]);
    g.std = parse_number(cells.back());
    rows.push_back(std::move(g));
  }
  return rows;
}

std::string roc_csv(const eval::RocCurve& curve) {
  std::string out = "fpr,tpr,threshold\n";
  for (const auto& p : curve.points) {
    out += format_number(p.fpr) + "," + format_number(p.tpr) + "," +
           (std::isfinite(p.threshold) ? format_number(p.threshold) : std::string("inf")) + "\n";
  }
  return out;
}

std::string roc_svg(const eval::RocCurve& curve, std::span<const eval::OperatingPoint> points) {
  constexpr double kSize = 400.0;
  constexpr double kMargin = 50.0;
  const auto px = [&](double fpr) { return kMargin + fpr * kSize; };
  const auto py = [&](double tpr) { return kMargin + (1.0 - tpr) * kSize; };
  const char* colors[] = {"#2ca02c", "#d62728", "#1f77b4", "#9467bd"};

  std::ostringstream svg;
  svg.setf(std::ios::fixed);
  svg.precision(2);
  const double total = kSize + 2 * kMargin;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << total << "\" height=\"" << total
      << "\" viewBox=\"0 0 " << total << " " << total << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"" << total << "\" height=\"" << total << "\" fill=\"white\"/>\n";
  svg << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kSize << "\" height=\""
      << kSize << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 10; i += 2) {
    const double v = i / 10.0;
    svg << "<text x=\"" << px(v) << "\" y=\"" << kMargin + kSize + 16 << "\" text-anchor=\"middle\">"
        << v << "</text>\n";
    svg << "<text x=\"" << kMargin - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << v
        << "</text>\n";
  }
  svg << "<text x=\"" << kMargin + kSize / 2 << "\" y=\"" << total - 10
      << "\" text-anchor=\"middle\">False positive rate</text>\n";
  svg << "<text x=\"14\" y=\"" << kMargin + kSize / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
      << kMargin + kSize / 2 << ")\">True positive rate</text>\n";
  svg << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\"" << py(1)
      << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
  svg << "<polyline fill=\"none\" stroke=\"#ff7f0e\" stroke-width=\"2\" points=\"";
  for (const auto& p : curve.points) svg << px(p.fpr) << "," << py(p.tpr) << " ";
  svg << "\"/>\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& op = points[i];
    const double fpr = 1.0 - op.specificity / 100.0;
    const double tpr = op.sensitivity / 100.0;
    const char* color = colors[i % 4];
    svg << "<circle cx=\"" << px(fpr) << "\" cy=\"" << py(tpr) << "\" r=\"5\" fill=\"" << color
        << "\"/>\n";
    svg << "<text x=\"" << kMargin + kSize - 8 << "\" y=\"" << kMargin + kSize - 44 + 16.0 * static_cast<double>(i)
        << "\" text-anchor=\"end\" fill=\"" << color << "\">setpoint " << op.threshold
        << ": sens " << op.sensitivity << "%, spec " << op.specificity << "%</text>\n";
  }
  svg.precision(3);
  svg << "<text x=\"" << kMargin + kSize - 8 << "\" y=\"" << kMargin + kSize - 60
      << "\" text-anchor=\"end\">AUC = " << curve.auc << "</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

std::string confusion_csv(const eval::ConfusionMatrix& m) {
  std::string out = "truth\\prediction";
  for (const Label l : kAllLabels) out += "," + std::string(to_string(l));
  out += "\n";
  for (std::size_t r = 0; r < static_cast<std::size_t>(kNumClasses); ++r) {
    out += std::string(to_string(kAllLabels[r]));
    for (const int c : m.counts[r]) out += "," + std::to_string(c);
    out += "\n";
  }
  return out;
}

void write_report(const MetricsReport& m, const std::filesystem::path& dir) {
  const auto put = [&](const char* name, const std::string& text) {
    detail::write_file_atomic((dir / name).string(), std::vector<char>(text.begin(), text.end()));
  };
  put("table1.csv", table1_csv(m));
  put("roc.csv", roc_csv(m.roc));
  put("roc.svg", roc_svg(m.roc, m.operating_points));
  put("confusion.csv", confusion_csv(m.confusion));
}

}  // namespace histopipe::report
