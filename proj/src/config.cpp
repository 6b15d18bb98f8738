#include "histopipe/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "histopipe/error.hpp"

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

namespace histopipe::pipeline {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); }

void check_keys(const toml::table& t, const std::string& where, const std::set<std::string>& allowed) {
  for (const auto& [key, node] : t) {
    if (!allowed.contains(std::string(key.str()))) {
      config_error("unknown key '" + (where.empty() ? "" : where + ".") + std::string(key.str()) + "'");
    }
  }
}

std::string qualified(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

std::int64_t as_int(const toml::node& n, const std::string& name) {
  if (auto v = n.value_exact<std::int64_t>()) return *v;
  config_error("'" + name + "' must be an integer");
}

double as_double(const toml::node& n, const std::string& name) {
  if (auto v = n.value_exact<double>()) return *v;
  if (auto v = n.value_exact<std::int64_t>()) return static_cast<double>(*v);
  config_error("'" + name + "' must be a number");
}

void read_int(const toml::table& t, const std::string& where, const std::string& key, int& out) {
  if (const auto* n = t.get(key)) out = static_cast<int>(as_int(*n, qualified(where, key)));
}

void read_u64(const toml::table& t, const std::string& where, const std::string& key,
              std::uint64_t& out) {
  if (const auto* n = t.get(key)) {
    const auto v = as_int(*n, qualified(where, key));
    if (v < 0) config_error("'" + qualified(where, key) + "' must be non-negative");
    out = static_cast<std::uint64_t>(v);
  }
}

void read_double(const toml::table& t, const std::string& where, const std::string& key, double& out) {
  if (const auto* n = t.get(key)) out = as_double(*n, qualified(where, key));
}

void read_bool(const toml::table& t, const std::string& where, const std::string& key, bool& out) {
  if (const auto* n = t.get(key)) {
    if (auto v = n->value_exact<bool>()) {
      out = *v;
    } else {
      config_error("'" + qualified(where, key) + "' must be true or false");
    }
  }
}

void read_string(const toml::table& t, const std::string& where, const std::string& key,
                 std::string& out) {
  if (const auto* n = t.get(key)) {
    if (auto v = n->value_exact<std::string>()) {
      out = *v;
    } else {
      config_error("'" + qualified(where, key) + "' must be a string");
    }
  }
}

const toml::array* get_array(const toml::table& t, const std::string& where, const std::string& key) {
  const auto* n = t.get(key);
  if (!n) return nullptr;
  if (!n->is_array()) config_error("'" + qualified(where, key) + "' must be an array");
  return n->as_array();
}

template <typename T, typename Conv>
void read_array(const toml::table& t, const std::string& where, const std::string& key,
                std::vector<T>& out, Conv conv) {
  if (const auto* arr = get_array(t, where, key)) {
    out.clear();
    for (const auto& el : *arr) out.push_back(conv(el, qualified(where, key)));
  }
}

void read_int_array(const toml::table& t, const std::string& where, const std::string& key,
                    std::vector<int>& out) {
  read_array(t, where, key, out,
             [](const toml::node& n, const std::string& name) { return static_cast<int>(as_int(n, name)); });
}

void read_double_array(const toml::table& t, const std::string& where, const std::string& key,
                       std::vector<double>& out) {
  read_array(t, where, key, out, as_double);
}

void read_string_array(const toml::table& t, const std::string& where, const std::string& key,
                       std::vector<std::string>& out) {
  read_array(t, where, key, out, [](const toml::node& n, const std::string& name) {
    if (auto v = n.value_exact<std::string>()) return *v;
    config_error("'" + name + "' must hold strings");
  });
}

stain::Vec3 read_vec3(const toml::table& t, const std::string& where, const std::string& key,
                      const stain::Vec3& fallback) {
  std::vector<double> v(fallback.begin(), fallback.end());
  read_double_array(t, where, key, v);
  if (v.size() != 3) config_error("'" + qualified(where, key) + "' must have 3 entries");
  return {v[0], v[1], v[2]};
}

const toml::table* subtable(const toml::table& root, const std::string& key) {
  const auto* n = root.get(key);
  if (!n) return nullptr;
  if (!n->is_table()) config_error("'" + key + "' must be a table");
  return n->as_table();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  fs::path out = (path.is_absolute() ? path : base / path).lexically_normal();
  if (!out.has_filename() && out.has_relative_path()) out = out.parent_path();
  return out;
}

features::EncoderSpec read_encoder(const toml::table& t, const std::string& where,
                                   const fs::path& base) {
  check_keys(t, where, {"id", "model", "taps", "tap_channels", "descriptor_len", "seed",
                        "input_side", "bgr", "mean", "scale"});
  std::string id;
  read_string(t, where, "id", id);
  const auto kind = features::parse_encoder_id(id);
  if (!kind) config_error("'" + where + ".id' must be resnet50, inception_v3, vgg16 or stub, got '" + id + "'");

  std::string model;
  read_string(t, where, "model", model);
  features::EncoderSpec spec;
  switch (*kind) {
    case features::EncoderKind::ResNet50: spec = features::EncoderSpec::resnet50(resolve(base, model).string()); break;
    case features::EncoderKind::InceptionV3: spec = features::EncoderSpec::inception_v3(resolve(base, model).string()); break;
    case features::EncoderKind::Vgg16: spec = features::EncoderSpec::vgg16(resolve(base, model).string()); break;
    case features::EncoderKind::Stub: spec = features::EncoderSpec::stub(); break;
  }
  if (*kind != features::EncoderKind::Stub && model.empty()) {
    config_error("'" + where + ".model' is required for encoder '" + id + "'");
  }
  read_string_array(t, where, "taps", spec.tap_layers);
  read_int_array(t, where, "tap_channels", spec.tap_channels);
  if (t.get("tap_channels") && *kind != features::EncoderKind::Stub) {
    std::size_t total = 0;
    for (const int c : spec.tap_channels) total += static_cast<std::size_t>(std::max(c, 0));
    spec.descriptor_len = total;
  }
  int len = static_cast<int>(spec.descriptor_len);
  read_int(t, where, "descriptor_len", len);
  if (len < 1) config_error("'" + where + ".descriptor_len' must be positive");
  spec.descriptor_len = static_cast<std::size_t>(len);
  read_u64(t, where, "seed", spec.stub_seed);
  read_int(t, where, "input_side", spec.stub_input_side);
  read_bool(t, where, "bgr", spec.preprocessing.bgr);
  if (t.get("mean")) spec.preprocessing.mean = read_vec3(t, where, "mean", spec.preprocessing.mean);
  read_double(t, where, "scale", spec.preprocessing.scale);
  try {
    spec.validate();
  } catch (const Error& e) {
    config_error("'" + where + "': " + e.detail());
  }
  return spec;
}

// Splits "a.b.0.c" into segments.
std::vector<std::string> split_key(const std::string& key) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream in(key);
  while (std::getline(in, part, '.')) {
    if (part.empty()) config_error("malformed override key '" + key + "'");
    parts.push_back(part);
  }
  if (parts.empty()) config_error("empty override key");
  return parts;
}

bool is_index(const std::string& s) {
  return !s.empty() && s.find_first_not_of("0123456789") == std::string::npos;
}

void apply_override(toml::table& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) config_error("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  const auto parts = split_key(key);

  toml::table parsed;
  try {
    parsed = toml::parse("v = " + text);
  } catch (const toml::parse_error&) {
    parsed.insert_or_assign("v", text);
  }
  toml::node& value = *parsed.get("v");

  toml::node* cur = &root;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    const std::string& seg = parts[i];
    if (auto* tbl = cur->as_table()) {
      if (!tbl->contains(seg)) {
        if (is_index(parts[i + 1])) config_error("override '" + key + "' indexes a missing array");
        tbl->insert(seg, toml::table{});
      }
      cur = tbl->get(seg);
    } else if (auto* arr = cur->as_array(); arr && is_index(seg)) {
      const auto idx = std::stoul(seg);
      if (idx >= arr->size()) config_error("override '" + key + "': index " + seg + " out of range");
      cur = arr->get(idx);
    } else {
      config_error("override '" + key + "' descends into a non-table value");
    }
  }
  const std::string& last = parts.back();
  if (auto* tbl = cur->as_table()) {
    tbl->insert_or_assign(last, std::move(value));
  } else {
    config_error("override '" + key + "' does not name a table entry");
  }
}

}  // namespace

void PipelineConfig::apply_seed(std::uint64_t master) {
  seed = master;
  extraction.seed = master;
  extraction.crops.seed = master;
}

void PipelineConfig::validate() const {
  if (labels_file.empty()) config_error("'labels_file' is required");
  if (encoders.empty()) config_error("at least one [[encoders]] entry is required");
  if (extraction.n_augmentations < 1) config_error("'n_augmentations' must be at least 1");
  if (k < 2) config_error("'k' must be at least 2");
  if (seeds.empty()) config_error("'seeds' must not be empty");
  if (extraction.crops.crops_per_size < 1) config_error("'crops.crops_per_size' must be at least 1");
  const auto sizes = crop_sizes();
  if (sizes.empty()) config_error("no crop sizes configured");
  std::set<int> unique(sizes.begin(), sizes.end());
  if (unique.size() != sizes.size()) config_error("crop sizes must be distinct across both scales");
  for (const int s : sizes) {
    if (s < 1) config_error("crop sizes must be positive");
  }
  std::set<std::string> ids;
  for (const auto& e : encoders) {
    if (!ids.insert(std::string(e.id())).second) {
      config_error("encoder '" + std::string(e.id()) + "' is listed twice");
    }
  }
  std::set<std::uint64_t> unique_seeds(seeds.begin(), seeds.end());
  if (unique_seeds.size() != seeds.size()) config_error("'seeds' must be distinct");
  for (const double t : setpoints) {
    if (!(t >= 0.0 && t <= 1.0)) config_error("'setpoints' must lie in [0, 1]");
  }
  try {
    extraction.stain.validate();
    gbdt.validate();
  } catch (const Error& e) {
    config_error(e.detail());
  }
  if (!(extraction.pool.p >= 1.0)) config_error("'pool.p' must be at least 1");
}

PipelineConfig parse_config(const std::string& toml_text, const fs::path& base_dir,
                            const std::vector<std::string>& overrides) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "TOML parse error at line " << e.source().begin.line << ": " << e.description();
    config_error(msg.str());
  }
  for (const auto& o : overrides) apply_override(root, o);

  check_keys(root, "", {"dataset_root", "labels_file", "test_images", "output_dir", "seed", "k",
                        "seeds", "n_augmentations", "setpoints", "crops", "augmentation", "stain",
                        "pool", "gbdt", "encoders"});

  PipelineConfig c;
  std::string s;
  read_string(root, "", "dataset_root", s);
  c.dataset_root = resolve(base_dir, s.empty() ? "." : s);
  s.clear();
  read_string(root, "", "labels_file", s);
  c.labels_file = resolve(base_dir, s);
  s = "artifacts";
  read_string(root, "", "output_dir", s);
  c.output_dir = resolve(base_dir, s);
  std::vector<std::string> tests;
  read_string_array(root, "", "test_images", tests);
  for (const auto& t : tests) c.test_images.push_back(resolve(base_dir, t));

  std::uint64_t master = 0;
  read_u64(root, "", "seed", master);
  read_int(root, "", "k", c.k);
  if (const auto* arr = get_array(root, "", "seeds")) {
    c.seeds.clear();
    for (const auto& el : *arr) {
      const auto v = as_int(el, "seeds");
      if (v < 0) config_error("'seeds' must be non-negative");
      c.seeds.push_back(static_cast<std::uint64_t>(v));
    }
  }
  read_int(root, "", "n_augmentations", c.extraction.n_augmentations);
  read_double_array(root, "", "setpoints", c.setpoints);

  if (const auto* t = subtable(root, "crops")) {
    check_keys(*t, "crops", {"sizes", "full_scale_sizes", "crops_per_size"});
    read_int_array(*t, "crops", "sizes", c.extraction.crops.sizes);
    read_int_array(*t, "crops", "full_scale_sizes", c.extraction.full_scale_sizes);
    read_int(*t, "crops", "crops_per_size", c.extraction.crops.crops_per_size);
  }
  if (const auto* t = subtable(root, "augmentation")) {
    check_keys(*t, "augmentation", {"normalize", "affine"});
    read_bool(*t, "augmentation", "normalize", c.extraction.normalize);
    read_bool(*t, "augmentation", "affine", c.extraction.affine);
  }
  if (const auto* t = subtable(root, "stain")) {
    check_keys(*t, "stain", {"i0", "beta", "alpha", "concentration_percentile",
                             "reference_max_concentrations", "reference_hematoxylin",
                             "reference_eosin"});
    auto& st = c.extraction.stain;
    read_double(*t, "stain", "i0", st.i0);
    read_double(*t, "stain", "beta", st.beta);
    read_double(*t, "stain", "alpha", st.alpha);
    read_double(*t, "stain", "concentration_percentile", st.concentration_percentile);
    std::vector<double> maxc(st.reference_max_concentrations.begin(), st.reference_max_concentrations.end());
    read_double_array(*t, "stain", "reference_max_concentrations", maxc);
    if (maxc.size() != 2) config_error("'stain.reference_max_concentrations' must have 2 entries");
    st.reference_max_concentrations = {maxc[0], maxc[1]};
    const auto h = read_vec3(*t, "stain", "reference_hematoxylin", st.reference_stains.hematoxylin());
    const auto e = read_vec3(*t, "stain", "reference_eosin", st.reference_stains.eosin());
    try {
      st.reference_stains = stain::StainMatrix::from_columns(h, e);
    } catch (const Error& err) {
      config_error("'stain' reference vectors: " + err.detail());
    }
  }
  if (const auto* t = subtable(root, "pool")) {
    check_keys(*t, "pool", {"p"});
    read_double(*t, "pool", "p", c.extraction.pool.p);
  }
  if (const auto* t = subtable(root, "gbdt")) {
    check_keys(*t, "gbdt", {"num_rounds", "learning_rate", "max_leaves", "min_samples_leaf",
                            "feature_fraction", "bagging_fraction", "num_bins", "lambda_l2",
                            "min_child_hessian"});
    auto& g = c.gbdt;
    read_int(*t, "gbdt", "num_rounds", g.num_rounds);
    read_double(*t, "gbdt", "learning_rate", g.learning_rate);
    read_int(*t, "gbdt", "max_leaves", g.max_leaves);
    read_int(*t, "gbdt", "min_samples_leaf", g.min_samples_leaf);
    read_double(*t, "gbdt", "feature_fraction", g.feature_fraction);
    read_double(*t, "gbdt", "bagging_fraction", g.bagging_fraction);
    read_int(*t, "gbdt", "num_bins", g.num_bins);
    read_double(*t, "gbdt", "lambda_l2", g.lambda_l2);
    read_double(*t, "gbdt", "min_child_hessian", g.min_child_hessian);
  }
  c.gbdt.num_classes = kNumClasses;

  if (const auto* n = root.get("encoders")) {
    const auto* arr = n->as_array();
    if (!arr) config_error("'encoders' must be an array of tables");
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const auto* t = arr->get(i)->as_table();
      const std::string where = "encoders." + std::to_string(i);
      if (!t) config_error("'" + where + "' must be a table");
      c.encoders.push_back(read_encoder(*t, where, base_dir));
    }
  }

  c.apply_seed(master);
  c.validate();
  return c;
}

PipelineConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "config file '" + path.string() + "' not found");
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_config(text.str(), fs::absolute(path).parent_path(), overrides);
  } catch (const Error& e) {
    throw Error(e.code(), "'" + path.string() + "': " + e.detail());
  }
}

namespace {

template <typename T>
toml::array to_array(const std::vector<T>& v) {
  toml::array a;
  for (const auto& x : v) {
    if constexpr (std::is_same_v<T, std::uint64_t>) {
      a.push_back(static_cast<std::int64_t>(x));
    } else if constexpr (std::is_same_v<T, fs::path>) {
      a.push_back(x.string());
    } else {
      a.push_back(x);
    }
  }
  return a;
}

toml::array vec3(const stain::Vec3& v) { return toml::array{v[0], v[1], v[2]}; }

}  // namespace

std::string to_toml(const PipelineConfig& c) {
  toml::table root;
  root.insert("dataset_root", c.dataset_root.string());
  root.insert("labels_file", c.labels_file.string());
  root.insert("output_dir", c.output_dir.string());
  root.insert("test_images", to_array(c.test_images));
  root.insert("seed", static_cast<std::int64_t>(c.seed));
  root.insert("k", c.k);
  root.insert("seeds", to_array(c.seeds));
  root.insert("n_augmentations", c.extraction.n_augmentations);
  root.insert("setpoints", to_array(c.setpoints));
  root.insert("crops", toml::table{{"sizes", to_array(c.extraction.crops.sizes)},
                                   {"full_scale_sizes", to_array(c.extraction.full_scale_sizes)},
                                   {"crops_per_size", c.extraction.crops.crops_per_size}});
  root.insert("augmentation", toml::table{{"normalize", c.extraction.normalize},
                                          {"affine", c.extraction.affine}});
  const auto& st = c.extraction.stain;
  root.insert("stain", toml::table{{"i0", st.i0},
                                   {"beta", st.beta},
                                   {"alpha", st.alpha},
                                   {"concentration_percentile", st.concentration_percentile},
                                   {"reference_max_concentrations",
                                    toml::array{st.reference_max_concentrations[0],
                                                st.reference_max_concentrations[1]}},
                                   {"reference_hematoxylin", vec3(st.reference_stains.hematoxylin())},
                                   {"reference_eosin", vec3(st.reference_stains.eosin())}});
  root.insert("pool", toml::table{{"p", c.extraction.pool.p}});
  const auto& g = c.gbdt;
  root.insert("gbdt", toml::table{{"num_rounds", g.num_rounds},
                                  {"learning_rate", g.learning_rate},
                                  {"max_leaves", g.max_leaves},
                                  {"min_samples_leaf", g.min_samples_leaf},
                                  {"feature_fraction", g.feature_fraction},
                                  {"bagging_fraction", g.bagging_fraction},
                                  {"num_bins", g.num_bins},
                                  {"lambda_l2", g.lambda_l2},
                                  {"min_child_hessian", g.min_child_hessian}});
  toml::array encs;
  for (const auto& e : c.encoders) {
    toml::table t{{"id", std::string(e.id())}};
    if (e.kind == features::EncoderKind::Stub) {
      t.insert("descriptor_len", static_cast<std::int64_t>(e.descriptor_len));
      t.insert("seed", static_cast<std::int64_t>(e.stub_seed));
      t.insert("input_side", e.stub_input_side);
    } else {
      t.insert("model", e.model_path);
      t.insert("taps", to_array(e.tap_layers));
      t.insert("tap_channels", to_array(e.tap_channels));
    }
    t.insert("bgr", e.preprocessing.bgr);
    t.insert("mean", vec3(e.preprocessing.mean));
    t.insert("scale", e.preprocessing.scale);
    encs.push_back(std::move(t));
  }
  root.insert("encoders", std::move(encs));
  std::ostringstream out;
  out << root;
  return out.str();
}

}  // namespace histopipe::pipeline
