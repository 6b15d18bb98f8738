#include "histopipe/pipeline.hpp"

#include <exception>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>

#include "binary_io.hpp"
#include "fingerprint.hpp"
#include "histopipe/error.hpp"
#include "histopipe/log.hpp"

namespace histopipe::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Bumped whenever the meaning of stored values changes.
constexpr std::uint64_t kStoreFormatRevision = 1;
constexpr std::uint64_t kCellSeedStream = 0x5EED;

std::string file_hash(const fs::path& path) {
  const auto bytes = detail::read_file_bytes(path.string(), ErrorCode::MissingFile);
  return detail::hex64(fnv1a64_bytes(bytes.data(), bytes.size()));
}

json read_json(const fs::path& path) {
  std::vector<char> bytes;
  try {
    bytes = detail::read_file_bytes(path.string(), ErrorCode::MissingArtifacts);
  } catch (const Error&) {
    throw Error(ErrorCode::MissingArtifacts, "'" + path.string() + "' not found; run the earlier stages first");
  }
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MissingArtifacts, "'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  const std::string text = j.dump(1) + "\n";
  detail::write_file_atomic(path.string(), std::vector<char>(text.begin(), text.end()));
}

/// Rewrites only when the content changes, so reruns leave files untouched.
bool write_if_changed(const fs::path& path, const std::string& text) {
  if (fs::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    const std::string old((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (old == text) return false;
  }
  detail::write_file_atomic(path.string(), std::vector<char>(text.begin(), text.end()));
  return true;
}

bool is_full_scale(const PipelineConfig& config, int size) {
  const auto& f = config.extraction.full_scale_sizes;
  return std::find(f.begin(), f.end(), size) != f.end();
}

std::vector<std::string> image_ids(const patches::DatasetManifest& manifest) {
  std::vector<std::string> ids;
  for (const auto& r : manifest.records) ids.push_back(r.image_id);
  return ids;
}

std::vector<std::unique_ptr<features::Encoder>> load_encoders(
    const std::vector<features::EncoderSpec>& specs) {
  std::vector<std::unique_ptr<features::Encoder>> out;
  for (const auto& s : specs) out.push_back(features::Encoder::load(s));
  return out;
}

std::vector<const features::Encoder*> raw(const std::vector<std::unique_ptr<features::Encoder>>& v) {
  std::vector<const features::Encoder*> out;
  for (const auto& e : v) out.push_back(e.get());
  return out;
}

/// Position of (augmentation, size, encoder) in build_descriptor_set output.
std::size_t descriptor_index(int a, std::size_t size_index, std::size_t encoder_index,
                             std::size_t num_sizes, std::size_t num_encoders) {
  return (static_cast<std::size_t>(a) * num_sizes + size_index) * num_encoders + encoder_index;
}

/// Stores are ordered encoder-major, then size.
std::size_t store_index(std::size_t encoder_index, std::size_t size_index, std::size_t num_sizes) {
  return encoder_index * num_sizes + size_index;
}

json record_json(const eval::PredictionRecord& r) {
  return {{"image_id", r.image_id},
          {"true_label", std::string(to_string(r.true_label))},
          {"proba", r.proba},
          {"predicted_label", std::string(to_string(r.predicted_label))}};
}

Label label_from_json(const json& j) {
  const auto l = parse_label(j.get<std::string>());
  if (!l) throw Error(ErrorCode::MissingArtifacts, "unknown label '" + j.get<std::string>() + "'");
  return *l;
}

eval::PredictionRecord record_from_json(const json& j) {
  eval::PredictionRecord r;
  r.image_id = j.at("image_id").get<std::string>();
  r.true_label = label_from_json(j.at("true_label"));
  r.proba = j.at("proba").get<eval::Proba>();
  r.predicted_label = label_from_json(j.at("predicted_label"));
  return r;
}

/// Re-raises the first captured error, if any.
void rethrow_first(const std::vector<std::exception_ptr>& errors) {
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string predictions_fingerprint(const ModelBank& bank,
                                    const std::vector<store::DescriptorStore>& stores,
                                    const eval::FoldAssignment& folds) {
  detail::Fingerprint fp;
  for (const auto& e : bank.entries) fp.add(e.fingerprint);
  for (const auto& s : stores) fp.add(s.header().payload_checksum);
  for (const auto& [id, f] : folds.fold_of) fp.add(id).add_i64(f);
  return fp.hex();
}

}  // namespace

// ---- ingest ----------------------------------------------------------------

patches::DatasetManifest load_manifest(const PipelineConfig& config) {
  auto manifest = patches::load_dataset(config.dataset_root, config.labels_file, false);
  if (manifest.records.empty()) {
    throw Error(ErrorCode::ConfigError, "labels file '" + config.labels_file.string() + "' lists no images");
  }
  return manifest;
}

std::string dataset_fingerprint(const patches::DatasetManifest& manifest) {
  detail::Fingerprint fp;
  for (const auto& r : manifest.records) {
    fp.add(r.image_id).add_i64(index_of(r.label)).add(file_hash(r.source_path));
  }
  return fp.hex();
}

void write_folds(const fs::path& path, const eval::FoldAssignment& folds,
                 const patches::DatasetManifest& manifest) {
  json assignment = json::object();
  json labels = json::object();
  for (const auto& r : manifest.records) {
    assignment[r.image_id] = folds.fold(r.image_id);
    labels[r.image_id] = std::string(to_string(r.label));
  }
  write_if_changed(path, json{{"k", folds.k}, {"fold_of", assignment}, {"labels", labels}}.dump(1) + "\n");
}

eval::FoldAssignment read_folds(const fs::path& path) {
  const json j = read_json(path);
  try {
    eval::FoldAssignment f;
    f.k = j.at("k").get<int>();
    f.fold_of = j.at("fold_of").get<std::map<std::string, int>>();
    return f;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MissingArtifacts, "'" + path.string() + "' is incomplete: " + e.what());
  }
}

eval::FoldAssignment ingest(const PipelineConfig& config, const patches::DatasetManifest& manifest,
                            StageOutcome* outcome) {
  const ArtifactLayout layout{config.output_dir};
  const auto folds = eval::stratified_group_kfold(manifest, config.k, config.seed);
  fs::create_directories(layout.root);
  const bool existed = fs::exists(layout.folds());
  write_folds(layout.folds(), folds, manifest);
  if (outcome) (existed ? outcome->reused : outcome->computed) += 1;
  return folds;
}

// ---- extraction ------------------------------------------------------------

std::string store_fingerprint(const PipelineConfig& config, const features::EncoderSpec& e,
                              int crop_size, const std::string& dataset_fp) {
  const auto& x = config.extraction;
  detail::Fingerprint fp;
  fp.add_u64(kStoreFormatRevision).add(dataset_fp);
  fp.add(e.id()).add_u64(e.descriptor_len).add_u64(e.stub_seed).add_i64(e.stub_input_side);
  if (!e.model_path.empty()) fp.add(file_hash(e.model_path));
  for (const auto& t : e.tap_layers) fp.add(t);
  for (const int c : e.tap_channels) fp.add_i64(c);
  fp.add_u64(e.preprocessing.bgr).add_f64(e.preprocessing.scale);
  for (const double m : e.preprocessing.mean) fp.add_f64(m);
  fp.add_i64(crop_size).add_u64(is_full_scale(config, crop_size));
  fp.add_i64(x.crops.crops_per_size).add_i64(x.n_augmentations);
  fp.add_u64(x.normalize).add_u64(x.affine).add_u64(x.seed).add_u64(x.crops.seed);
  fp.add_f64(x.stain.i0).add_f64(x.stain.beta).add_f64(x.stain.alpha);
  fp.add_f64(x.stain.concentration_percentile);
  for (const double v : x.stain.reference_stains.hematoxylin()) fp.add_f64(v);
  for (const double v : x.stain.reference_stains.eosin()) fp.add_f64(v);
  for (const double v : x.stain.reference_max_concentrations) fp.add_f64(v);
  fp.add_f64(x.pool.p);
  return fp.hex();
}

namespace {

/// True when the file at `path` is a complete store for the current grid.
bool store_is_current(const fs::path& path, const std::string& fingerprint,
                      const std::vector<std::string>& ids, const PipelineConfig& config,
                      const features::EncoderSpec& e) {
  if (!fs::exists(path)) return false;
  try {
    const auto s = store::read_store(path);
    const auto& h = s.header();
    return h.config_fingerprint == fingerprint && h.image_ids == ids &&
           h.augmentation_count == config.extraction.n_augmentations &&
           h.descriptor_len == e.descriptor_len;
  } catch (const Error& err) {
    log::info("discarding " + path.string() + ": " + err.detail());
    return false;
  }
}

}  // namespace

StageOutcome run_extraction(const PipelineConfig& config, const patches::DatasetManifest& manifest) {
  const ArtifactLayout layout{config.output_dir};
  const auto sizes = config.crop_sizes();
  const auto ids = image_ids(manifest);
  const std::string dataset_fp = dataset_fingerprint(manifest);
  StageOutcome outcome;

  // Encoders with at least one stale store are rerun over the whole grid.
  std::vector<features::EncoderSpec> stale_specs;
  std::vector<std::vector<bool>> stale_sizes;
  std::vector<std::vector<std::string>> fingerprints;
  for (const auto& e : config.encoders) {
    std::vector<bool> stale;
    std::vector<std::string> fps;
    for (const int size : sizes) {
      const auto fp = store_fingerprint(config, e, size, dataset_fp);
      const bool current = store_is_current(layout.store(std::string(e.id()), size), fp, ids, config, e);
      stale.push_back(!current);
      fps.push_back(fp);
      (current ? outcome.reused : outcome.computed) += 1;
    }
    if (std::find(stale.begin(), stale.end(), true) != stale.end()) {
      stale_specs.push_back(e);
      stale_sizes.push_back(std::move(stale));
      fingerprints.push_back(std::move(fps));
    }
  }
  if (stale_specs.empty()) {
    log::info("extract: all " + std::to_string(outcome.reused) + " descriptor stores are current");
    return outcome;
  }

  const auto encoders = load_encoders(stale_specs);
  const auto encoder_ptrs = raw(encoders);
  std::vector<store::DescriptorStore> stores;
  for (std::size_t ei = 0; ei < stale_specs.size(); ++ei) {
    for (std::size_t si = 0; si < sizes.size(); ++si) {
      store::StoreHeader h;
      h.encoder_id = std::string(stale_specs[ei].id());
      h.crop_size = sizes[si];
      h.descriptor_len = stale_specs[ei].descriptor_len;
      h.image_ids = ids;
      h.augmentation_count = config.extraction.n_augmentations;
      h.scale = is_full_scale(config, sizes[si]) ? "full" : "half";
      h.config_fingerprint = fingerprints[ei][si];
      stores.emplace_back(std::move(h));
    }
  }

  log::info("extract: " + std::to_string(outcome.computed) + " stores over " +
            std::to_string(ids.size()) + " images");
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& rec = manifest.records[i];
    const auto descs = features::build_descriptor_set(rec, encoder_ptrs, config.extraction);
    for (int a = 0; a < config.extraction.n_augmentations; ++a) {
      for (std::size_t si = 0; si < sizes.size(); ++si) {
        for (std::size_t ei = 0; ei < stale_specs.size(); ++ei) {
          const auto& d = descs[descriptor_index(a, si, ei, sizes.size(), stale_specs.size())];
          stores[store_index(ei, si, sizes.size())].set_row(i, a, d.values);
        }
      }
    }
    log::debug("extract: " + rec.image_id + " done (" + std::to_string(i + 1) + "/" +
               std::to_string(ids.size()) + ")");
  }

  for (std::size_t ei = 0; ei < stale_specs.size(); ++ei) {
    for (std::size_t si = 0; si < sizes.size(); ++si) {
      if (!stale_sizes[ei][si]) continue;
      auto& s = stores[store_index(ei, si, sizes.size())];
      s.seal();
      store::write_store(layout.store(s.header().encoder_id, s.header().crop_size), s);
    }
  }
  return outcome;
}

std::vector<store::DescriptorStore> load_stores(const PipelineConfig& config,
                                                const patches::DatasetManifest& manifest) {
  const ArtifactLayout layout{config.output_dir};
  const auto ids = image_ids(manifest);
  const std::string dataset_fp = dataset_fingerprint(manifest);
  std::vector<store::DescriptorStore> stores;
  for (const auto& e : config.encoders) {
    for (const int size : config.crop_sizes()) {
      const auto path = layout.store(std::string(e.id()), size);
      if (!fs::exists(path)) {
        throw Error(ErrorCode::MissingArtifacts, "descriptor store '" + path.string() + "' is missing; run extract");
      }
      auto s = store::read_store(path);
      if (s.header().config_fingerprint != store_fingerprint(config, e, size, dataset_fp) ||
          s.header().image_ids != ids ||
          s.header().augmentation_count != config.extraction.n_augmentations) {
        throw Error(ErrorCode::MissingArtifacts,
                    "descriptor store '" + path.string() + "' is stale for this config; run extract");
      }
      stores.push_back(std::move(s));
    }
  }
  return stores;
}

// ---- training --------------------------------------------------------------

std::uint64_t cell_seed(const PipelineConfig& config, std::uint64_t seed) {
  return make_key(config.seed, kCellSeedStream, seed);
}

namespace {

std::string model_filename(const BankEntry& e) {
  return e.encoder_id + "_" + std::to_string(e.crop_size) + "_fold" + std::to_string(e.fold) +
         "_seed" + std::to_string(e.seed) + ".hpgbdt";
}

std::string cell_fingerprint(const BankEntry& e, const store::DescriptorStore& s,
                             const boosting::GbdtParams& params) {
  detail::Fingerprint fp;
  fp.add(s.header().payload_checksum).add(s.header().config_fingerprint);
  fp.add_i64(e.fold).add_u64(e.seed);
  for (const auto& id : e.training_images) fp.add(id);
  fp.add_i64(params.num_rounds).add_f64(params.learning_rate).add_i64(params.max_leaves);
  fp.add_i64(params.min_samples_leaf).add_f64(params.feature_fraction);
  fp.add_f64(params.bagging_fraction).add_i64(params.num_bins).add_f64(params.lambda_l2);
  fp.add_f64(params.min_child_hessian).add_i64(params.num_classes).add_u64(params.seed);
  return fp.hex();
}

json bank_json(const ModelBank& bank) {
  json entries = json::array();
  for (const auto& e : bank.entries) {
    entries.push_back({{"fold", e.fold},
                       {"seed", e.seed},
                       {"crop_size", e.crop_size},
                       {"encoder_id", e.encoder_id},
                       {"file", e.file},
                       {"fingerprint", e.fingerprint},
                       {"training_images", e.training_images}});
  }
  return {{"k", bank.k}, {"entries", entries}};
}

std::vector<BankEntry> entries_from_json(const json& j) {
  std::vector<BankEntry> out;
  for (const auto& e : j.at("entries")) {
    out.push_back({e.at("fold").get<int>(), e.at("seed").get<std::uint64_t>(),
                   e.at("crop_size").get<int>(), e.at("encoder_id").get<std::string>(),
                   e.at("file").get<std::string>(), e.at("fingerprint").get<std::string>(),
                   e.at("training_images").get<std::vector<std::string>>()});
  }
  return out;
}

boosting::GbdtModel read_model(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingModel, "model file '" + path.string() + "' is missing");
  const auto bytes = detail::read_file_bytes(path.string(), ErrorCode::MissingModel);
  try {
    return boosting::deserialize_model(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), "'" + path.string() + "': " + e.detail());
  }
}

}  // namespace

ModelBank train_bank(const PipelineConfig& config, const patches::DatasetManifest& manifest,
                     const eval::FoldAssignment& folds,
                     const std::vector<store::DescriptorStore>& stores, StageOutcome* outcome) {
  const ArtifactLayout layout{config.output_dir};
  const auto sizes = config.crop_sizes();
  if (stores.size() != config.encoders.size() * sizes.size()) {
    throw Error(ErrorCode::MissingArtifacts, "expected " + std::to_string(config.encoders.size() * sizes.size()) +
                                                 " descriptor stores, got " + std::to_string(stores.size()));
  }
  std::map<std::string, Label> label_of;
  for (const auto& r : manifest.records) label_of[r.image_id] = r.label;
  for (const auto& s : stores) {
    for (const auto& id : s.header().image_ids) {
      folds.fold(id);  // throws FoldCoverageError
      if (!label_of.contains(id)) {
        throw Error(ErrorCode::FoldCoverageError, "store image '" + id + "' is not in the dataset");
      }
    }
  }

  // Reusable cells from a previous run.
  std::map<std::string, std::string> previous;  // file -> fingerprint
  if (fs::exists(layout.bank_index())) {
    try {
      for (const auto& e : entries_from_json(read_json(layout.bank_index()))) previous[e.file] = e.fingerprint;
    } catch (const std::exception& e) {
      log::info(std::string("ignoring unreadable bank index: ") + e.what());
    }
  }

  ModelBank bank;
  bank.k = config.k;
  std::vector<std::size_t> cell_store;
  for (std::size_t ei = 0; ei < config.encoders.size(); ++ei) {
    for (std::size_t si = 0; si < sizes.size(); ++si) {
      const auto& s = stores[store_index(ei, si, sizes.size())];
      for (int f = 0; f < config.k; ++f) {
        std::vector<std::string> training;
        for (const auto& id : s.header().image_ids) {
          if (folds.fold(id) != f) training.push_back(id);
        }
        for (const std::uint64_t seed : config.seeds) {
          BankEntry e{f, seed, sizes[si], std::string(config.encoders[ei].id()), "", "", training};
          e.file = model_filename(e);
          boosting::GbdtParams params = config.gbdt;
          params.seed = cell_seed(config, seed);
          e.fingerprint = cell_fingerprint(e, s, params);
          bank.entries.push_back(std::move(e));
          cell_store.push_back(store_index(ei, si, sizes.size()));
        }
      }
    }
  }
  bank.models.resize(bank.entries.size());

  std::vector<bool> reuse(bank.entries.size(), false);
  for (std::size_t c = 0; c < bank.entries.size(); ++c) {
    const auto& e = bank.entries[c];
    const auto it = previous.find(e.file);
    if (it == previous.end() || it->second != e.fingerprint) continue;
    try {
      bank.models[c] = read_model(layout.models() / e.file);
      reuse[c] = true;
    } catch (const Error& err) {
      log::info("refitting " + e.file + ": " + err.detail());
    }
  }
  const auto todo = static_cast<std::size_t>(std::count(reuse.begin(), reuse.end(), false));
  if (outcome) {
    outcome->computed += static_cast<int>(todo);
    outcome->reused += static_cast<int>(bank.entries.size() - todo);
  }
  log::info("train: " + std::to_string(todo) + " of " + std::to_string(bank.entries.size()) +
            " models to fit");
  fs::create_directories(layout.models());

  std::vector<std::exception_ptr> errors(bank.entries.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(bank.entries.size()); ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    if (reuse[c]) continue;
    try {
      const auto& e = bank.entries[c];
      const auto& s = stores[cell_store[c]];
      boosting::TrainingMatrix m;
      m.num_features = s.cols();
      for (std::size_t i = 0; i < s.header().image_ids.size(); ++i) {
        const auto& id = s.header().image_ids[i];
        if (folds.fold(id) == e.fold) continue;
        for (int a = 0; a < s.header().augmentation_count; ++a) {
          m.add_row(s.row(i, a), index_of(label_of.at(id)), id);
        }
      }
      boosting::GbdtParams params = config.gbdt;
      params.seed = cell_seed(config, e.seed);
      bank.models[c] = boosting::fit(m, params);
      detail::write_file_atomic((layout.models() / e.file).string(), boosting::serialize_model(bank.models[c]));
      log::debug("train: " + e.file + " fitted");
    } catch (const Error& err) {
      errors[c] = std::make_exception_ptr(
          Error(err.code(), "model '" + bank.entries[c].file + "': " + err.detail()));
    } catch (...) {
      errors[c] = std::current_exception();
    }
  }
  rethrow_first(errors);
  write_json(layout.bank_index(), bank_json(bank));
  return bank;
}

ModelBank load_bank(const PipelineConfig& config) {
  const ArtifactLayout layout{config.output_dir};
  const json j = read_json(layout.bank_index());
  ModelBank bank;
  try {
    bank.k = j.at("k").get<int>();
    bank.entries = entries_from_json(j);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MissingArtifacts, "bank index is incomplete: " + std::string(e.what()));
  }
  if (bank.entries.size() != config.bank_size()) {
    throw Error(ErrorCode::MissingModel, "bank holds " + std::to_string(bank.entries.size()) +
                                             " models, config expects " + std::to_string(config.bank_size()));
  }
  for (const auto& e : bank.entries) bank.models.push_back(read_model(layout.models() / e.file));
  return bank;
}

std::vector<std::string> leakage_violations(const ModelBank& bank, const eval::FoldAssignment& folds) {
  std::vector<std::string> out;
  for (const auto& e : bank.entries) {
    if (e.fold < 0 || e.fold >= folds.k) {
      out.push_back(e.file + ": evaluation fold " + std::to_string(e.fold) + " out of range");
      continue;
    }
    for (const auto& id : e.training_images) {
      const auto it = folds.fold_of.find(id);
      if (it == folds.fold_of.end()) {
        out.push_back(e.file + ": trained on unassigned image '" + id + "'");
      } else if (it->second == e.fold) {
        out.push_back(e.file + ": trained on '" + id + "' from its own evaluation fold");
      }
    }
  }
  return out;
}

// ---- prediction ------------------------------------------------------------

CvPredictions cross_validated_predict(const PipelineConfig& config,
                                      const patches::DatasetManifest& manifest,
                                      const eval::FoldAssignment& folds,
                                      const std::vector<store::DescriptorStore>& stores,
                                      const ModelBank& bank) {
  const auto sizes = config.crop_sizes();
  const std::size_t num_groups = config.encoders.size() * sizes.size();
  std::vector<std::string> group_names;
  for (const auto& e : config.encoders) {
    for (const int size : sizes) group_names.push_back(std::string(e.id()) + "_" + std::to_string(size));
  }

  // models[group][fold] -> bank indices in bank order
  std::vector<std::vector<std::vector<std::size_t>>> models(
      num_groups, std::vector<std::vector<std::size_t>>(static_cast<std::size_t>(folds.k)));
  for (std::size_t m = 0; m < bank.entries.size(); ++m) {
    const auto& e = bank.entries[m];
    const auto g = std::find(group_names.begin(), group_names.end(), e.group());
    if (g == group_names.end() || e.fold < 0 || e.fold >= folds.k) continue;
    models[static_cast<std::size_t>(g - group_names.begin())][static_cast<std::size_t>(e.fold)].push_back(m);
  }

  const std::size_t n = manifest.records.size();
  CvPredictions out;
  out.fused.resize(n);
  for (const auto& name : group_names) out.groups.emplace_back(name, std::vector<eval::PredictionRecord>(n));

  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    try {
      const auto& rec = manifest.records[i];
      const auto fold = static_cast<std::size_t>(folds.fold(rec.image_id));
      eval::Proba fused_sum{};
      std::size_t fused_count = 0;
      for (std::size_t g = 0; g < num_groups; ++g) {
        const auto& s = stores[g];
        const auto row = s.image_index(rec.image_id);
        if (!row) throw Error(ErrorCode::FoldCoverageError, "image '" + rec.image_id + "' missing from store");
        const auto& cell_models = models[g][fold];
        if (cell_models.empty()) {
          throw Error(ErrorCode::MissingModel, "no model of group " + group_names[g] + " for fold " +
                                                   std::to_string(fold));
        }
        eval::Proba sum{};
        std::size_t count = 0;
        for (const std::size_t m : cell_models) {
          for (int a = 0; a < s.header().augmentation_count; ++a) {
            const auto p = boosting::predict_proba(bank.models[m], s.row(*row, a), s.cols());
            for (std::size_t c = 0; c < sum.size(); ++c) sum[c] += p[c];
            ++count;
          }
        }
        for (std::size_t c = 0; c < sum.size(); ++c) fused_sum[c] += sum[c];
        fused_count += count;
        for (double& v : sum) v /= static_cast<double>(count);
        out.groups[g].second[i] = eval::PredictionRecord::from_proba(rec.image_id, rec.label, sum);
      }
      for (double& v : fused_sum) v /= static_cast<double>(fused_count);
      out.fused[i] = eval::PredictionRecord::from_proba(rec.image_id, rec.label, fused_sum);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  rethrow_first(errors);
  return out;
}

void write_predictions(const fs::path& path, const CvPredictions& p, const std::string& fingerprint) {
  json fused = json::array();
  for (const auto& r : p.fused) fused.push_back(record_json(r));
  json groups = json::array();
  for (const auto& [name, records] : p.groups) {
    json rs = json::array();
    for (const auto& r : records) rs.push_back(record_json(r));
    groups.push_back({{"name", name}, {"records", rs}});
  }
  write_json(path, {{"fingerprint", fingerprint}, {"fused", fused}, {"groups", groups}});
}

CvPredictions read_predictions(const fs::path& path, std::string* fingerprint) {
  const json j = read_json(path);
  CvPredictions p;
  try {
    if (fingerprint) *fingerprint = j.at("fingerprint").get<std::string>();
    for (const auto& r : j.at("fused")) p.fused.push_back(record_from_json(r));
    for (const auto& g : j.at("groups")) {
      std::vector<eval::PredictionRecord> rs;
      for (const auto& r : g.at("records")) rs.push_back(record_from_json(r));
      p.groups.emplace_back(g.at("name").get<std::string>(), std::move(rs));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MissingArtifacts, "'" + path.string() + "' is incomplete: " + e.what());
  }
  if (p.fused.empty()) throw Error(ErrorCode::MissingArtifacts, "'" + path.string() + "' holds no predictions");
  return p;
}

std::vector<TestPrediction> predict_test(const std::vector<fs::path>& images, const ModelBank& bank,
                                         const PipelineConfig& config) {
  const auto sizes = config.crop_sizes();
  const auto encoders = load_encoders(config.encoders);
  const auto encoder_ptrs = raw(encoders);
  std::vector<TestPrediction> out;
  for (const auto& path : images) {
    const RgbImage img = read_image(path);
    const std::string id = path.stem().string();
    const auto descs = features::build_descriptor_set(img, id, encoder_ptrs, config.extraction);
    eval::Proba sum{};
    std::size_t count = 0;
    for (std::size_t ei = 0; ei < config.encoders.size(); ++ei) {
      for (std::size_t si = 0; si < sizes.size(); ++si) {
        const std::string group = std::string(config.encoders[ei].id()) + "_" + std::to_string(sizes[si]);
        std::vector<std::vector<float>> rows;
        for (int a = 0; a < config.extraction.n_augmentations; ++a) {
          const auto& d = descs[descriptor_index(a, si, ei, sizes.size(), config.encoders.size())];
          rows.emplace_back(d.values.begin(), d.values.end());
        }
        for (std::size_t m = 0; m < bank.entries.size(); ++m) {
          if (bank.entries[m].group() != group) continue;
          for (const auto& row : rows) {
            const auto p = boosting::predict_proba(bank.models[m], row, row.size());
            for (std::size_t c = 0; c < sum.size(); ++c) sum[c] += p[c];
            ++count;
          }
        }
      }
    }
    if (count == 0) throw Error(ErrorCode::MissingModel, "no bank model matches the extraction grid");
    for (double& v : sum) v /= static_cast<double>(count);
    TestPrediction t{id, path.string(), sum, kAllLabels[static_cast<std::size_t>(eval::argmax(sum))]};
    out.push_back(std::move(t));
    log::debug("predict: " + id + " -> " + std::string(to_string(out.back().predicted_label)));
  }
  return out;
}

void write_test_predictions(const fs::path& path, const std::vector<TestPrediction>& preds) {
  json records = json::array();
  for (const auto& p : preds) {
    records.push_back({{"image_id", p.image_id},
                       {"path", p.path},
                       {"proba", p.proba},
                       {"predicted_label", std::string(to_string(p.predicted_label))}});
  }
  write_json(path, {{"records", records}});
}

// ---- stages ----------------------------------------------------------------

StageOutcome stage_extract(const PipelineConfig& config) {
  return run_extraction(config, load_manifest(config));
}

StageOutcome stage_train(const PipelineConfig& config) {
  const auto manifest = load_manifest(config);
  const auto folds = ingest(config, manifest);
  const auto stores = load_stores(config, manifest);
  StageOutcome outcome;
  const auto bank = train_bank(config, manifest, folds, stores, &outcome);
  const auto violations = leakage_violations(bank, folds);
  if (!violations.empty()) throw Error(ErrorCode::FoldCoverageError, "leakage audit: " + violations.front());
  return outcome;
}

bool stage_predict(const PipelineConfig& config) {
  const ArtifactLayout layout{config.output_dir};
  const auto manifest = load_manifest(config);
  const auto folds = ingest(config, manifest);
  const auto stores = load_stores(config, manifest);
  const auto bank = load_bank(config);
  const std::string fp = predictions_fingerprint(bank, stores, folds);
  if (fs::exists(layout.predictions())) {
    std::string old;
    try {
      read_predictions(layout.predictions(), &old);
      if (old == fp) {
        log::info("predict: cross-validated predictions are current");
        return true;
      }
    } catch (const Error&) {
    }
  }
  const auto preds = cross_validated_predict(config, manifest, folds, stores, bank);
  write_predictions(layout.predictions(), preds, fp);
  return false;
}

bool stage_evaluate(const PipelineConfig& config, report::MetricsReport* out) {
  const ArtifactLayout layout{config.output_dir};
  const auto folds = read_folds(layout.folds());
  const auto pred_bytes = detail::read_file_bytes(layout.predictions().string(), ErrorCode::MissingArtifacts);
  detail::Fingerprint fp;
  fp.add(std::string_view(pred_bytes.data(), pred_bytes.size()));
  for (const double t : config.setpoints) fp.add_f64(t);
  for (const auto& [id, f] : folds.fold_of) fp.add(id).add_i64(f);

  if (fs::exists(layout.metrics())) {
    try {
      const json old = read_json(layout.metrics());
      if (old.value("fingerprint", std::string()) == fp.hex()) {
        if (out) *out = report::metrics_from_json(old);
        log::info("evaluate: metrics are current");
        return true;
      }
    } catch (const Error&) {
    }
  }
  const auto preds = read_predictions(layout.predictions());
  const auto metrics = report::compute_metrics(preds.fused, preds.groups, folds, config.setpoints);
  json j = report::to_json(metrics);
  j["fingerprint"] = fp.hex();
  write_json(layout.metrics(), j);
  if (out) *out = metrics;
  return false;
}

void stage_report(const PipelineConfig& config) {
  const ArtifactLayout layout{config.output_dir};
  read_predictions(layout.predictions());
  const auto metrics = report::metrics_from_json(read_json(layout.metrics()));
  report::write_report(metrics, layout.report());
}

RunSummary run_all(const PipelineConfig& config) {
  RunSummary summary;
  const auto manifest = load_manifest(config);
  ingest(config, manifest);
  summary.extraction = run_extraction(config, manifest);
  summary.training = stage_train(config);
  summary.predictions_reused = stage_predict(config);
  summary.metrics_reused = stage_evaluate(config, &summary.metrics);
  stage_report(config);
  return summary;
}

}  // namespace histopipe::pipeline
