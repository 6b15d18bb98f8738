#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "histopipe/boosting.hpp"
#include "histopipe/config.hpp"
#include "histopipe/descriptor_store.hpp"
#include "histopipe/evalkit.hpp"
#include "histopipe/patches.hpp"
#include "histopipe/report.hpp"

namespace histopipe::pipeline {

/// Where every stage reads and writes.
struct ArtifactLayout {
  std::filesystem::path root;

  std::filesystem::path descriptors() const { return root / "descriptors"; }
  std::filesystem::path models() const { return root / "models"; }
  std::filesystem::path bank_index() const { return models() / "bank.json"; }
  std::filesystem::path folds() const { return root / "folds.json"; }
  std::filesystem::path predictions() const { return root / "predictions.json"; }
  std::filesystem::path test_predictions() const { return root / "test_predictions.json"; }
  std::filesystem::path metrics() const { return root / "metrics.json"; }
  std::filesystem::path report() const { return root / "report"; }
  std::filesystem::path store(const std::string& encoder_id, int crop_size) const {
    return descriptors() / store::store_filename(encoder_id, crop_size);
  }
};

/// Result of a stage that may reuse earlier output.
struct StageOutcome {
  int computed = 0;
  int reused = 0;
};

// ---- ingest ----------------------------------------------------------------

/// Loads and validates the labelled dataset.
patches::DatasetManifest load_manifest(const PipelineConfig& config);

/// Hash of image ids, labels and image file contents.
std::string dataset_fingerprint(const patches::DatasetManifest& manifest);

/// Assigns folds and writes folds.json (unchanged content is not rewritten).
eval::FoldAssignment ingest(const PipelineConfig& config, const patches::DatasetManifest& manifest,
                            StageOutcome* outcome = nullptr);

void write_folds(const std::filesystem::path& path, const eval::FoldAssignment& folds,
                 const patches::DatasetManifest& manifest);
/// Throws MissingArtifacts.
eval::FoldAssignment read_folds(const std::filesystem::path& path);

// ---- extraction ------------------------------------------------------------

/// Hash of every setting and input a store's values depend on.
std::string store_fingerprint(const PipelineConfig& config, const features::EncoderSpec& encoder,
                              int crop_size, const std::string& dataset_fp);

/// One store per (encoder, crop size), n_augmentations rows per image.
/// Stores whose header and checksum validate against the current config are
/// kept as they are.
StageOutcome run_extraction(const PipelineConfig& config, const patches::DatasetManifest& manifest);

/// Loads every store of the grid in (encoder, size) order, checking that each
/// matches the current config and dataset. Throws MissingArtifacts or
/// PartialStore.
std::vector<store::DescriptorStore> load_stores(const PipelineConfig& config,
                                                const patches::DatasetManifest& manifest);

// ---- training --------------------------------------------------------------

struct BankEntry {
  int fold = 0;
  std::uint64_t seed = 0;
  int crop_size = 0;
  std::string encoder_id;
  std::string file;
  std::string fingerprint;
  /// Images whose descriptors the model was fitted on.
  std::vector<std::string> training_images;

  /// Name of the (encoder, size) model group, e.g. "resnet50_400".
  std::string group() const { return encoder_id + "_" + std::to_string(crop_size); }
};

struct ModelBank {
  int k = 0;
  std::vector<BankEntry> entries;
  /// Parallel to entries.
  std::vector<boosting::GbdtModel> models;

  std::size_t size() const noexcept { return entries.size(); }
};

/// Seed handed to the GBDT for one bank cell.
std::uint64_t cell_seed(const PipelineConfig& config, std::uint64_t seed);

/// For every (fold, seed, size, encoder) cell fits a GBDT on the descriptors of
/// all images outside the fold. Cells with a current model file are loaded
/// instead of refitted. Throws FoldCoverageError.
ModelBank train_bank(const PipelineConfig& config, const patches::DatasetManifest& manifest,
                     const eval::FoldAssignment& folds,
                     const std::vector<store::DescriptorStore>& stores,
                     StageOutcome* outcome = nullptr);

/// Reads bank.json and every model file. Throws MissingArtifacts or MissingModel.
ModelBank load_bank(const PipelineConfig& config);

/// Descriptions of every model that saw an image of the fold it is evaluated
/// on, or whose fold provenance is inconsistent. Empty when the bank is clean.
std::vector<std::string> leakage_violations(const ModelBank& bank, const eval::FoldAssignment& folds);

// ---- prediction ------------------------------------------------------------

struct CvPredictions {
  std::vector<eval::PredictionRecord> fused;
  /// Same records restricted to one (encoder, size) group, in grid order.
  std::vector<std::pair<std::string, std::vector<eval::PredictionRecord>>> groups;
};

/// Each image is predicted by the models of its own fold only; probabilities
/// are averaged over its augmentations and those models in a fixed order.
/// Throws MissingModel.
CvPredictions cross_validated_predict(const PipelineConfig& config,
                                      const patches::DatasetManifest& manifest,
                                      const eval::FoldAssignment& folds,
                                      const std::vector<store::DescriptorStore>& stores,
                                      const ModelBank& bank);

void write_predictions(const std::filesystem::path& path, const CvPredictions& p,
                       const std::string& fingerprint);
/// Throws MissingArtifacts.
CvPredictions read_predictions(const std::filesystem::path& path, std::string* fingerprint = nullptr);

struct TestPrediction {
  std::string image_id;
  std::string path;
  eval::Proba proba{};
  Label predicted_label = Label::Normal;
};

/// Runs the extraction grid on each image and averages over all descriptors
/// and every bank model of the matching (encoder, size).
std::vector<TestPrediction> predict_test(const std::vector<std::filesystem::path>& images,
                                         const ModelBank& bank, const PipelineConfig& config);

void write_test_predictions(const std::filesystem::path& path, const std::vector<TestPrediction>& p);

// ---- whole run -------------------------------------------------------------

struct RunSummary {
  StageOutcome extraction;
  StageOutcome training;
  bool predictions_reused = false;
  bool metrics_reused = false;
  report::MetricsReport metrics;
};

/// Stage entry points used by the CLI; each reuses current outputs.
StageOutcome stage_extract(const PipelineConfig& config);
StageOutcome stage_train(const PipelineConfig& config);
bool stage_predict(const PipelineConfig& config);
bool stage_evaluate(const PipelineConfig& config, report::MetricsReport* out = nullptr);
void stage_report(const PipelineConfig& config);

/// ingest → extract → train → predict → evaluate → report.
RunSummary run_all(const PipelineConfig& config);

}  // namespace histopipe::pipeline
