#include "cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <functional>
#include <iostream>

#include "histopipe/config.hpp"
#include "histopipe/error.hpp"
#include "histopipe/kernels.hpp"
#include "histopipe/log.hpp"
#include "histopipe/pipeline.hpp"

namespace histopipe::cli {

namespace {

bool is_validation_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::MissingFile:
    case ErrorCode::UnknownLabel:
    case ErrorCode::DuplicateImageId:
    case ErrorCode::UnreadableImage:
    case ErrorCode::InvalidArgument:
    case ErrorCode::TooFewImagesPerClass:
    case ErrorCode::CropLargerThanImage:
    case ErrorCode::OddDimensions:
      return true;
    default:
      return false;
  }
}

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  int jobs = 0;
  std::int64_t seed = -1;
  bool quiet = false;
  int verbose = 0;
  std::vector<std::string> images;
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Breast-histology classification pipeline: stain normalization, CNN descriptors, "
               "gradient-boosted trees and cross-validated evaluation."};
  app.name("histopipe");
  Options opt;
  app.add_option("-c,--config", opt.config_path, "Pipeline config (TOML)")->required();
  app.add_option("--set", opt.overrides, "Override a config value, e.g. --set gbdt.num_rounds=50")
      ->allow_extra_args(false);
  app.add_option("-j,--jobs", opt.jobs, "Worker cap for parallel stages")->check(CLI::PositiveNumber);
  app.add_option("--seed", opt.seed, "Master seed override")->check(CLI::NonNegativeNumber);
  app.add_flag("-q,--quiet", opt.quiet, "Only report errors");
  app.add_flag("-v,--verbose", opt.verbose, "Per-item progress");
  app.require_subcommand(1, 1);
  app.fallthrough();

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"ingest", "Validate the dataset and assign cross-validation folds"},
      {"extract", "Build descriptor stores for every (encoder, crop size)"},
      {"train", "Fit the model bank, one GBDT per (fold, seed, size, encoder)"},
      {"predict", "Cross-validated predictions, or test predictions with --images"},
      {"evaluate", "Compute accuracy, confusion matrix, ROC and operating points"},
      {"report", "Write the accuracy table CSV, ROC CSV/SVG and confusion CSV"},
      {"run-all", "Run every stage in order"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) subs[name] = app.add_subcommand(name, help);
  subs["predict"]->add_option("--images", opt.images, "Test images to classify with the whole bank");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "histopipe: " << e.what() << "\n" << "Run with --help for usage.\n";
    return kExitValidation;
  }

  log::set_level(opt.quiet ? log::Level::Quiet : (opt.verbose > 0 ? log::Level::Debug : log::Level::Info));
  if (opt.jobs > 0) kernels::set_max_threads(opt.jobs);

  std::string stage = "config";
  try {
    auto overrides = opt.overrides;
    if (opt.seed >= 0) overrides.push_back("seed=" + std::to_string(opt.seed));
    auto config = pipeline::load_config(opt.config_path, overrides);
    if (const char* cache = std::getenv("HISTOPIPE_CACHE"); cache && *cache) {
      config.output_dir = std::filesystem::absolute(cache);
    }

    const std::string command = app.get_subcommands().front()->get_name();
    stage = command;
    if (command == "ingest") {
      const auto manifest = pipeline::load_manifest(config);
      const auto folds = pipeline::ingest(config, manifest);
      out << "ingested " << manifest.records.size() << " images into " << folds.k << " folds\n";
    } else if (command == "extract") {
      const auto o = pipeline::stage_extract(config);
      out << "descriptor stores: " << o.computed << " built, " << o.reused << " reused\n";
    } else if (command == "train") {
      const auto o = pipeline::stage_train(config);
      out << "models: " << o.computed << " fitted, " << o.reused << " reused\n";
    } else if (command == "predict") {
      std::vector<std::filesystem::path> images(opt.images.begin(), opt.images.end());
      if (images.empty()) images = config.test_images;
      if (images.empty()) {
        const bool reused = pipeline::stage_predict(config);
        out << "cross-validated predictions " << (reused ? "reused" : "written") << "\n";
      } else {
        const auto bank = pipeline::load_bank(config);
        const auto preds = pipeline::predict_test(images, bank, config);
        const pipeline::ArtifactLayout layout{config.output_dir};
        pipeline::write_test_predictions(layout.test_predictions(), preds);
        for (const auto& p : preds) out << p.image_id << "\t" << to_string(p.predicted_label) << "\n";
      }
    } else if (command == "evaluate") {
      report::MetricsReport m;
      pipeline::stage_evaluate(config, &m);
      out << "accuracy " << m.fused.mean << " +/- " << m.fused.std << " (4-class), AUC " << m.roc.auc
          << "\n";
    } else if (command == "report") {
      pipeline::stage_report(config);
      out << "report written to " << pipeline::ArtifactLayout{config.output_dir}.report().string() << "\n";
    } else if (command == "run-all") {
      const auto s = pipeline::run_all(config);
      out << "4-class accuracy " << s.metrics.fused.mean << " +/- " << s.metrics.fused.std
          << ", carcinoma AUC " << s.metrics.roc.auc << "\n";
    }
    return kExitOk;
  } catch (const Error& e) {
    err << "histopipe: " << stage << " failed: " << e.what() << "\n";
    return is_validation_error(e.code()) ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    err << "histopipe: " << stage << " failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace histopipe::cli
