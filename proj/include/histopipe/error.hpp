#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace histopipe {

enum class ErrorCode {
  // stainlab
  InsufficientTissue,
  DegenerateCovariance,
  SingularStainMatrix,
  InvalidArgument,
  // patches
  MissingFile,
  UnreadableImage,
  UnknownLabel,
  DuplicateImageId,
  OddDimensions,
  CropLargerThanImage,
  // features
  EmptyFeatureMap,
  ModelLoadError,
  ShapeMismatch,
  MixedProvenance,
  NegativeFeature,
  CorruptStore,
  // boosting
  SingleClassData,
  EmptyData,
  FeatureCountMismatch,
  CorruptModel,
  VersionMismatch,
  // evalkit
  TooFewImagesPerClass,
  EmptyRecords,
  EmptyValues,
  SingleClassRecords,
  // pipeline / cli
  PartialStore,
  FoldCoverageError,
  MissingModel,
  MissingArtifacts,
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it to an exit status without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

  ErrorCode code() const noexcept { return code_; }
  /// Message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace histopipe
