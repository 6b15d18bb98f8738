#include "histopipe/error.hpp"

namespace histopipe {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InsufficientTissue: return "InsufficientTissue";
    case ErrorCode::DegenerateCovariance: return "DegenerateCovariance";
    case ErrorCode::SingularStainMatrix: return "SingularStainMatrix";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::UnreadableImage: return "UnreadableImage";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::DuplicateImageId: return "DuplicateImageId";
    case ErrorCode::OddDimensions: return "OddDimensions";
    case ErrorCode::CropLargerThanImage: return "CropLargerThanImage";
    case ErrorCode::EmptyFeatureMap: return "EmptyFeatureMap";
    case ErrorCode::ModelLoadError: return "ModelLoadError";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::MixedProvenance: return "MixedProvenance";
    case ErrorCode::NegativeFeature: return "NegativeFeature";
    case ErrorCode::CorruptStore: return "CorruptStore";
    case ErrorCode::SingleClassData: return "SingleClassData";
    case ErrorCode::EmptyData: return "EmptyData";
    case ErrorCode::FeatureCountMismatch: return "FeatureCountMismatch";
    case ErrorCode::CorruptModel: return "CorruptModel";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::TooFewImagesPerClass: return "TooFewImagesPerClass";
    case ErrorCode::EmptyRecords: return "EmptyRecords";
    case ErrorCode::EmptyValues: return "EmptyValues";
    case ErrorCode::SingleClassRecords: return "SingleClassRecords";
    case ErrorCode::PartialStore: return "PartialStore";
    case ErrorCode::FoldCoverageError: return "FoldCoverageError";
    case ErrorCode::MissingModel: return "MissingModel";
    case ErrorCode::MissingArtifacts: return "MissingArtifacts";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace histopipe
