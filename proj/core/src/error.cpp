#include "attnprobe/error.hpp"

namespace attnprobe {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DimensionZero: return "DimensionZero";
    case ErrorCode::RowNotStochastic: return "RowNotStochastic";
    case ErrorCode::NegativeEntry: return "NegativeEntry";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::DuplicateUtterance: return "DuplicateUtterance";
    case ErrorCode::NegativeDuration: return "NegativeDuration";
    case ErrorCode::EmptyInventory: return "EmptyInventory";
    case ErrorCode::InvalidAlignment: return "InvalidAlignment";
    case ErrorCode::EmptyUtteranceSet: return "EmptyUtteranceSet";
    case ErrorCode::MismatchedModelShape: return "MismatchedModelShape";
    case ErrorCode::SampleLargerThanDataset: return "SampleLargerThanDataset";
    case ErrorCode::SingleHead: return "SingleHead";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::LayerOutOfRange: return "LayerOutOfRange";
    case ErrorCode::EmptyHeadSet: return "EmptyHeadSet";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorCode::MissingTensor: return "MissingTensor";
    case ErrorCode::ShapeMismatchWithConfig: return "ShapeMismatchWithConfig";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::BadSpec: return "BadSpec";
    case ErrorCode::TooFewUtterances: return "TooFewUtterances";
    case ErrorCode::BadRatio: return "BadRatio";
    case ErrorCode::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::InventoryMismatch: return "InventoryMismatch";
    case ErrorCode::UnknownSubcommand: return "UnknownSubcommand";
    case ErrorCode::MissingFlag: return "MissingFlag";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace attnprobe
