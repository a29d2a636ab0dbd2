#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace attnprobe {

enum class ErrorCode {
  // file formats
  IoFailure,
  BadMagic,
  TruncatedFile,
  ParseError,
  DimensionZero,
  RowNotStochastic,
  NegativeEntry,
  LabelOutOfRange,
  DuplicateUtterance,
  NegativeDuration,
  EmptyInventory,
  InvalidAlignment,
  // head metrics
  EmptyUtteranceSet,
  MismatchedModelShape,
  SampleLargerThanDataset,
  SingleHead,
  // prm
  LengthMismatch,
  LayerOutOfRange,
  EmptyHeadSet,
  // minimodel
  ShapeMismatch,
  NonFiniteActivation,
  MissingTensor,
  ShapeMismatchWithConfig,
  BadConfig,
  // synth
  BadSpec,
  // probe
  TooFewUtterances,
  BadRatio,
  EmptyTrainingSet,
  NonFiniteLoss,
  InventoryMismatch,
  // cli
  UnknownSubcommand,
  MissingFlag,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Exception carrying a machine-checkable error kind. Every failure raised by
/// the core library is an `Error`; callers branch on `code()`.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

  /// True for failures caused by the filesystem rather than by bad content.
  bool is_io() const noexcept { return code_ == ErrorCode::IoFailure; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace attnprobe
