#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace locaris {

enum class Errc {
  // telemetry
  AllReadingsDropped,
  SchemaError,
  RangeError,
  EmptyDataset,
  TooFewAPs,
  InvalidSample,
  // tokenizer
  UnknownToken,
  EmptyBatch,
  // numerics
  ShapeMismatch,
  NotScalar,
  NoTape,
  NonFinite,
  CheckpointFormat,
  // model
  AlreadyAdapted,
  SequenceTooLong,
  EmptyMaskRow,
  UnsupportedBits,
  InvalidConfig,
  // training
  NotAdapted,
  BadFraction,
  BadTarget,
  // simulator
  UnknownPreset,
  // baselines
  UnknownAP,
  EmptyTrain,
  BadK,
  // eval
  LengthMismatch,
  Empty,
  // cli
  ConfigError,
  DataError,
  IoError,
};

std::string_view errc_name(Errc code) noexcept;

/// Exception carrying a machine-checkable error kind. `offset` is set for
/// UnknownToken (byte offset into the prompt) and is npos otherwise.
class Error : public std::runtime_error {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  Error(Errc code, const std::string& what, std::size_t offset = npos);

  Errc code() const noexcept { return code_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  Errc code_;
  std::size_t offset_;
};

[[noreturn]] void fail(Errc code, const std::string& what);

}  // namespace locaris
