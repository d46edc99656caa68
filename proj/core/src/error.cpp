#include "locaris/error.hpp"

namespace locaris {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::AllReadingsDropped: return "AllReadingsDropped";
    case Errc::SchemaError: return "SchemaError";
    case Errc::RangeError: return "RangeError";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::TooFewAPs: return "TooFewAPs";
    case Errc::InvalidSample: return "InvalidSample";
    case Errc::UnknownToken: return "UnknownToken";
    case Errc::EmptyBatch: return "EmptyBatch";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NotScalar: return "NotScalar";
    case Errc::NoTape: return "NoTape";
    case Errc::NonFinite: return "NonFinite";
    case Errc::CheckpointFormat: return "CheckpointFormat";
    case Errc::AlreadyAdapted: return "AlreadyAdapted";
    case Errc::SequenceTooLong: return "SequenceTooLong";
    case Errc::EmptyMaskRow: return "EmptyMaskRow";
    case Errc::UnsupportedBits: return "UnsupportedBits";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::NotAdapted: return "NotAdapted";
    case Errc::BadFraction: return "BadFraction";
    case Errc::BadTarget: return "BadTarget";
    case Errc::UnknownPreset: return "UnknownPreset";
    case Errc::UnknownAP: return "UnknownAP";
    case Errc::EmptyTrain: return "EmptyTrain";
    case Errc::BadK: return "BadK";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::Empty: return "Empty";
    case Errc::ConfigError: return "ConfigError";
    case Errc::DataError: return "DataError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& what, std::size_t offset)
    : std::runtime_error(std::string(errc_name(code)) + ": " + what),
      code_(code),
      offset_(offset) {}

void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace locaris
