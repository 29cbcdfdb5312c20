#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hetsyn {

enum class ErrorCode {
  KindConflict,
  DescriptorConflict,
  DimMismatch,
  ParseError,
  FrozenStore,
  UnknownEntity,
  KindMismatch,
  MissingEmbedding,
  IndexOutOfRange,
  MissingProtein,
  EmptyProfile,
  LengthMismatch,
  InsufficientUniverse,
  NonFiniteLoss,
  UnknownDrug,
  UnknownCell,
  SingleClass,
  TooFewSamples,
  EmptyCandidateSpace,
  UnknownProteinInProfile,
  ConfigError,
  InvalidArgument,
  IoError,
  FormatError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::KindConflict: return "KindConflict";
    case ErrorCode::DescriptorConflict: return "DescriptorConflict";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::FrozenStore: return "FrozenStore";
    case ErrorCode::UnknownEntity: return "UnknownEntity";
    case ErrorCode::KindMismatch: return "KindMismatch";
    case ErrorCode::MissingEmbedding: return "MissingEmbedding";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::MissingProtein: return "MissingProtein";
    case ErrorCode::EmptyProfile: return "EmptyProfile";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::InsufficientUniverse: return "InsufficientUniverse";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::UnknownDrug: return "UnknownDrug";
    case ErrorCode::UnknownCell: return "UnknownCell";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::EmptyCandidateSpace: return "EmptyCandidateSpace";
    case ErrorCode::UnknownProteinInProfile: return "UnknownProteinInProfile";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
  }
  return "Unknown";
}

/// Every failure raised by the library. `module()` names the component that
/// raised it so the CLI can print one `module/code: message` line.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string module, const std::string& message)
      : std::runtime_error(message), code_(code), module_(std::move(module)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorCode code_;
  std::string module_;
};

}  // namespace hetsyn
