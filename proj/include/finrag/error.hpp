#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace finrag {

enum class ErrorCode {
  // corpus
  MissingFile,
  EmptyDocument,
  MalformedMetadata,
  UnknownTokenizer,
  InvalidConfig,
  // vector_index
  DimensionMismatch,
  DuplicateChunk,
  MalformedIndex,
  UnknownFilterField,
  // node_tree
  MalformedJson,
  UnknownField,
  RangeViolation,
  DuplicateNodeId,
  TraversalFailed,
  TreeGenerationFailed,
  // rerank / expansion / pipeline stages
  ConfigError,
  StageError,
  StoreError,
  // providers
  ProviderFailure,
  UnscriptedPrompt,
  // evalkit
  EmptyBenchmark,
  EmptyQuerySet,
  EmptyGoldSet,
  EmptyVerdictSet,
  MissingPrice,
  MalformedBenchmark,
  // generic
  PreconditionViolated,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::EmptyDocument: return "EmptyDocument";
    case ErrorCode::MalformedMetadata: return "MalformedMetadata";
    case ErrorCode::UnknownTokenizer: return "UnknownTokenizer";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DuplicateChunk: return "DuplicateChunk";
    case ErrorCode::MalformedIndex: return "MalformedIndex";
    case ErrorCode::UnknownFilterField: return "UnknownFilterField";
    case ErrorCode::MalformedJson: return "MalformedJson";
    case ErrorCode::UnknownField: return "UnknownField";
    case ErrorCode::RangeViolation: return "RangeViolation";
    case ErrorCode::DuplicateNodeId: return "DuplicateNodeId";
    case ErrorCode::TraversalFailed: return "TraversalFailed";
    case ErrorCode::TreeGenerationFailed: return "TreeGenerationFailed";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::StageError: return "StageError";
    case ErrorCode::StoreError: return "StoreError";
    case ErrorCode::ProviderFailure: return "ProviderFailure";
    case ErrorCode::UnscriptedPrompt: return "UnscriptedPrompt";
    case ErrorCode::EmptyBenchmark: return "EmptyBenchmark";
    case ErrorCode::EmptyQuerySet: return "EmptyQuerySet";
    case ErrorCode::EmptyGoldSet: return "EmptyGoldSet";
    case ErrorCode::EmptyVerdictSet: return "EmptyVerdictSet";
    case ErrorCode::MissingPrice: return "MissingPrice";
    case ErrorCode::MalformedBenchmark: return "MalformedBenchmark";
    case ErrorCode::PreconditionViolated: return "PreconditionViolated";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a stable code so callers
/// (and the CLI exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised by provider backends. `transient` failures are retried.
class ProviderError : public Error {
 public:
  ProviderError(const std::string& message, bool transient)
      : Error(ErrorCode::ProviderFailure, message), transient_(transient) {}

  bool transient() const noexcept { return transient_; }

 private:
  bool transient_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace finrag
