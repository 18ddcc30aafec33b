#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stancemil {

enum class ErrorKind {
  kParse,
  kStructural,
  kVocabulary,
  kConfig,
  kLabel,
  kShape,
  kNumeric,
  kParameter,
  kInput,
  kIndex,
  kProvider,
  kGenerationGap,
  kLookup,
  kUsage,
  kIo,
  kInternal,
};

std::string_view to_string(ErrorKind kind);

// All library failures surface as this type; `kind()` lets callers (the CLI in
// particular) map failures to diagnostics and exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  // Provider failures are the only ones worth retrying at a higher level.
  bool retryable() const noexcept { return kind_ == ErrorKind::kProvider; }

 private:
  ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kStructural: return "structural";
    case ErrorKind::kVocabulary: return "vocabulary";
    case ErrorKind::kConfig: return "configuration";
    case ErrorKind::kLabel: return "label";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kParameter: return "parameter";
    case ErrorKind::kInput: return "input";
    case ErrorKind::kIndex: return "index";
    case ErrorKind::kProvider: return "provider";
    case ErrorKind::kGenerationGap: return "generation-gap";
    case ErrorKind::kLookup: return "lookup";
    case ErrorKind::kUsage: return "usage";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kInternal: return "internal";
  }
  return "unknown";
}

}  // namespace stancemil
