#pragma once

#include <stdexcept>
#include <string>

namespace sera {

// Stable error codes; each maps 1:1 onto a subclass below so callers can
// either catch the concrete type or switch on code().
enum class ErrorCode {
  kIo,
  kSchema,
  kNotFound,
  kDuplicateId,
  kEmptyText,
  kLlmUnavailable,
  kMalformedLlmOutput,
  kFixtureMissing,
  kEmptyPatternSet,
  kEmptyBank,
  kEmptyRouteSet,
  kConflictingSuggestions,
  kConfig,
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::kIo: return "IoError";
    case ErrorCode::kSchema: return "SchemaError";
    case ErrorCode::kNotFound: return "NotFound";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kEmptyText: return "EmptyText";
    case ErrorCode::kLlmUnavailable: return "LlmUnavailable";
    case ErrorCode::kMalformedLlmOutput: return "MalformedLlmOutput";
    case ErrorCode::kFixtureMissing: return "FixtureMissing";
    case ErrorCode::kEmptyPatternSet: return "EmptyPatternSet";
    case ErrorCode::kEmptyBank: return "EmptyBank";
    case ErrorCode::kEmptyRouteSet: return "EmptyRouteSet";
    case ErrorCode::kConflictingSuggestions: return "ConflictingSuggestions";
    case ErrorCode::kConfig: return "ConfigError";
  }
  return "Error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorCode::kIo, what) {}
};

// Carries the 1-based line number and offending field of a malformed file.
struct SchemaError : Error {
  SchemaError(int line_no, const std::string& field, const std::string& what)
      : Error(ErrorCode::kSchema,
              "line " + std::to_string(line_no) + ", field '" + field + "': " + what),
        line(line_no),
        field(field) {}
  int line;
  std::string field;
};

struct NotFoundError : Error {
  explicit NotFoundError(const std::string& what) : Error(ErrorCode::kNotFound, what) {}
};

struct DuplicateIdError : Error {
  explicit DuplicateIdError(const std::string& what) : Error(ErrorCode::kDuplicateId, what) {}
};

struct EmptyTextError : Error {
  explicit EmptyTextError(const std::string& what) : Error(ErrorCode::kEmptyText, what) {}
};

struct LlmUnavailableError : Error {
  explicit LlmUnavailableError(const std::string& what)
      : Error(ErrorCode::kLlmUnavailable, what) {}
};

struct MalformedLlmOutputError : Error {
  explicit MalformedLlmOutputError(const std::string& what)
      : Error(ErrorCode::kMalformedLlmOutput, what) {}
};

struct FixtureMissingError : Error {
  explicit FixtureMissingError(const std::string& what)
      : Error(ErrorCode::kFixtureMissing, what) {}
};

struct EmptyPatternSetError : Error {
  explicit EmptyPatternSetError(const std::string& what)
      : Error(ErrorCode::kEmptyPatternSet, what) {}
};

struct EmptyBankError : Error {
  explicit EmptyBankError(const std::string& what) : Error(ErrorCode::kEmptyBank, what) {}
};

struct EmptyRouteSetError : Error {
  explicit EmptyRouteSetError(const std::string& what)
      : Error(ErrorCode::kEmptyRouteSet, what) {}
};

struct ConflictingSuggestionsError : Error {
  explicit ConflictingSuggestionsError(const std::string& what)
      : Error(ErrorCode::kConflictingSuggestions, what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorCode::kConfig, what) {}
};

}  // namespace sera
