#ifndef DSDN_ERRORS_HPP
#define DSDN_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace dsdn {

// Error categories map to CLI exit codes and a machine-readable tag.
enum class ErrorCategory {
  kArgument = 2,
  kSchema = 3,
  kParse = 4,
  kConfig = 5,
  kNumeric = 6,
  kCheckpoint = 7,
  kAlignment = 8,
  kIo = 9,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory cat, const std::string& msg)
      : std::runtime_error(msg), category_(cat) {}
  ErrorCategory category() const { return category_; }

  const char* category_name() const {
    switch (category_) {
      case ErrorCategory::kArgument: return "argument";
      case ErrorCategory::kSchema: return "schema";
      case ErrorCategory::kParse: return "parse";
      case ErrorCategory::kConfig: return "config";
      case ErrorCategory::kNumeric: return "numeric";
      case ErrorCategory::kCheckpoint: return "checkpoint";
      case ErrorCategory::kAlignment: return "alignment";
      case ErrorCategory::kIo: return "io";
    }
    return "unknown";
  }

 private:
  ErrorCategory category_;
};

struct ArgumentError : Error {
  explicit ArgumentError(const std::string& m) : Error(ErrorCategory::kArgument, m) {}
};
struct SchemaError : Error {
  explicit SchemaError(const std::string& m) : Error(ErrorCategory::kSchema, m) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& m) : Error(ErrorCategory::kParse, m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(ErrorCategory::kConfig, m) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error(ErrorCategory::kNumeric, m) {}
};
struct CheckpointError : Error {
  explicit CheckpointError(const std::string& m) : Error(ErrorCategory::kCheckpoint, m) {}
};
struct AlignmentError : Error {
  explicit AlignmentError(const std::string& m) : Error(ErrorCategory::kAlignment, m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error(ErrorCategory::kIo, m) {}
};

}  // namespace dsdn

#endif  // DSDN_ERRORS_HPP
