#pragma once

#include <stdexcept>
#include <string>

namespace trackstitch {

// Broad failure classes. The CLI maps them onto exit codes.
enum class ErrorKind {
  kInvalidArgument,  // bad parameters or preconditions
  kData,             // malformed or inconsistent input data
  kNumerical,        // degenerate geometry, non-finite cost, ...
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// Parse failure with a location. `line` is 1-based; 0 when the problem is
// not tied to a particular line (e.g. a truncated binary payload).
class ParseError : public Error {
 public:
  ParseError(std::string path, int line, const std::string& message)
      : Error(ErrorKind::kData, Format(path, line, message)),
        path_(std::move(path)),
        line_(line) {}

  const std::string& path() const { return path_; }
  int line() const { return line_; }

 private:
  static std::string Format(const std::string& path, int line,
                            const std::string& message) {
    std::string out = path;
    if (line > 0) out += ":" + std::to_string(line);
    return out + ": " + message;
  }

  std::string path_;
  int line_;
};

inline Error InvalidArgument(const std::string& message) {
  return Error(ErrorKind::kInvalidArgument, message);
}
inline Error DataError(const std::string& message) {
  return Error(ErrorKind::kData, message);
}
inline Error NumericalError(const std::string& message) {
  return Error(ErrorKind::kNumerical, message);
}

}  // namespace trackstitch
