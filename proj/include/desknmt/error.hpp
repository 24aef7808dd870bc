#pragma once

#include <stdexcept>
#include <string>

namespace desknmt {

// Every failure raised by the library derives from Error; kind() is a short
// stable tag used by the CLI for its one-line error report.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error("data", what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

}  // namespace desknmt
