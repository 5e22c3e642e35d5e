#pragma once

#include <stdexcept>
#include <string>

namespace aqa {

// All library errors carry a short machine-parsable category so the CLI can
// report `error[<category>]: <message>` on a single line.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(message), category_(std::move(category)) {}
  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& m) : Error("dimension", m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};
struct ContractError : Error {
  explicit ContractError(const std::string& m) : Error("contract", m) {}
};
struct InvariantError : Error {
  explicit InvariantError(const std::string& m) : Error("invariant", m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io", m) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

}  // namespace aqa
