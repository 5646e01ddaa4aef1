#pragma once

#include <stdexcept>
#include <string>

namespace onarch {

// Exit-code taxonomy of the CLI: 1 usage, 2 data, 3 numerical.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& m) : std::runtime_error(m) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& m) : std::runtime_error(m) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& m) : std::runtime_error(m) {}
};

} // namespace onarch
