#pragma once

#include <stdexcept>

namespace hctl {

// Exit-code mapping: ConfigError -> 1, IoError -> 2, NumericalError -> 3.
class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace hctl
