#pragma once

#include <stdexcept>
#include <string>

namespace tcam {

// Exit-code classes used by the CLI: config (1), data (2), numeric (3).

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tcam
