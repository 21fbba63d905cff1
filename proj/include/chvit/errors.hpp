#pragma once

#include <stdexcept>
#include <string>

namespace chvit {

/// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid model, sampler, schedule or generator configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Caller passed data outside an operation's domain (empty channel set, bad label, ...).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operation requested on a model variant that does not support it.
class UnsupportedVariantError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or truncated checkpoint / dataset file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Object queried in a state that cannot answer (e.g. attention never recorded).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A NaN or Inf appeared in values or gradients.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace chvit
