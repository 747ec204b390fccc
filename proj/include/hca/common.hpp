#pragma once

#include <stdexcept>
#include <string>

namespace hca {

// Error taxonomy. Callers can tell bad arguments apart from corrupt files,
// bad configs, and broken internal state.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or geometry.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-range or nonsensical argument values.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Violated API contract (e.g. backward on a non-scalar output).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid model or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed dataset contents (labels, manifests, duplicate ids).
class DataError : public Error {
 public:
  using Error::Error;
};

// Corrupt or unreadable on-disk formats.
class FormatError : public Error {
 public:
  using Error::Error;
};

// An internal invariant failed; indicates a bug, not caller error.
class InternalError : public Error {
 public:
  using Error::Error;
};

inline void check_dim(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

inline void check_param(bool ok, const std::string& msg) {
  if (!ok) throw ParameterError(msg);
}

inline void check_contract(bool ok, const std::string& msg) {
  if (!ok) throw ContractError(msg);
}

inline void check_config(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

inline void check_data(bool ok, const std::string& msg) {
  if (!ok) throw DataError(msg);
}

inline void check_internal(bool ok, const std::string& msg) {
  if (!ok) throw InternalError(msg);
}

}  // namespace hca
