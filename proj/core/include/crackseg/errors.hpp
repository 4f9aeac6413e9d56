#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace crackseg {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Incompatible or invalid tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An API contract was violated (non-scalar loss, stale tape, missing grad, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint file problems: missing, corrupt, or mismatched tensors.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Dataset ingestion and image format problems.
class DataError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void msg_append(std::ostringstream&) {}

template <typename T, typename... Rest>
void msg_append(std::ostringstream& os, const T& head, const Rest&... rest) {
  os << head;
  msg_append(os, rest...);
}

}  // namespace detail

/// Builds an error message from heterogeneous parts.
template <typename... Parts>
std::string msg(const Parts&... parts) {
  std::ostringstream os;
  detail::msg_append(os, parts...);
  return os.str();
}

template <typename E, typename... Parts>
[[noreturn]] void raise(const Parts&... parts) {
  throw E(msg(parts...));
}

template <typename E, typename... Parts>
void require(bool condition, const Parts&... parts) {
  if (!condition) {
    raise<E>(parts...);
  }
}

}  // namespace crackseg
