#pragma once

#include <stdexcept>
#include <string>

namespace pdc {

/// Invalid configuration, dimension mismatch, bad input file. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure could not complete (schedule stalled, all particles
/// failed, iteration cap hit). Maps to CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

}  // namespace detail
}  // namespace pdc
