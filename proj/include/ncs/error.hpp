#pragma once

#include <stdexcept>
#include <string>

namespace ncs {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Riccati divergence, singular gain systems, short input histories.
class ControlError : public Error {
 public:
  using Error::Error;
};

/// Value iteration failed to converge or produced a non-threshold policy.
class DesignError : public Error {
 public:
  using Error::Error;
};

/// Topology or scheduling contract violations.
class NetworkError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration; the message names the offending field.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace ncs
