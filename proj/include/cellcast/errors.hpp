#pragma once

#include <stdexcept>
#include <string>

namespace cellcast {

// Base class for all toolkit errors. Sub-types map to the failure classes
// surfaced by the library contracts so callers can catch selectively.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid configuration or contract violation (shape mismatch, bad field).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input files; message names the offending row.
class IngestError : public Error {
 public:
  using Error::Error;
};

// Inputs too small for the requested operation; message states the minimum.
class SizingError : public Error {
 public:
  using Error::Error;
};

// Non-finite value produced where a finite one is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Training loop produced a divergent loss; message reports the step/epoch.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace cellcast
