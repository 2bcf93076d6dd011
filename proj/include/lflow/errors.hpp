#pragma once

#include <stdexcept>
#include <string>

namespace lflow {

// Error taxonomy mirrored by the CLI exit codes: config errors exit 2,
// numeric failures exit 3, failed acceptance-style checks exit 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad arguments, shape mismatches, out-of-range sites.
struct ValidationError : Error {
  using Error::Error;
};

// Non-finite values, diverged integrations, undefined estimators.
struct NumericError : Error {
  using Error::Error;
};

// Unparseable or inconsistent run configuration.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace lflow
