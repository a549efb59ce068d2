// SPDX-License-Identifier: Apache-2.0
//
// Error taxonomy. The CLI maps these onto its exit-code contract:
// usage/config/format -> 2, numeric guard -> 3.

#pragma once

#include <stdexcept>
#include <string>

namespace cubic {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Structural misuse: shape/channel mismatches, bad hyperparameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Call-protocol violations: wrong window length, missing inputs, bad CLI args.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed external data: IDX, PGM, checkpoint, config files.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Numeric guards: diverging loss, out-of-domain loss inputs.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace cubic
