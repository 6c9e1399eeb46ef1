// Exception types shared across the library.
#pragma once

#include <stdexcept>
#include <string>

namespace fcgan {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or width disagreement between tensors / matrices.
struct DimensionError : Error {
  using Error::Error;
};

// Bad user-supplied configuration (CLI, JSON config, factor lists, ...).
struct ConfigError : Error {
  using Error::Error;
};

// Column set / kind mismatch between a table and its schema.
struct SchemaError : Error {
  using Error::Error;
};

struct CsvError : Error {
  using Error::Error;
};

// Constant column where a spread is required (standardization, correlation).
struct ZeroVarianceError : Error {
  using Error::Error;
};

// Batch statistics requested on a batch too small to have any.
struct DegenerateBatchError : Error {
  using Error::Error;
};

// Covariance too rank-deficient for the requested eigenstructure.
struct DegenerateCovarianceError : Error {
  using Error::Error;
};

// An op without an exact constructible second-order path was found between
// the requested input and output nodes.
struct UnsupportedSecondOrderError : Error {
  using Error::Error;
};

// Non-finite losses during training; carries the epoch that diverged.
struct DivergenceError : Error {
  DivergenceError(const std::string& what, long long epoch_index)
      : Error(what), epoch(epoch_index) {}
  long long epoch;
};

struct IoError : Error {
  using Error::Error;
};

// Bundle file fails magic / checksum / structural checks.
struct CorruptFileError : Error {
  using Error::Error;
};

// Bundle file carries an unknown format version.
struct VersionError : Error {
  using Error::Error;
};

// Simulator configuration would push a channel outside its declared range.
struct GenerationError : Error {
  using Error::Error;
};

}  // namespace fcgan
