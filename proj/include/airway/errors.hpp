#pragma once

#include <stdexcept>
#include <string>

namespace airway {

// Base classes map onto CLI exit codes: DataError -> 2, NumericError -> 3.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MultipleRootsError : DataError {
  using DataError::DataError;
};

struct CycleDetectedError : DataError {
  using DataError::DataError;
};

struct DisconnectedNodeError : DataError {
  using DataError::DataError;
};

struct UnknownCategoryError : DataError {
  using DataError::DataError;
};

struct ParseError : DataError {
  using DataError::DataError;
};

struct SchemaVersionMismatchError : DataError {
  using DataError::DataError;
};

struct ConfigInfeasibleError : DataError {
  using DataError::DataError;
};

struct ShapeMismatchError : NumericError {
  using NumericError::NumericError;
};

struct MaskOutOfRangeError : NumericError {
  using NumericError::NumericError;
};

struct DomainError : NumericError {
  using NumericError::NumericError;
};

struct NonFiniteError : NumericError {
  using NumericError::NumericError;
};

}  // namespace airway
