#pragma once

#include <stdexcept>
#include <string>

namespace disret {

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LookupError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ArgumentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SamplingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace disret
