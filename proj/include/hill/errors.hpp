#pragma once

#include <stdexcept>
#include <string>

namespace hill {

// Input of the wrong shape was handed to a numeric routine.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// An operation was invoked out of order (e.g. backward without forward).
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

// An optimizer step or TD batch was refused because of non-finite values.
struct RejectedStep : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SpecError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace hill
