#pragma once

#include <stdexcept>
#include <string>

namespace trkp {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operand or parameter shapes do not line up.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid argument or violated call contract.
struct ArgError : Error {
  using Error::Error;
};

// Malformed file, config, or stream.
struct ParseError : Error {
  using Error::Error;
};

// Unknown identifier (domain id, tensor name, ...).
struct LookupError : Error {
  using Error::Error;
};

// Training produced a non-finite loss.
struct DivergedError : Error {
  using Error::Error;
};

// A pipeline stage is missing a prerequisite artifact.
struct StageError : Error {
  using Error::Error;
};

}  // namespace trkp
