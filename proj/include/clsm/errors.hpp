#pragma once

#include <stdexcept>
#include <string>

namespace clsm {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OutOfRange : Error { using Error::Error; };
struct InvalidSpan : Error { using Error::Error; };
struct InvalidToken : Error { using Error::Error; };
struct InvalidInput : Error { using Error::Error; };
struct InvalidConfig : Error { using Error::Error; };
struct InsufficientData : Error { using Error::Error; };
struct NumericalError : Error { using Error::Error; };
struct EmptyEvaluation : Error { using Error::Error; };
struct CheckpointError : Error { using Error::Error; };
struct MidiError : Error { using Error::Error; };

}  // namespace clsm
