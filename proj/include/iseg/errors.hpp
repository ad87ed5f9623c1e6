#pragma once

#include <stdexcept>
#include <string>

namespace iseg {

// Shape or extent mismatch between operands. The message names the axis.
class DimensionError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// A scalar argument outside its documented domain.
class ArgumentError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// A click that lands outside the image.
class OutOfBoundsError : public ArgumentError {
  public:
    using ArgumentError::ArgumentError;
};

// A click on a pixel that already holds one in the same episode.
class DuplicateClickError : public ArgumentError {
  public:
    using ArgumentError::ArgumentError;
};

// Caller violated an operation precondition (non-scalar loss, missing grad, ...).
class ContractError : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

} // namespace iseg
