#pragma once

#include <stdexcept>
#include <string>

namespace soke {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Motion dimensions disagree with the declared part layout.
class LayoutError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes do not satisfy an operator's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the autodiff graph (non-scalar loss, double backward, ...).
class GradError : public Error {
 public:
  using Error::Error;
};

/// An operator produced NaN or Inf.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Token or code index outside its valid range.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// A generator was asked to decode in a mode it was not trained for.
class ModeError : public Error {
 public:
  using Error::Error;
};

class VocabularyError : public Error {
 public:
  using Error::Error;
};

/// Point set too degenerate for a similarity alignment.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data (files, frame counts, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

}  // namespace soke
