#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace wiper {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A tensor shape is empty or has a zero dimension.
class InvalidShape : public Error {
 public:
  using Error::Error;
};

/// Two operands disagree in shape or resolution.
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

/// A scalar parameter or index set is outside its valid range.
class InvalidParam : public Error {
 public:
  using Error::Error;
};

/// Input has no structure to threshold (e.g. a constant map).
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

/// A tensor file is malformed. Carries the byte offset of the problem.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Integration produced a non-finite latent.
class NumericalBlowup : public Error {
 public:
  NumericalBlowup(const std::string& pass, std::size_t step)
      : Error("non-finite latent during " + pass + " at step " + std::to_string(step)),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// The edit protocol was driven out of order (e.g. a copy-back step with no cached values).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// A metric has no defined value for the given input (e.g. empty masks).
class MetricUndefined : public Error {
 public:
  using Error::Error;
};

}  // namespace wiper
