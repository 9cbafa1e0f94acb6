// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace ubt {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A vector (or matrix slice) had norm below the normalization floor.
class ZeroNormError : public Error {
 public:
  using Error::Error;
};

// A caption contained no non-pad tokens where at least one was required.
class EmptyCaptionError : public ZeroNormError {
 public:
  using ZeroNormError::ZeroNormError;
};

class ShapeMismatchError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf appeared in a tensor value.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class NonFiniteGradientError : public NonFiniteError {
 public:
  using NonFiniteError::NonFiniteError;
};

class NonScalarLossError : public Error {
 public:
  using Error::Error;
};

class InvalidConfigError : public Error {
 public:
  using Error::Error;
};

class PatchOutOfBoundsError : public Error {
 public:
  using Error::Error;
};

class TooManyPoisonsError : public Error {
 public:
  using Error::Error;
};

class UnknownClassError : public Error {
 public:
  using Error::Error;
};

// Template without exactly one class slot.
class MalformedTemplateError : public UnknownClassError {
 public:
  using UnknownClassError::UnknownClassError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Snapshot/checkpoint header mismatch or truncation.
class FormatError : public Error {
 public:
  using Error::Error;
};

class InvalidCountError : public Error {
 public:
  using Error::Error;
};

class EmptyEvalSetError : public Error {
 public:
  using Error::Error;
};

class TargetClassInEvalSetError : public Error {
 public:
  using Error::Error;
};

class EmptyIndexSetError : public Error {
 public:
  using Error::Error;
};

class InvalidPacInputsError : public Error {
 public:
  using Error::Error;
};

class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

}  // namespace ubt
