#pragma once

#include <stdexcept>
#include <string>

namespace aop {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operands of mismatched length (bit codes, vectors, matrices).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A ratio whose denominator is zero, e.g. inclusion against an empty code.
class UndefinedRatioError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent JSON input (datasets, configs, manifests).
class SchemaError : public Error {
 public:
  using Error::Error;
};

// On-disk bundle/checkpoint structure does not match its manifest.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Bad parameters passed to an operation (k too small, S < 2, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Lookup of a concept or layer that does not exist.
class LookupError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf in inputs, losses or gradients.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace aop
