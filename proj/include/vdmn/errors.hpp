#pragma once

#include <cstddef>
#include <iostream>
#include <stdexcept>
#include <string>

namespace vdmn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Singular laminate interface operator or a volume fraction outside [0, 1].
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Tree topology violates a structural invariant (e.g. an all-zero sibling pair).
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// Log/exp map called with a matrix outside the PD cone.
class GeometryError : public Error {
 public:
  GeometryError(const std::string& what, double eigenvalue)
      : Error(what + " (eigenvalue " + std::to_string(eigenvalue) + ")"), eigenvalue_(eigenvalue) {}
  double eigenvalue() const noexcept { return eigenvalue_; }

 private:
  double eigenvalue_;
};

/// Covariance not invertible even after jitter.
class ConditioningError : public Error {
 public:
  using Error::Error;
};

/// Second-order mean correction left the PD cone.
class StabilityError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver failed to converge.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Invalid configuration or parameter set.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File does not parse; carries the byte offset where parsing stopped.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t byte_offset)
      : Error(what + " at byte " + std::to_string(byte_offset)), byte_offset_(byte_offset) {}
  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

/// File parses but violates the document schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

namespace log {
inline bool& quiet() {
  static bool q = false;
  return q;
}
inline void warn(const std::string& msg) {
  if (!quiet()) std::cerr << "vdmn: warning: " << msg << '\n';
}
}  // namespace log

}  // namespace vdmn
