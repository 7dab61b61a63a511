#pragma once

#include <stdexcept>
#include <string>

namespace orbits {

// Base of every error the library raises. The CLI maps ValidationError to
// exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class DegenerateGeometry : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class NonScalarLoss : public Error {
 public:
  using Error::Error;
};

class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(std::size_t step, const std::string& what)
      : Error("non-finite loss at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

class MissingDepth : public Error {
 public:
  explicit MissingDepth(std::size_t object)
      : Error("no depth sample for object " + std::to_string(object)), object_(object) {}
  std::size_t object() const { return object_; }

 private:
  std::size_t object_;
};

class MissingGroundtruthZ : public Error {
 public:
  explicit MissingGroundtruthZ(std::size_t object)
      : Error("no ground-truth z for object " + std::to_string(object)), object_(object) {}
  std::size_t object() const { return object_; }

 private:
  std::size_t object_;
};

class LengthMismatch : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace orbits
