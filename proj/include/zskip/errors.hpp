#pragma once

#include <stdexcept>
#include <string>

namespace zskip {

// Base class for every error raised by the toolchain and the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class QuantizationError : public Error {
 public:
  using Error::Error;
};

class LayoutError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class PlanningError : public Error {
 public:
  using Error::Error;
};

class EngineFault : public Error {
 public:
  using Error::Error;
};

class DeadlockError : public EngineFault {
 public:
  using EngineFault::EngineFault;
};

}  // namespace zskip
