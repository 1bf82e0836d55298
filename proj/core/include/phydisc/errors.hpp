#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace phydisc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller handed in data of the wrong shape.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration value or unknown key; raised before any compute starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// The step budget of an ODE integration ran out.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, double last_time)
      : Error(what), last_time_(last_time) {}
  double last_time() const { return last_time_; }

 private:
  double last_time_;
};

/// The ODE state became NaN or infinite.
class InstabilityError : public Error {
 public:
  InstabilityError(const std::string& what, double time)
      : Error(what), time_(time) {}
  double time() const { return time_; }

 private:
  double time_;
};

class DegenerateGeometryError : public Error {
 public:
  using Error::Error;
};

/// Rejection sampling of random potentials exhausted its draw budget.
class SamplingExhaustedError : public Error {
 public:
  SamplingExhaustedError(const std::string& what, std::size_t draws)
      : Error(what), draws_(draws) {}
  std::size_t draws() const { return draws_; }

 private:
  std::size_t draws_;
};

/// Least-squares design matrix is rank deficient.
class DegenerateFitError : public Error {
 public:
  DegenerateFitError(const std::string& what, std::vector<std::size_t> columns)
      : Error(what), columns_(std::move(columns)) {}
  /// Indices of the design columns found to be linearly dependent.
  const std::vector<std::size_t>& collinear_columns() const { return columns_; }

 private:
  std::vector<std::size_t> columns_;
};

/// Training stopped on a non-finite loss or a solver failure.
class TrainingAbort : public Error {
 public:
  TrainingAbort(const std::string& what, std::size_t epoch)
      : Error(what), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace phydisc
