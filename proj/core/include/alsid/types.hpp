#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace alsid {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error {
  using Error::Error;
};

/// A signal channel has zero variance; the scaler cannot be fit.
struct DegenerateSignal : Error {
  using Error::Error;
};

struct InsufficientHistory : Error {
  using Error::Error;
};

struct InsufficientData : Error {
  using Error::Error;
};

/// Innovation covariance lost positive definiteness (Cholesky failed).
struct NumericalBreakdown : Error {
  using Error::Error;
};

struct StaleTrajectory : Error {
  using Error::Error;
};

struct StepSizeUnderflow : Error {
  using Error::Error;
};

}  // namespace alsid
