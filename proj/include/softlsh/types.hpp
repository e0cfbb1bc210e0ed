#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace softlsh {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using MatrixXf = Matrix<float>;
using Eigen::VectorXd;
using Eigen::VectorXf;

using Index = Eigen::Index;
using IndexList = std::vector<Index>;

// Error taxonomy. The CLI maps these onto exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Out-of-domain configuration (P = 0, tau <= 0, empty sweep grid, ...).
struct ParameterError : Error {
  using Error::Error;
};
struct DimensionError : Error {
  using Error::Error;
};
/// Mathematically undefined input, e.g. the cosine of a zero-norm vector.
struct DomainError : Error {
  using Error::Error;
};
/// Top-k selection could not be satisfied (everything masked, k too large).
struct SelectionError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

inline void require_dims(Index got, Index want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(want) +
                         ", got " + std::to_string(got));
  }
}

}  // namespace softlsh
