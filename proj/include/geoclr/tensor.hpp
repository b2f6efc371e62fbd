#pragma once

#include <Eigen/Dense>

namespace geoclr {

/// Row-major so that a batch is stored one sample per contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

}  // namespace geoclr
