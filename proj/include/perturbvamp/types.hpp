#pragma once

#include <Eigen/Core>

#define PERTURBVAMP_VERSION "0.1.0"

namespace pvamp {

using Index = Eigen::Index;

template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using VecXd = VecX<double>;
using MatXd = MatX<double>;

}  // namespace pvamp
