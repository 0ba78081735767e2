#ifndef PLATEDIFF_TYPES_HPP
#define PLATEDIFF_TYPES_HPP

#include <Eigen/Core>

#include <cstdint>

namespace platediff {

// All numerics run at 64-bit precision end to end; weights are grams.
using Scalar = double;

using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Index = Eigen::Index;

}  // namespace platediff

#endif  // PLATEDIFF_TYPES_HPP
