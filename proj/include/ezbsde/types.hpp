#pragma once

#include <Eigen/Dense>

namespace ezbsde {

/// Upper bound on the number of risky assets d and Brownian drivers n.
/// Fixed-capacity Eigen storage keeps per-step coefficient tuples off the heap.
inline constexpr int kMaxDim = 4;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

}  // namespace ezbsde
