#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace dcrec {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// Padding mask; true marks a padded (masked-out) position.
using PadMask = std::vector<std::uint8_t>;

}  // namespace dcrec
