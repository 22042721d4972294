#pragma once

#include <Eigen/Dense>

namespace dvlnav {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Direction cosine matrix. Naming follows C_from^to: `Dcm c_b_n` maps body
/// coordinates into the navigation frame.
using Dcm = Eigen::Matrix3d;

constexpr double kPi = 3.14159265358979323846;
constexpr double kDeg = kPi / 180.0;

}  // namespace dvlnav
