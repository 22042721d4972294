#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dvlnav/types.hpp"

namespace dvlnav::att {

/// Euler triple for the y-z-x rotation sequence: yaw about y first, then pitch
/// about z, then roll about x. With the forward-up-right body axes this is the
/// natural heading/pitch/bank ordering.
struct EulerYZX {
  double roll = 0.0;   // about x
  double pitch = 0.0;  // about z
  double yaw = 0.0;    // about y
};

Mat3 skew(const Vec3& a);

/// Inverse of skew() for the antisymmetric part of `m`.
Vec3 vee(const Mat3& m);

/// Passive rotation matrix for the sequence above (frame "from" to frame
/// "to" when the angles describe how "to" is rotated relative to "from").
Dcm euler_to_dcm(const EulerYZX& e);

/// Throws GimbalLock when |C(0,1)| >= 1 - 1e-9.
EulerYZX dcm_to_euler(const Dcm& c);

/// Exponential map: the rotation matrix exp(phi x).
Dcm exp_so3(const Vec3& phi);

/// Rotation vector of `c` (inverse of exp_so3), valid for angles below pi.
Vec3 log_so3(const Dcm& c);

/// Nearest orthonormal matrix with det +1 (polar projection).
Dcm orthonormalize(const Dcm& c);

/// max |C^T C - I| entry.
double orthonormality_error(const Dcm& c);

/// Two-vector attitude determination: returns C_A^B with C * u_i ~= w_i.
/// u_i are given in frame A, w_i in frame B. The first pair is matched
/// exactly in direction.
Dcm triad(const Vec3& u1, const Vec3& u2, const Vec3& w1, const Vec3& w2);

struct VectorPair {
  Vec3 lhs;
  Vec3 rhs;
};

struct WahbaResult {
  Dcm rotation = Dcm::Identity();
  /// Singular values of the attitude profile matrix, descending.
  Vec3 singular_values = Vec3::Zero();
  /// Present when every rhs direction is (numerically) parallel; the rotation
  /// about this lhs-frame axis is unconstrained.
  std::optional<Vec3> free_axis;

  bool underdetermined() const { return free_axis.has_value(); }
};

/// Minimizes sum w_i |lhs_i - C rhs_i|^2 over SO(3). When the rhs directions
/// are parallel (singular value ratio below `rank_tolerance`) the returned
/// rotation is the smallest rotation consistent with the data, and the free
/// axis is reported.
WahbaResult wahba_solve(std::span<const VectorPair> pairs, std::span<const double> weights,
                        double rank_tolerance = 1e-2);

/// Same, from a pre-accumulated attitude profile matrix B = sum w lhs rhs^T.
WahbaResult wahba_from_profile(const Mat3& profile, double rank_tolerance = 1e-2);

struct Sphere {
  Vec3 center;
  double radius;
};

/// Center and radius of the sphere through >= 4 non-coplanar points.
Sphere sphere_center(std::span<const Vec3> points, double coplanar_tolerance = 1e-9);

}  // namespace dvlnav::att
