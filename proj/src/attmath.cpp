#include <algorithm>
#include "dvlnav/attmath.hpp"

#include <cmath>

#include "dvlnav/error.hpp"

namespace dvlnav::att {

Mat3 skew(const Vec3& a) {
  Mat3 m;
  m << 0.0, -a.z(), a.y(),
       a.z(), 0.0, -a.x(),
       -a.y(), a.x(), 0.0;
  return m;
}

Vec3 vee(const Mat3& m) {
  return 0.5 * Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
}

Dcm euler_to_dcm(const EulerYZX& e) {
  const double cr = std::cos(e.roll), sr = std::sin(e.roll);
  const double cp = std::cos(e.pitch), sp = std::sin(e.pitch);
  const double cy = std::cos(e.yaw), sy = std::sin(e.yaw);
  Dcm c;
  c << cp * cy, sp, -cp * sy,
       sr * sy - cr * cy * sp, cr * cp, cy * sr + cr * sp * sy,
       cr * sy + cy * sr * sp, -cp * sr, cr * cy - sr * sp * sy;
  return c;
}

EulerYZX dcm_to_euler(const Dcm& c) {
  if (std::abs(c(0, 1)) >= 1.0 - 1e-9) {
    throw Error(ErrorCode::GimbalLock, "pitch at +/-90 deg, roll and yaw are coupled");
  }
  EulerYZX e;
  e.pitch = std::asin(c(0, 1));
  e.yaw = std::atan2(-c(0, 2), c(0, 0));
  e.roll = std::atan2(-c(2, 1), c(1, 1));
  return e;
}

Dcm exp_so3(const Vec3& phi) {
  const double angle = phi.norm();
  const Mat3 k = skew(phi);
  if (angle < 1e-8) {
    return Dcm::Identity() + k + 0.5 * k * k;
  }
  const double a = std::sin(angle) / angle;
  const double b = (1.0 - std::cos(angle)) / (angle * angle);
  return Dcm::Identity() + a * k + b * k * k;
}

Vec3 log_so3(const Dcm& c) {
  const double cos_angle = std::clamp(0.5 * (c.trace() - 1.0), -1.0, 1.0);
  const double angle = std::acos(cos_angle);
  const Vec3 v = vee(c);
  if (angle < 1e-8) return v;
  return v * (angle / std::sin(angle));
}

Dcm orthonormalize(const Dcm& c) {
  Eigen::JacobiSVD<Mat3> svd(c, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

double orthonormality_error(const Dcm& c) {
  return (c.transpose() * c - Mat3::Identity()).cwiseAbs().maxCoeff();
}

namespace {

Mat3 triad_frame(const Vec3& a, const Vec3& b) {
  const Vec3 t1 = a.normalized();
  const Vec3 t2 = a.cross(b).normalized();
  Mat3 m;
  m.col(0) = t1;
  m.col(1) = t2;
  m.col(2) = t1.cross(t2);
  return m;
}

double sin_between(const Vec3& a, const Vec3& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.cross(b).norm() / (na * nb);
}

// Smallest rotation taking unit vector `from` onto unit vector `to`.
Dcm minimal_rotation(const Vec3& from, const Vec3& to) {
  const Vec3 axis = from.cross(to);
  const double s = axis.norm();
  const double c = from.dot(to);
  if (s < 1e-15) {
    if (c > 0.0) return Dcm::Identity();
    Vec3 ortho = from.unitOrthogonal();
    return exp_so3(kPi * ortho);
  }
  return exp_so3(axis / s * std::atan2(s, c));
}

}  // namespace

Dcm triad(const Vec3& u1, const Vec3& u2, const Vec3& w1, const Vec3& w2) {
  if (std::abs(sin_between(u1, u2)) < 1e-6 || std::abs(sin_between(w1, w2)) < 1e-6) {
    throw Error(ErrorCode::DegenerateVectors, "triad needs two linearly independent vectors");
  }
  return triad_frame(w1, w2) * triad_frame(u1, u2).transpose();
}

WahbaResult wahba_from_profile(const Mat3& profile, double rank_tolerance) {
  Eigen::JacobiSVD<Mat3> svd(profile, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  WahbaResult result;
  result.singular_values = svd.singularValues();
  const double s1 = result.singular_values(0);
  if (s1 <= 0.0) {
    result.free_axis = Vec3::UnitX();
    return result;
  }
  if (result.singular_values(1) < rank_tolerance * s1) {
    // Only one direction pair is constrained: u1 = C v1.
    const Vec3 lhs_dir = u.col(0);
    const Vec3 rhs_dir = v.col(0);
    result.rotation = minimal_rotation(rhs_dir, lhs_dir);
    result.free_axis = lhs_dir;
    return result;
  }
  const double d = (u * v.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  result.rotation = u * Eigen::DiagonalMatrix<double, 3>(1.0, 1.0, d) * v.transpose();
  return result;
}

WahbaResult wahba_solve(std::span<const VectorPair> pairs, std::span<const double> weights,
                        double rank_tolerance) {
  if (!weights.empty() && weights.size() != pairs.size()) {
    throw Error(ErrorCode::InvalidConfig, "wahba_solve: weights and pairs differ in length");
  }
  Mat3 profile = Mat3::Zero();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    profile += w * pairs[i].lhs * pairs[i].rhs.transpose();
  }
  return wahba_from_profile(profile, rank_tolerance);
}

Sphere sphere_center(std::span<const Vec3> points, double coplanar_tolerance) {
  const auto n = static_cast<Eigen::Index>(points.size());
  if (n < 4) {
    throw Error(ErrorCode::CoplanarPoints, "sphere fit needs at least four points");
  }
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= static_cast<double>(n);
  Eigen::MatrixXd centered(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) centered.row(i) = (points[i] - centroid).transpose();
  const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::MatrixXd>(centered).singularValues();
  if (sv(2) <= coplanar_tolerance * std::max(sv(0), 1e-300)) {
    throw Error(ErrorCode::CoplanarPoints, "points lie in a common plane");
  }

  // Algebraic fit about the centroid, |q|^2 = 2 q.c + d, then geometric
  // refinement of center and radius; the algebraic answer alone is poor when
  // the points cover only a small cap.
  Eigen::MatrixXd a(n, 4);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 q = points[i] - centroid;
    a.row(i) << 2.0 * q.x(), 2.0 * q.y(), 2.0 * q.z(), 1.0;
    b(i) = q.squaredNorm();
  }
  const Eigen::Vector4d x = a.colPivHouseholderQr().solve(b);
  Vec3 c = x.head<3>();
  double r = std::sqrt(std::max(x(3) + c.squaredNorm(), 0.0));
  for (int it = 0; it < 50; ++it) {
    Eigen::Matrix4d jtj = Eigen::Matrix4d::Zero();
    Eigen::Vector4d jtr = Eigen::Vector4d::Zero();
    for (const auto& p : points) {
      const Vec3 d = p - centroid - c;
      const double len = d.norm();
      Eigen::Vector4d j;
      j << -d / len, -1.0;
      jtj += j * j.transpose();
      jtr += j * (len - r);
    }
    const Eigen::Vector4d step = jtj.ldlt().solve(-jtr);
    c += step.head<3>();
    r += step(3);
    if (step.norm() < 1e-15 * std::max(1.0, r)) break;
  }
  Sphere s;
  s.center = c + centroid;
  s.radius = r;
  return s;
}

}  // namespace dvlnav::att
