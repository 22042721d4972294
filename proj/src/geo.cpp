#include "dvlnav/geo.hpp"

#include <cmath>

#include "dvlnav/error.hpp"

namespace dvlnav::geo {

namespace {

void require_off_pole(double lat) {
  if (std::abs(lat) >= kPi / 2.0 - kPolarTolerance) {
    throw Error(ErrorCode::PolarSingularity, "latitude too close to a pole");
  }
}

}  // namespace

double wrap_pi(double angle) {
  double a = std::remainder(angle, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

Radii radii_of_curvature(double lat, const EllipsoidModel& model) {
  const double e2 = model.ecc2();
  const double s = std::sin(lat);
  const double w = 1.0 - e2 * s * s;
  const double sw = std::sqrt(w);
  return {model.semi_major_axis * (1.0 - e2) / (w * sw), model.semi_major_axis / sw};
}

Radii radii_derivative(double lat, const EllipsoidModel& model) {
  const double e2 = model.ecc2();
  const double s = std::sin(lat);
  const double c = std::cos(lat);
  const double w = 1.0 - e2 * s * s;
  const double a = model.semi_major_axis;
  return {3.0 * a * (1.0 - e2) * e2 * s * c / std::pow(w, 2.5), a * e2 * s * c / std::pow(w, 1.5)};
}

Mat3 curvature_matrix(const GeoPosition& pos, const EllipsoidModel& model) {
  require_off_pole(pos.lat);
  const Radii r = radii_of_curvature(pos.lat, model);
  Mat3 rc = Mat3::Zero();
  rc(0, 2) = 1.0 / ((r.transverse + pos.height) * std::cos(pos.lat));
  rc(1, 0) = 1.0 / (r.meridian + pos.height);
  rc(2, 1) = 1.0;
  return rc;
}

Vec3 earth_rate_n(double lat, const EllipsoidModel& model) {
  return {model.earth_rate * std::cos(lat), model.earth_rate * std::sin(lat), 0.0};
}

Vec3 transport_rate(const Vec3& v_n, const GeoPosition& pos, const EllipsoidModel& model) {
  require_off_pole(pos.lat);
  const Radii r = radii_of_curvature(pos.lat, model);
  const double re_h = r.transverse + pos.height;
  return {v_n.z() / re_h, v_n.z() * std::tan(pos.lat) / re_h, -v_n.x() / (r.meridian + pos.height)};
}

double gravity_magnitude(const GeoPosition& pos, const EllipsoidModel& model) {
  const double s2 = std::sin(pos.lat) * std::sin(pos.lat);
  const double g0 = model.gravity_equator * (1.0 + model.gravity_k * s2) /
                    std::sqrt(1.0 - model.ecc2() * s2);
  return g0 - model.free_air_gradient * pos.height;
}

double gravity_lat_derivative(const GeoPosition& pos, const EllipsoidModel& model) {
  const double s = std::sin(pos.lat);
  const double c = std::cos(pos.lat);
  const double e2 = model.ecc2();
  const double w = 1.0 - e2 * s * s;
  const double ge = model.gravity_equator;
  const double k = model.gravity_k;
  return ge * (2.0 * k * s * c / std::sqrt(w) + (1.0 + k * s * s) * e2 * s * c / std::pow(w, 1.5));
}

Vec3 gravity_n(const GeoPosition& pos, const EllipsoidModel& model) {
  return {0.0, -gravity_magnitude(pos, model), 0.0};
}

}  // namespace dvlnav::geo
