#pragma once

#include "dvlnav/types.hpp"

// Earth model in the North-Up-East local-level frame. Velocities are ordered
// [v_N, v_U, v_E]; positions are (longitude, latitude, height).
namespace dvlnav::geo {

struct GeoPosition {
  double lon = 0.0;     // rad
  double lat = 0.0;     // rad
  double height = 0.0;  // m

  Vec3 as_vector() const { return {lon, lat, height}; }
  static GeoPosition from_vector(const Vec3& p) { return {p.x(), p.y(), p.z()}; }
};

struct EllipsoidModel {
  double semi_major_axis;
  double flattening;
  double earth_rate;
  // Somigliana normal gravity: g = ge (1 + ks sin^2 L) / sqrt(1 - e^2 sin^2 L)
  double gravity_equator;
  double gravity_k;
  // Free-air gradient, m/s^2 per metre of height.
  double free_air_gradient;

  double ecc2() const { return flattening * (2.0 - flattening); }
};

inline constexpr EllipsoidModel kWgs84{
    6378137.0, 1.0 / 298.257223563, 7.292115e-5, 9.7803253359, 0.00193185265241, 3.086e-6};

/// Latitudes within this distance of a pole are rejected wherever 1/cos(L)
/// appears.
inline constexpr double kPolarTolerance = 1e-6;

struct Radii {
  double meridian;    // R_N
  double transverse;  // R_E
};

Radii radii_of_curvature(double lat, const EllipsoidModel& model = kWgs84);

/// d(R_N)/dL and d(R_E)/dL, needed by the error-state Jacobians.
Radii radii_derivative(double lat, const EllipsoidModel& model = kWgs84);

/// Curvature matrix mapping N-U-E velocity to (lon, lat, h) rates.
Mat3 curvature_matrix(const GeoPosition& pos, const EllipsoidModel& model = kWgs84);

Vec3 earth_rate_n(double lat, const EllipsoidModel& model = kWgs84);

/// Transport rate omega_en^n.
Vec3 transport_rate(const Vec3& v_n, const GeoPosition& pos, const EllipsoidModel& model = kWgs84);

/// Magnitude of normal gravity.
double gravity_magnitude(const GeoPosition& pos, const EllipsoidModel& model = kWgs84);

/// d|g|/dL at the given position (height term excluded, it is linear).
double gravity_lat_derivative(const GeoPosition& pos, const EllipsoidModel& model = kWgs84);

/// Gravity vector [0, -g, 0] in N-U-E.
Vec3 gravity_n(const GeoPosition& pos, const EllipsoidModel& model = kWgs84);

/// Wraps an angle to (-pi, pi].
double wrap_pi(double angle);

/// Position rate p_dot = R_c v.
inline Vec3 position_rate(const GeoPosition& pos, const Vec3& v_n,
                          const EllipsoidModel& model = kWgs84) {
  return curvature_matrix(pos, model) * v_n;
}

}  // namespace dvlnav::geo
