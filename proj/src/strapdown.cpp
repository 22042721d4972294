#include "dvlnav/strapdown.hpp"

#include "dvlnav/attmath.hpp"
#include "dvlnav/error.hpp"

namespace dvlnav::ins {

using geo::GeoPosition;

NavState propagate(const NavState& state, const ImuSample& sample, double dt,
                   const ImuBiases& biases) {
  if (!(dt > 0.0) || dt > kMaxStep) {
    throw Error(ErrorCode::StepTooLarge, "propagation step must be in (0, 0.1] s");
  }
  const Vec3 gyro = sample.gyro - biases.gyro;
  const Vec3 accel = sample.accel - biases.accel;

  const Vec3 w_ie = geo::earth_rate_n(state.pos.lat);
  const Vec3 w_en = geo::transport_rate(state.v_n, state.pos);
  const Vec3 w_in = w_ie + w_en;

  NavState next;
  next.time = state.time + dt;

  // Body rotation and navigation-frame rotation are applied on their own
  // sides; folding w_in into the body rate would lose accuracy while turning.
  next.c_b_n = att::exp_so3(-w_in * dt) * state.c_b_n * att::exp_so3(gyro * dt);

  const Vec3 f_n = 0.5 * (state.c_b_n + next.c_b_n) * accel;
  const Vec3 g0 = geo::gravity_n(state.pos);
  const Vec3 v_pred = state.v_n + dt * (f_n - (2.0 * w_ie + w_en).cross(state.v_n) + g0);

  // Position at the midpoint of the step, for curvature/gravity/coriolis.
  const Vec3 v_mid_pred = 0.5 * (state.v_n + v_pred);
  const Vec3 p0 = state.pos.as_vector();
  const GeoPosition pos_mid =
      GeoPosition::from_vector(p0 + 0.5 * dt * geo::curvature_matrix(state.pos) * v_mid_pred);
  const Vec3 w_ie_mid = geo::earth_rate_n(pos_mid.lat);
  const Vec3 w_en_mid = geo::transport_rate(v_mid_pred, pos_mid);
  next.v_n = state.v_n +
             dt * (f_n - (2.0 * w_ie_mid + w_en_mid).cross(v_mid_pred) + geo::gravity_n(pos_mid));

  const Vec3 v_avg = 0.5 * (state.v_n + next.v_n);
  next.pos = GeoPosition::from_vector(p0 + dt * geo::curvature_matrix(pos_mid) * v_avg);
  next.pos.lon = geo::wrap_pi(next.pos.lon);
  return next;
}

IdealImu invert_dynamics(const Dcm& c_b_n, const Vec3& omega_nb_b, const Vec3& v_n,
                         const Vec3& v_dot_n, const GeoPosition& pos) {
  const Vec3 w_ie = geo::earth_rate_n(pos.lat);
  const Vec3 w_en = geo::transport_rate(v_n, pos);
  const Mat3 c_n_b = c_b_n.transpose();
  IdealImu out;
  out.gyro = omega_nb_b + c_n_b * (w_ie + w_en);
  out.accel = c_n_b * (v_dot_n + (2.0 * w_ie + w_en).cross(v_n) - geo::gravity_n(pos));
  return out;
}

NavRates nav_rates(const NavState& state, const Vec3& gyro, const Vec3& accel) {
  const Vec3 w_ie = geo::earth_rate_n(state.pos.lat);
  const Vec3 w_en = geo::transport_rate(state.v_n, state.pos);
  const Vec3 w_nb = gyro - state.c_b_n.transpose() * (w_ie + w_en);
  NavRates r;
  r.c_dot = state.c_b_n * att::skew(w_nb);
  r.v_dot = state.c_b_n * accel - (2.0 * w_ie + w_en).cross(state.v_n) + geo::gravity_n(state.pos);
  r.p_dot = geo::curvature_matrix(state.pos) * state.v_n;
  return r;
}

void Mechanization::step(const ImuSample& sample, double dt) {
  state_ = propagate(state_, sample, dt, biases_);
  if (++steps_ % kRenormalizeEvery == 0) {
    state_.c_b_n = att::orthonormalize(state_.c_b_n);
  }
}

}  // namespace dvlnav::ins
