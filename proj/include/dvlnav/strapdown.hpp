#pragma once

#include "dvlnav/geo.hpp"
#include "dvlnav/types.hpp"

namespace dvlnav::ins {

struct NavState {
  Dcm c_b_n = Dcm::Identity();  // body to N-U-E
  Vec3 v_n = Vec3::Zero();      // [v_N, v_U, v_E]
  geo::GeoPosition pos;
  double time = 0.0;
};

/// Gyro and accelerometer outputs. A sample is applied over the interval
/// [time, time + dt): the simulator evaluates it at the interval midpoint.
struct ImuSample {
  double time = 0.0;
  Vec3 gyro = Vec3::Zero();   // omega_ib^b, rad/s
  Vec3 accel = Vec3::Zero();  // f^b, m/s^2
};

struct ImuBiases {
  Vec3 gyro = Vec3::Zero();
  Vec3 accel = Vec3::Zero();
};

inline constexpr double kMaxStep = 0.1;

/// Orthonormal projection cadence for long propagation runs.
inline constexpr int kRenormalizeEvery = 256;

/// One mechanization step: exponential attitude updates on the body side
/// (gyro) and on the navigation side (Earth and transport rates), trapezoidal
/// velocity and position updates. Throws StepTooLarge for dt outside
/// (0, kMaxStep].
NavState propagate(const NavState& state, const ImuSample& sample, double dt,
                   const ImuBiases& biases = {});

struct IdealImu {
  Vec3 gyro;
  Vec3 accel;
};

/// Inverse of the rate equations: the sensor outputs that produce the given
/// attitude rate (omega_nb^b) and velocity rate (v_dot^n).
IdealImu invert_dynamics(const Dcm& c_b_n, const Vec3& omega_nb_b, const Vec3& v_n,
                         const Vec3& v_dot_n, const geo::GeoPosition& pos);

/// Continuous-time derivatives of the navigation state. Exposed for
/// linearization checks.
struct NavRates {
  Mat3 c_dot;
  Vec3 v_dot;
  Vec3 p_dot;
};
NavRates nav_rates(const NavState& state, const Vec3& gyro, const Vec3& accel);

/// Runs propagate over a whole sample stream, renormalizing the attitude
/// every kRenormalizeEvery steps. `dt` is taken from consecutive timestamps.
class Mechanization {
 public:
  explicit Mechanization(NavState initial, ImuBiases biases = {})
      : state_(std::move(initial)), biases_(biases) {}

  const NavState& state() const { return state_; }
  void step(const ImuSample& sample, double dt);

 private:
  NavState state_;
  ImuBiases biases_;
  long steps_ = 0;
};

}  // namespace dvlnav::ins
