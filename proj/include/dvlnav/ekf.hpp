#pragma once

#include <array>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "dvlnav/simkit.hpp"
#include "dvlnav/strapdown.hpp"
#include "dvlnav/types.hpp"

// Error-state Kalman filter for strapdown INS aided by DVL velocity, with the
// DVL scale factor and mounting misalignment as states.
//
// Error conventions (true = estimate corrected by the error):
//   C_b^n = (I - phi x) C_b^n_hat          phi in navigation axes
//   C_b^d = (I - mu x)  C_b^d_hat          mu in DVL axes
//   everything else additive: x = x_hat + dx
namespace dvlnav::ekf {

inline constexpr int kStates = 19;
using StateVec = Eigen::Matrix<double, kStates, 1>;
using Cov = Eigen::Matrix<double, kStates, kStates>;
using MeasJacobian = Eigen::Matrix<double, 3, kStates>;

// Offsets of the state blocks.
inline constexpr int kAtt = 0;
inline constexpr int kVel = 3;
inline constexpr int kPos = 6;  // lon, lat, h
inline constexpr int kGyroBias = 9;
inline constexpr int kAccelBias = 12;
inline constexpr int kScale = 15;
inline constexpr int kMis = 16;

/// Column names of the reported quantities, in state order. Attitude and
/// misalignment are reported as roll/pitch/yaw even though the error states
/// are rotation vectors.
extern const std::array<const char*, kStates> kStateNames;

/// chi-square, 3 degrees of freedom, 99.9%.
inline constexpr double kGate999 = 16.266;

struct EkfConfig {
  Vec3 init_attitude_sigma = Vec3(0.01, 0.1, 0.01) * kDeg;  // N, U, E tilt/heading
  double init_velocity_sigma = 0.05;                         // m/s
  double init_position_sigma = 1.0;                          // m
  double init_gyro_bias_sigma = 0.02 * sim::kDegPerHour;
  double init_accel_bias_sigma = 100.0 * sim::kMicroG;
  double init_scale_sigma = 0.2;
  double init_misalignment_sigma = 1.0 * kDeg;

  double gyro_noise_density = 0.1 * sim::kDegPerHour;  // rad/s/sqrt(Hz)
  double accel_noise_density = 10.0 * sim::kMicroG;    // m/s^2/sqrt(Hz)
  // Random-walk stabilizers, per sqrt(s).
  double gyro_bias_walk = 1e-6 * 0.01 * sim::kDegPerHour;
  double accel_bias_walk = 1e-6 * 50.0 * sim::kMicroG;
  double scale_walk = 1e-8;
  double misalignment_walk = 1e-8;

  double dvl_sigma = 0.02;  // m/s per sample
  double initial_scale = 0.8;
  double gate = kGate999;   // <= 0 disables gating

  // Errors added to the true attitude to stand in for a finished alignment.
  att::EulerYZX alignment_error_sigma{0.01 * kDeg, 0.01 * kDeg, 0.1 * kDeg};

  /// Throws InvalidConfig unless every sigma and density is positive.
  void validate() const;
};

struct EkfState {
  ins::NavState nav;
  ins::ImuBiases biases;
  double scale = 1.0;
  Dcm c_b_d = Dcm::Identity();
  Cov cov = Cov::Zero();
};

/// Nominal state at the given attitude/position, k = initial_scale, identity
/// misalignment, zero biases; diagonal covariance from the config sigmas.
EkfState init(const EkfConfig& config, const Dcm& aligned_c_b_n, const geo::GeoPosition& pos,
              double time, const Vec3& v_n = Vec3::Zero());

/// Continuous-time error dynamics dx_dot = F dx at the nominal state.
Cov process_jacobian(const EkfState& s, const ins::ImuSample& sample);

/// k C_b^d C_n^b v^n at the nominal state.
Vec3 predicted_measurement(const EkfState& s);
MeasJacobian measurement_jacobian(const EkfState& s);

/// Strapdown step for the nominal state with the current bias estimates;
/// P <- Phi P Phi^T + Q with Phi = I + F dt.
EkfState predict(const EkfState& s, const ins::ImuSample& sample, double dt, const EkfConfig& config);

struct UpdateInfo {
  Vec3 innovation = Vec3::Zero();
  double nis = 0.0;  // normalized innovation squared
};

/// Joseph-form update with the error folded back into the nominal state.
/// Throws TimebaseMismatch when the measurement time is more than `time_tol`
/// from the filter time and InnovationGateExceeded when the NIS is above the
/// gate (state untouched). With `hold_dvl_params` the scale and misalignment
/// are treated as known for this update.
EkfState update(const EkfState& s, const sim::DvlSample& meas, const EkfConfig& config,
                UpdateInfo* info = nullptr, double time_tol = 5e-3, bool hold_dvl_params = false);

/// Applies an error-state correction to the nominal state (covariance kept).
EkfState inject(const EkfState& s, const StateVec& dx);

// Finite-difference oracles for F and H. The nonlinear error rate is the
// rate of the injected "true" state minus the nominal one, mapped back into
// error coordinates.
StateVec error_rate(const EkfState& nominal, const StateVec& dx, const ins::ImuSample& sample);
Vec3 measurement_at(const EkfState& nominal, const StateVec& dx);

struct JacobianCheck {
  double worst_relative = 0.0;  // max over columns of |col_fd - col| / |col_fd|
  int worst_column = -1;
};
JacobianCheck check_process_jacobian(const EkfState& s, const ins::ImuSample& sample);
JacobianCheck check_measurement_jacobian(const EkfState& s);

/// Reported quantities (see kStateNames) of a state, and their 1-sigma.
StateVec report(const EkfState& s);
StateVec report_sigma(const EkfState& s);

struct TruthReference {
  const sim::TruthSeries* truth = nullptr;
  sim::DvlParams dvl;
  ins::ImuBiases biases;
};

/// Signed truth - estimate, angles wrapped. Empty if t is outside the truth.
std::optional<StateVec> report_error(const EkfState& s, const TruthReference& ref);

struct HistoryRecord {
  double time = 0.0;
  StateVec estimate;
  StateVec sigma;
  std::optional<StateVec> error;
};

struct RunOptions {
  double record_interval = 1.0;    // s; 0 records every update
  bool check_covariance = false;   // eigen-decompose P after every step
  // Stationary alignment phase: before this time the DVL only aids velocity.
  // At zero speed k C v carries no information on k or C, and letting the
  // filter try drives k toward zero.
  double hold_dvl_params_until = -1e300;
};

struct RunResult {
  std::vector<HistoryRecord> history;
  EkfState final_state;
  long predictions = 0;
  long updates = 0;
  long rejected = 0;
  // Filled when check_covariance is set.
  double max_asymmetry = 0.0;
  double min_eigenvalue = std::numeric_limits<double>::infinity();
};

/// Propagates from the initial state's time through the IMU stream, updating
/// at every DVL sample. Samples before the initial time are skipped.
RunResult run(const EkfState& initial, std::span<const ins::ImuSample> imu,
              std::span<const sim::DvlSample> dvl, const EkfConfig& config,
              const std::optional<TruthReference>& truth = std::nullopt, const RunOptions& opt = {});

}  // namespace dvlnav::ekf
