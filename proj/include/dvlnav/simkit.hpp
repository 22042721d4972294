#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dvlnav/attmath.hpp"
#include "dvlnav/geo.hpp"
#include "dvlnav/strapdown.hpp"

namespace dvlnav::sim {

enum class MotionKind { Static, LevelAccelerate, Descend, Ascend, SquareLegWithTiltedTurn };

const char* to_string(MotionKind kind);

/// One contiguous piece of a motion plan. Forward speed is continuous: each
/// primitive starts at the speed the previous one ended with, and a
/// SquareLegWithTiltedTurn keeps it. Constant-attitude primitives
/// (LevelAccelerate, Descend, Ascend) hold still for `dwell` seconds, then
/// run a smooth excitation over `ramp` seconds (0 = rest of the segment).
struct MotionPrimitive {
  MotionKind kind = MotionKind::Static;
  double start = 0.0;
  double end = 0.0;
  double speed_to = 0.0;       // LevelAccelerate target forward speed, m/s
  double surge = 0.0;          // peak of a sin^2 forward-speed bump, m/s
  double vertical_peak = 0.0;  // peak of a sin^2 vertical-speed bump, m/s (up positive)
  double dwell = 5.0;
  double ramp = 0.0;
  double turn_rate = 3.0 * kDeg;  // mean yaw rate during a turn, rad/s
  double bank = 5.0 * kDeg;       // peak extra roll during a turn, rad
  double turn_pitch = 5.0 * kDeg;  // peak pitch during a turn, sign alternating, rad
  double turn_angle = 90.0 * kDeg;
  int turns = 4;

  /// Constant-attitude primitives whose specific-force rate is excited.
  bool constant_attitude() const {
    return kind == MotionKind::LevelAccelerate || kind == MotionKind::Descend ||
           kind == MotionKind::Ascend;
  }
};

struct MotionPlan {
  std::string name;
  std::vector<MotionPrimitive> segments;

  double start() const { return segments.front().start; }
  double end() const { return segments.back().end; }
  /// Throws InvalidPlan when segments are empty, overlap, or leave gaps.
  void validate() const;
  std::vector<double> boundaries() const;
};

MotionPlan build_plan_3d();
MotionPlan build_plan_2d();

struct DvlParams {
  double scale = 1.0;
  /// Angles of C_b^d in the y-z-x sequence.
  att::EulerYZX misalignment;

  Dcm c_b_d() const { return att::euler_to_dcm(misalignment); }
  Dcm c_d_b() const { return c_b_d().transpose(); }
};

/// Scale 0.9998 and misalignment roll -0.1, pitch -0.2, yaw -0.5 degrees.
DvlParams default_dvl_params();

struct SensorErrorModel {
  Vec3 gyro_bias = Vec3::Zero();    // rad/s
  double gyro_noise_density = 0.0;  // rad/s/sqrt(Hz)
  Vec3 accel_bias = Vec3::Zero();   // m/s^2
  double accel_noise_density = 0.0;  // m/s^2/sqrt(Hz)
  double dvl_noise_sigma = 0.0;     // m/s
  std::uint64_t seed = 1;

  void validate() const;
};

inline constexpr double kDegPerHour = kDeg / 3600.0;
inline constexpr double kMicroG = 9.80665e-6;

/// Gyro bias 0.01 deg/h, noise 0.1 deg/h/sqrt(Hz); accelerometer bias 50 ug,
/// noise 10 ug/sqrt(Hz); DVL noise 2 cm/s.
SensorErrorModel default_sensor_errors(std::uint64_t seed = 1);

struct DvlSample {
  double time = 0.0;
  Vec3 velocity = Vec3::Zero();  // y, DVL frame
};

struct TruthRecord {
  ins::NavState nav;
  Vec3 omega_nb_b = Vec3::Zero();
  Vec3 v_dot_n = Vec3::Zero();
};

struct TruthSeries {
  double rate = 100.0;
  std::vector<TruthRecord> ticks;      // at k / rate
  std::vector<TruthRecord> midpoints;  // at (k + 1/2) / rate, one fewer than ticks

  double dt() const { return 1.0 / rate; }
};

/// Closed-form kinematics of a plan: attitude, attitude rate, velocity and
/// velocity rate at any time. Position requires integration and is left to
/// synthesize_truth.
class PlanKinematics {
 public:
  PlanKinematics(MotionPlan plan, const att::EulerYZX& init_attitude);

  struct Sample {
    att::EulerYZX euler;  // of C_n^b
    Vec3 omega_nb_b;
    Vec3 v_n;
    Vec3 v_dot_n;
  };
  Sample at(double t) const;

  const MotionPlan& plan() const { return plan_; }

 private:
  struct SegmentStart {
    double speed;
    double roll;
    double yaw;
  };
  MotionPlan plan_;
  att::EulerYZX init_;
  std::vector<SegmentStart> starts_;
};

TruthSeries synthesize_truth(const MotionPlan& plan, const geo::GeoPosition& origin,
                             const att::EulerYZX& init_attitude, double rate = 100.0);

/// Sensor stream at the truth tick rate; `rate` must equal truth.rate or divide
/// it. Each sample at t_k is evaluated at the interval midpoint.
std::vector<ins::ImuSample> gen_imu(const TruthSeries& truth, const SensorErrorModel& errors,
                                    double rate);

std::vector<DvlSample> gen_dvl(const TruthSeries& truth, const DvlParams& params,
                               const SensorErrorModel& errors, double rate);

/// Deterministic counter-based Gaussian source (SplitMix64 hash of
/// seed/stream/counter, Box-Muller). Identical on every platform.
class CounterGaussian {
 public:
  CounterGaussian(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}
  double operator()(std::uint64_t counter) const;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
};

}  // namespace dvlnav::sim
