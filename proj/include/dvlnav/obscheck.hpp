#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dvlnav/simkit.hpp"
#include "dvlnav/strapdown.hpp"
#include "dvlnav/types.hpp"

// Trajectory conditions for estimating DVL scale/misalignment and inertial
// biases:
//   Type I  - constant attitude while the specific force changes; two such
//             segments with different change directions fix the misalignment.
//   Type II - turning; the alpha vectors (gravity seen in body axes minus the
//             accelerometer bias) must not be coplanar.
namespace dvlnav::obs {

enum class SegmentKind { TypeI, TypeII, Neither };
const char* to_string(SegmentKind kind);

struct Segment {
  SegmentKind kind = SegmentKind::Neither;
  double start = 0.0;
  double end = 0.0;
  double attitude_variation = 0.0;  // rad, integrated detrended gyro over the segment
  double excitation = 0.0;          // peak |f - f_quiet|, m/s^2 (Type I) or peak |omega|, rad/s (Type II)
  bool excited = false;             // Type I only: specific force actually changes
  Vec3 excitation_axis = Vec3::Zero();  // body frame, dominant direction of the change
};

struct ClassifyOptions {
  double block = 1.0;                      // s, averaging block
  double window = 5.0;                     // s, minimum stillness span is two windows
  double still_rate = 0.02 * kDeg;         // rad/s
  double turn_rate = 0.5 * kDeg;           // rad/s
  double turn_min_duration = 10.0;         // s
  double force_threshold = 5e-3;           // m/s^2
  double lead = 5.0;                       // s of quiet data kept before an excitation
  double merge_gap = 5.0;                  // s, excitation bursts closer than this merge
};

/// Splits the IMU stream into constant-attitude (Type I candidates, with the
/// excited parts split out), turning (Type II) and other intervals, in time
/// order. Robust to a constant gyro bias.
std::vector<Segment> classify_segments(std::span<const ins::ImuSample> imu,
                                       const ClassifyOptions& opt = {});

struct Type1Result {
  int rank = 0;
  std::optional<Vec3> free_axis;  // DVL frame
  std::vector<Vec3> directions;   // one per excited segment that passed the floor
  Vec3 singular_values = Vec3::Zero();
};

/// Excitation direction of each excited Type-I segment: principal axis of the
/// DVL velocity excursion from its quiet lead-in. Throws NoTypeISegments or
/// NoExcitation.
Type1Result check_type1(std::span<const Segment> segments, std::span<const sim::DvlSample> dvl,
                        double rank_tolerance = 1e-2, double floor = 0.05, double lead = 5.0);

struct Type2Options {
  int fit_samples = 7;             // local polynomial fit for y and y_dot
  int fit_order = 4;
  double min_duration = 60.0;      // s of turning required
  double conditioning = 1e-3;      // min eigenvalue must exceed this * trace / 3
};

struct Type2Result {
  std::vector<double> times;
  std::vector<Vec3> alpha;  // m/s^2, body frame
  Mat3 scatter = Mat3::Zero();
  double min_eigenvalue = 0.0;
  double trace = 0.0;
  bool nonsingular = false;
};

/// alpha = ((omega x) C_d^b y + C_d^b y_dot) / k - f over the Type-II segments.
/// Throws InsufficientTurning when they total less than min_duration.
Type2Result check_type2(std::span<const Segment> segments, std::span<const ins::ImuSample> imu,
                        std::span<const sim::DvlSample> dvl, double scale, const Dcm& c_d_b,
                        const Vec3& gyro_bias, const Type2Options& opt = {});

double scatter_min_eigenvalue(std::span<const Vec3> alpha);

/// Accelerometer bias from |alpha + b| = g by Gauss-Newton.
Vec3 accel_bias_from_quadratic(std::span<const Vec3> alpha, double gravity,
                               const Vec3& initial = Vec3::Zero());
/// Same bias as the negated center of the best-fit sphere through the alphas.
Vec3 accel_bias_from_sphere(std::span<const Vec3> alpha);

struct Estimable {
  bool attitude = false;
  bool velocity = false;
  bool gyro_bias = false;
  bool accel_bias = false;
  bool dvl_scale = false;
  bool dvl_roll = false;   // about body x
  bool dvl_pitch = false;  // about body z
  bool dvl_yaw = false;    // about body y
  bool all() const {
    return attitude && velocity && gyro_bias && accel_bias && dvl_scale && dvl_roll && dvl_pitch && dvl_yaw;
  }
};

struct ObservabilityReport {
  int type1_rank = 0;
  std::optional<Vec3> type1_free_axis;
  double type2_min_eigenvalue = 0.0;
  bool type2_nonsingular = false;
  Estimable estimable;
};

ObservabilityReport observability_verdict(const std::optional<Type1Result>& type1,
                                     const std::optional<Type2Result>& type2);

}  // namespace dvlnav::obs
