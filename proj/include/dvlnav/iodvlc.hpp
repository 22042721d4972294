#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dvlnav/attmath.hpp"
#include "dvlnav/simkit.hpp"
#include "dvlnav/strapdown.hpp"
#include "dvlnav/types.hpp"

// Offline DVL scale/misalignment observer. On a constant-attitude interval the
// accelerometer and DVL see the same velocity change, one in the body frame and
// one in the DVL frame:
//
//   k * beta(t) = C_d^b * gamma(t)
//
// beta is built from specific force, gamma from DVL velocity, both zero at the
// segment start.
namespace dvlnav::iodvlc {

struct Segment {
  double start = 0.0;
  double end = 0.0;
  int id = 0;
};

/// A steady stretch (constant velocity, same attitude) that precedes a
/// segment. When present, f(t_s) and y_dot(t_s) come from this window instead
/// of the segment's first seconds, and the Earth-rate and gravity terms that
/// the simple relation ignores are compensated.
struct ReferenceWindow {
  double start = 0.0;
  double end = 0.0;
};

struct BetaGammaRecord {
  double time = 0.0;
  Vec3 beta = Vec3::Zero();
  Vec3 gamma = Vec3::Zero();
  int segment_id = 0;
};
using BetaGammaSeries = std::vector<BetaGammaRecord>;

struct AccumulateOptions {
  double min_length = 10.0;
  double accel_fit_window = 1.0;  // f(t_s): linear fit over this span
  double dvl_fit_window = 5.0;    // y(t_s), y_dot(t_s): quadratic fit over this span
  std::optional<ReferenceWindow> reference;
  double anchor_window = 5.0;     // quiet span at the segment start (reference mode)
  // Current calibration guess, used only by the compensation terms.
  double scale_guess = 1.0;
  Dcm c_d_b_guess = Dcm::Identity();
};

BetaGammaSeries accumulate(std::span<const ins::ImuSample> imu,
                           std::span<const sim::DvlSample> dvl, const Segment& segment,
                           const ins::ImuBiases& biases = {}, const AccumulateOptions& opt = {});

/// beta with the specific-force *rate* in place of specific force. Kept only to
/// show that this form does not satisfy the relation above.
BetaGammaSeries accumulate_rate_form(std::span<const ins::ImuSample> imu,
                                     std::span<const sim::DvlSample> dvl,
                                     const Segment& segment);

inline constexpr double kBetaFloor = 0.05;      // m/s
inline constexpr std::size_t kMinScaleSamples = 100;

struct ScaleEstimate {
  double scale = 0.0;
  std::vector<double> ratios;  // |gamma|/|beta| for retained samples
};

/// Median of |gamma|/|beta| over samples with |beta| above the floor. Throws
/// InsufficientExcitation when fewer than kMinScaleSamples survive.
ScaleEstimate estimate_scale(const BetaGammaSeries& series, double beta_floor = kBetaFloor);

struct DvlCalibration {
  // Minimizer of sum |k beta - C gamma|^2 over k for the fitted C. The median
  // ratio is biased upward by DVL noise wherever |beta| is small.
  double scale_estimate = 1.0;
  double scale_median = 1.0;
  Dcm misalignment_estimate = Dcm::Identity();  // C_d^b
  std::vector<double> scale_samples;
  double residual = 0.0;  // rms |k beta - C gamma|, m/s
  std::optional<Vec3> free_axis;
  Vec3 singular_values = Vec3::Zero();
};

DvlCalibration estimate_misalignment(const BetaGammaSeries& series, double scale,
                                     double rank_tolerance = 1e-2);

/// Least-squares k for a given rotation: sum beta.(C gamma) / sum |beta|^2.
double refine_scale(const BetaGammaSeries& series, const Dcm& c_d_b);

double rms_residual(const BetaGammaSeries& series, double scale, const Dcm& c_d_b);

struct CalibrationInput {
  Segment segment;
  std::optional<ReferenceWindow> reference;
};

struct CalibrateResult {
  DvlCalibration calibration;
  BetaGammaSeries series;  // all segments, final pass
};

/// accumulate -> estimate_scale -> estimate_misalignment, repeated so the
/// compensation terms use the latest estimate.
CalibrateResult calibrate(std::span<const ins::ImuSample> imu, std::span<const sim::DvlSample> dvl,
                          std::span<const CalibrationInput> segments, const AccumulateOptions& base = {},
                          int iterations = 10);

/// Estimates using only the samples up to each output time.
struct HistoryPoint {
  double time = 0.0;
  std::optional<double> scale;     // median ratio
  std::optional<double> scale_ls;  // least squares with the current rotation
  std::optional<Dcm> c_d_b;
  std::optional<Vec3> free_axis;
};
std::vector<HistoryPoint> estimate_history(const BetaGammaSeries& series, double step = 1.0,
                                           double beta_floor = kBetaFloor);

}  // namespace dvlnav::iodvlc
