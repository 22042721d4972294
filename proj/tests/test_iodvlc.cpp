#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dvlnav/error.hpp"
#include "dvlnav/iodvlc.hpp"
#include "dvlnav/simkit.hpp"

using namespace dvlnav;
using namespace dvlnav::iodvlc;

namespace {

const geo::GeoPosition kOrigin{114.0 * kDeg, 30.0 * kDeg, -100.0};
constexpr double kRate = 100.0;

struct Streams {
  std::vector<ins::ImuSample> imu;
  std::vector<sim::DvlSample> dvl;
};

// f(t) = f0 + c (t - t0); y built from the ideal velocity relation.
Streams polynomial_oracle(double scale, const Dcm& c_b_d, const Vec3& c) {
  const Vec3 f0(0.3, 9.79, -0.1), v0(1.0, -0.2, 0.5), a(0.02, -0.01, 0.03);
  Streams s;
  const double dt = 1.0 / kRate;
  for (int k = 0; k <= 3000; ++k) {
    const double t = k * dt;
    const double tm = t + 0.5 * dt;
    s.imu.push_back({t, Vec3::Zero(), f0 + c * tm});
    s.dvl.push_back({t, scale * c_b_d * (v0 + a * t + 0.5 * c * t * t)});
  }
  return s;
}

double max_residual(const BetaGammaSeries& series, double scale, const Dcm& c_d_b) {
  double worst = 0.0;
  for (const auto& r : series) worst = std::max(worst, (scale * r.beta - c_d_b * r.gamma).norm());
  return worst;
}

Vec3 angle_errors_deg(const Dcm& c_d_b_est, const sim::DvlParams& truth) {
  const att::EulerYZX e = att::dcm_to_euler(c_d_b_est.transpose());
  return Vec3(e.roll - truth.misalignment.roll, e.pitch - truth.misalignment.pitch,
              e.yaw - truth.misalignment.yaw) / kDeg;
}

struct Scenario {
  sim::TruthSeries truth;
  std::vector<ins::ImuSample> imu;
  std::vector<sim::DvlSample> dvl;
};

Scenario make_scenario(const sim::MotionPlan& plan, const sim::SensorErrorModel& errors) {
  Scenario s;
  s.truth = sim::synthesize_truth(plan, kOrigin, {}, kRate);
  s.imu = sim::gen_imu(s.truth, errors, kRate);
  s.dvl = sim::gen_dvl(s.truth, sim::default_dvl_params(), errors, kRate);
  return s;
}

const Scenario& clean_3d() {
  static const Scenario s = make_scenario(sim::build_plan_3d(), sim::SensorErrorModel{});
  return s;
}

const ReferenceWindow kStatic{0.0, 600.0};

std::vector<CalibrationInput> segments_3d() {
  return {{{600, 660, 1}, kStatic}, {{660, 720, 2}, kStatic}, {{720, 750, 3}, kStatic}};
}

}  // namespace

TEST(Accumulate, ConstantForceAndLinearVelocityGiveZero) {
  Streams s = polynomial_oracle(1.0, Dcm::Identity(), Vec3::Zero());
  const auto series = accumulate(s.imu, s.dvl, {0.0, 30.0, 0});
  ASSERT_GT(series.size(), 2000u);
  for (const auto& r : series) {
    EXPECT_LT(r.beta.norm(), 1e-12);
    EXPECT_LT(r.gamma.norm(), 1e-12);
  }
}

TEST(Accumulate, PolynomialOracle) {
  const Vec3 c(0.05, -0.02, 0.03);
  const Dcm c_b_d = att::euler_to_dcm({-0.1 * kDeg, -0.2 * kDeg, -0.5 * kDeg});
  const double k = 0.9998;
  Streams s = polynomial_oracle(k, c_b_d, c);
  const auto series = accumulate(s.imu, s.dvl, {0.0, 30.0, 7});
  EXPECT_EQ(series.front().time, 0.0);
  EXPECT_EQ(series.front().beta, Vec3::Zero());
  EXPECT_LT(series.front().gamma.norm(), 1e-12);
  for (const auto& r : series) {
    EXPECT_EQ(r.segment_id, 7);
    EXPECT_LT((r.beta - 0.5 * c * r.time * r.time).norm(), 1e-12);
  }
  EXPECT_LT(max_residual(series, k, c_b_d.transpose()), 1e-12);

  // The specific-force-rate form does not satisfy the relation.
  const auto rate_form = accumulate_rate_form(s.imu, s.dvl, {0.0, 30.0, 7});
  EXPECT_GT(max_residual(rate_form, k, c_b_d.transpose()), 1.0);
}

TEST(Accumulate, Preconditions) {
  Streams s = polynomial_oracle(1.0, Dcm::Identity(), Vec3(0.1, 0, 0));
  try {
    accumulate(s.imu, s.dvl, {0.0, 5.0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SegmentTooShort);
  }
  auto gappy = s.imu;
  gappy.erase(gappy.begin() + 1200, gappy.begin() + 1300);
  try {
    accumulate(gappy, s.dvl, {0.0, 30.0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::StreamGap);
  }
  try {
    accumulate(s.imu, s.dvl, {0.0, 40.0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::StreamGap);
  }
}

TEST(Scale, TrivialAndInsufficient) {
  Streams s = polynomial_oracle(1.0, Dcm::Identity(), Vec3(0.05, 0.01, 0));
  const auto series = accumulate(s.imu, s.dvl, {0.0, 30.0, 0});
  EXPECT_NEAR(estimate_scale(series).scale, 1.0, 1e-9);

  Streams flat = polynomial_oracle(1.0, Dcm::Identity(), Vec3::Zero());
  try {
    estimate_scale(accumulate(flat.imu, flat.dvl, {0.0, 30.0, 0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientExcitation);
  }
}

TEST(Misalignment, TwoDirectionsRecoverRotation) {
  const Dcm c_b_d = att::euler_to_dcm({0.3 * kDeg, -1.2 * kDeg, 2.0 * kDeg});
  Streams a = polynomial_oracle(1.02, c_b_d, Vec3(0.05, 0.0, 0.0));
  Streams b = polynomial_oracle(1.02, c_b_d, Vec3(0.0, 0.04, 0.0));
  auto series = accumulate(a.imu, a.dvl, {0.0, 30.0, 0});
  const auto second = accumulate(b.imu, b.dvl, {0.0, 30.0, 1});
  series.insert(series.end(), second.begin(), second.end());
  const auto k = estimate_scale(series).scale;
  EXPECT_NEAR(k, 1.02, 1e-9);
  const auto cal = estimate_misalignment(series, k);
  EXPECT_FALSE(cal.free_axis);
  EXPECT_LT(att::log_so3(cal.misalignment_estimate * c_b_d).norm() / kDeg, 1e-6);
  EXPECT_LT(cal.residual, 1e-10);
}

TEST(Misalignment, SingleDirectionReportsFreeAxis) {
  const Dcm c_b_d = att::euler_to_dcm({0.3 * kDeg, -1.2 * kDeg, 2.0 * kDeg});
  Streams a = polynomial_oracle(1.0, c_b_d, Vec3(0.05, 0.0, 0.0));
  const auto series = accumulate(a.imu, a.dvl, {0.0, 30.0, 0});
  const auto cal = estimate_misalignment(series, 1.0);
  ASSERT_TRUE(cal.free_axis);
  EXPECT_GT(std::abs(cal.free_axis->x()), std::cos(1e-3));
}

TEST(Scenario3d, NoiseFreeResidualOnFirstSegment) {
  const auto& sc = clean_3d();
  const auto p = sim::default_dvl_params();
  AccumulateOptions opt;
  opt.reference = kStatic;
  opt.scale_guess = p.scale;
  opt.c_d_b_guess = p.c_d_b();
  const auto series = accumulate(sc.imu, sc.dvl, {600, 660, 1}, {}, opt);
  EXPECT_LT(max_residual(series, p.scale, p.c_d_b()), 1e-6);
  EXPECT_EQ(series.front().beta, Vec3::Zero());
}

TEST(Scenario3d, NoiseFreeCalibration) {
  const auto& sc = clean_3d();
  const auto segs = segments_3d();
  const auto res = calibrate(sc.imu, sc.dvl, segs);
  const auto p = sim::default_dvl_params();
  EXPECT_NEAR(res.calibration.scale_estimate, p.scale, 1e-6);
  EXPECT_FALSE(res.calibration.free_axis);
  const Vec3 err = angle_errors_deg(res.calibration.misalignment_estimate, p);
  EXPECT_LT(err.cwiseAbs().maxCoeff(), 1e-3) << err.transpose();
  EXPECT_LT(res.calibration.residual, 1e-6);
}

TEST(Scenario3d, ScaleInvariance) {
  const auto& sc = clean_3d();
  auto scaled = sc.dvl;
  for (auto& d : scaled) d.velocity *= 1.7;
  const auto segs = segments_3d();
  const auto a = calibrate(sc.imu, sc.dvl, segs).calibration;
  const auto b = calibrate(sc.imu, scaled, segs).calibration;
  EXPECT_NEAR(b.scale_estimate / a.scale_estimate, 1.7, 1e-9);
  EXPECT_LT((a.misalignment_estimate - b.misalignment_estimate).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Scenario3d, RollConvergesWithDescent) {
  const auto& sc = clean_3d();
  const auto res = calibrate(sc.imu, sc.dvl, segments_3d());
  const auto hist = estimate_history(res.series, 1.0);
  bool before = false, after = false;
  for (const auto& h : hist) {
    if (std::abs(h.time - 650.0) < 1e-9) before = h.free_axis.has_value();
    if (std::abs(h.time - 700.0) < 1e-9) after = !h.free_axis.has_value();
  }
  EXPECT_TRUE(before);
  EXPECT_TRUE(after);
}

TEST(Scenario3d, NominalNoise) {
  const auto sc = make_scenario(sim::build_plan_3d(), sim::default_sensor_errors(1));
  const auto segs = segments_3d();
  const auto res = calibrate(sc.imu, sc.dvl, segs);
  const auto p = sim::default_dvl_params();
  EXPECT_NEAR(res.calibration.scale_estimate, p.scale, 1e-3);
  const Vec3 err = angle_errors_deg(res.calibration.misalignment_estimate, p);
  EXPECT_LT(std::abs(err.z()), 0.2);
  EXPECT_LT(std::abs(err.y()), 0.2);
  EXPECT_LT(std::abs(err.x()), 0.5);

  // Segment additivity of the fit residual.
  double worst_single = 0.0;
  for (const auto& s : segs) {
    const CalibrationInput one[] = {s};
    worst_single = std::max(worst_single, calibrate(sc.imu, sc.dvl, one).calibration.residual);
  }
  EXPECT_LE(res.calibration.residual, worst_single + 1e-3);
}

TEST(Scenario2d, RollIsFree) {
  const auto sc = make_scenario(sim::build_plan_2d(), sim::SensorErrorModel{});
  const CalibrationInput segs[] = {{{600, 800, 1}, kStatic}};
  const auto res = calibrate(sc.imu, sc.dvl, segs);
  ASSERT_TRUE(res.calibration.free_axis);
  EXPECT_GT(std::abs(res.calibration.free_axis->x()), std::cos(5 * kDeg));
  EXPECT_NEAR(res.calibration.scale_estimate, sim::default_dvl_params().scale, 1e-6);
}
