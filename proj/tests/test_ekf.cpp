#include "dvlnav/ekf.hpp"

#include <gtest/gtest.h>

#include <random>

#include "dvlnav/attmath.hpp"
#include "dvlnav/error.hpp"

using namespace dvlnav;
using namespace dvlnav::ekf;

namespace {

const att::EulerYZX kInit{3.0 * kDeg, 0.0, 10.0 * kDeg};
const geo::GeoPosition kOrigin{114.0 * kDeg, 30.0 * kDeg, -100.0};

EkfState random_state(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  EkfConfig cfg;
  const Dcm c = att::exp_so3(Vec3(u(rng), u(rng), u(rng)) * 2.0);
  const geo::GeoPosition pos{u(rng) * 3.0, u(rng) * 1.0, u(rng) * 500.0};
  EkfState s = init(cfg, c, pos, 0.0, Vec3(u(rng), u(rng), u(rng)) * 5.0);
  s.biases.gyro = Vec3(u(rng), u(rng), u(rng)) * 1e-5;
  s.biases.accel = Vec3(u(rng), u(rng), u(rng)) * 1e-3;
  s.scale = 1.0 + 0.2 * u(rng);
  s.c_b_d = att::exp_so3(Vec3(u(rng), u(rng), u(rng)) * 0.05);
  return s;
}

ins::ImuSample random_sample(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ins::ImuSample m;
  m.gyro = Vec3(u(rng), u(rng), u(rng)) * 0.1;
  m.accel = Vec3(u(rng), u(rng) + 9.8, u(rng));
  return m;
}

struct Scenario {
  sim::TruthSeries truth;
  std::vector<ins::ImuSample> imu;
  std::vector<sim::DvlSample> dvl;
  sim::DvlParams params;
  sim::SensorErrorModel errors;
};

Scenario make(const sim::MotionPlan& plan, const sim::SensorErrorModel& e) {
  Scenario s;
  s.truth = sim::synthesize_truth(plan, kOrigin, kInit, 100.0);
  s.params = sim::default_dvl_params();
  s.errors = e;
  s.imu = sim::gen_imu(s.truth, e, 100.0);
  s.dvl = sim::gen_dvl(s.truth, s.params, e, 100.0);
  return s;
}

const sim::TruthRecord& tick_at(const sim::TruthSeries& t, double time) {
  return t.ticks[static_cast<std::size_t>(std::llround(time * t.rate))];
}

// The filter starts with the stationary phase and does its own fine alignment;
// k and the misalignment are held until the vehicle moves.
RunResult run_scenario(const Scenario& sc, const EkfConfig& cfg, const Dcm& att_error,
                       RunOptions opt = {}) {
  constexpr double start = 0.0;
  opt.hold_dvl_params_until = 600.0;
  const auto& t0 = tick_at(sc.truth, start);
  const EkfState s0 = init(cfg, att_error * t0.nav.c_b_n, t0.nav.pos, start, t0.nav.v_n);
  TruthReference ref{&sc.truth, sc.params, {sc.errors.gyro_bias, sc.errors.accel_bias}};
  return run(s0, sc.imu, sc.dvl, cfg, ref, opt);
}

const Scenario& noisy_3d() {
  static const Scenario s = make(sim::build_plan_3d(), sim::default_sensor_errors(5));
  return s;
}

const Dcm kAlignmentError = att::exp_so3(Vec3(0.01, 0.1, -0.01) * kDeg);

}  // namespace

TEST(Init, MatchesConfig) {
  EkfConfig cfg;
  const Dcm c = att::euler_to_dcm(kInit).transpose();
  const EkfState s = init(cfg, c, kOrigin, 600.0);
  EXPECT_DOUBLE_EQ(s.scale, 0.8);
  EXPECT_TRUE(s.c_b_d.isApprox(Dcm::Identity()));
  EXPECT_EQ((s.nav.c_b_n - c).norm(), 0.0);
  EXPECT_DOUBLE_EQ(s.nav.time, 600.0);
  const Cov off = s.cov - Cov(s.cov.diagonal().asDiagonal());
  EXPECT_EQ(off.norm(), 0.0);
  EXPECT_DOUBLE_EQ(std::sqrt(s.cov(kScale, kScale)), 0.2);
  EXPECT_NEAR(report_sigma(s)(kScale), 0.2, 1e-15);
  EXPECT_NEAR(report(s)(kScale), 0.8, 0.0);
}

TEST(Init, InvalidConfigRejected) {
  EkfConfig cfg;
  cfg.dvl_sigma = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.init_attitude_sigma.x() = -1.0;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_NO_THROW(EkfConfig{}.validate());
}

TEST(Jacobian, ProcessMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100; ++i) {
    const EkfState s = random_state(rng);
    const auto chk = check_process_jacobian(s, random_sample(rng));
    ASSERT_LT(chk.worst_relative, 1e-4) << "state " << i << " column " << chk.worst_column;
  }
}

TEST(Jacobian, MeasurementMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 100; ++i) {
    const auto chk = check_measurement_jacobian(random_state(rng));
    ASSERT_LT(chk.worst_relative, 1e-4) << "state " << i << " column " << chk.worst_column;
  }
}

TEST(Jacobian, ZeroErrorHasZeroRate) {
  std::mt19937_64 rng(13);
  const EkfState s = random_state(rng);
  const auto m = random_sample(rng);
  EXPECT_LT(error_rate(s, StateVec::Zero(), m).norm(), 1e-15);
  EXPECT_LT((measurement_at(s, StateVec::Zero()) - predicted_measurement(s)).norm(), 1e-15);
}

TEST(Predict, RejectsBadStep) {
  const EkfState s = init({}, Dcm::Identity(), kOrigin, 0.0);
  EXPECT_THROW(predict(s, {}, 0.0, {}), Error);
  EXPECT_THROW(predict(s, {}, 0.5, {}), Error);
}

TEST(Predict, StaticWithoutUpdates) {
  EkfConfig cfg;
  cfg.scale_walk = 1e-300;
  const Dcm c = att::euler_to_dcm(kInit).transpose();
  EkfState s = init(cfg, c, kOrigin, 0.0);
  const auto ideal = ins::invert_dynamics(c, Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), kOrigin);
  const ins::ImuSample m{0.0, ideal.gyro, ideal.accel};
  const double k_var = s.cov(kScale, kScale);
  double prev = s.cov.topLeftCorner<9, 9>().trace();
  for (int i = 0; i < 2000; ++i) {
    s = predict(s, m, 0.01, cfg);
    const double tr = s.cov.topLeftCorner<9, 9>().trace();
    ASSERT_GE(tr, prev);
    prev = tr;
  }
  EXPECT_DOUBLE_EQ(s.cov(kScale, kScale), k_var);
  EXPECT_LT(s.nav.v_n.norm(), 1e-9);
  EXPECT_NEAR(s.nav.time, 20.0, 1e-9);
}

TEST(Update, ZeroInnovationKeepsNominal) {
  std::mt19937_64 rng(21);
  EkfConfig cfg;
  const EkfState s = random_state(rng);
  const sim::DvlSample y{s.nav.time, predicted_measurement(s)};
  UpdateInfo info;
  const EkfState u = update(s, y, cfg, &info);
  EXPECT_LT(info.innovation.norm(), 1e-15);
  EXPECT_LT((u.nav.v_n - s.nav.v_n).norm(), 1e-12);
  EXPECT_LT((u.nav.c_b_n - s.nav.c_b_n).norm(), 1e-12);
  EXPECT_LT((u.c_b_d - s.c_b_d).norm(), 1e-12);
  EXPECT_NEAR(u.scale, s.scale, 1e-12);
  EXPECT_LE(u.cov.trace(), s.cov.trace());
  EXPECT_LT((u.cov - u.cov.transpose()).cwiseAbs().maxCoeff(), 1e-12 * u.cov.cwiseAbs().maxCoeff());
}

TEST(Update, RepeatedMeasurementShrinksCovariance) {
  std::mt19937_64 rng(22);
  EkfConfig cfg;
  EkfState s = random_state(rng);
  const sim::DvlSample y{s.nav.time, predicted_measurement(s) + Vec3(0.01, -0.01, 0.005)};
  double prev = s.cov.trace();
  for (int i = 0; i < 20; ++i) {
    s = update(s, y, cfg);
    ASSERT_LT(s.cov.trace(), prev);
    prev = s.cov.trace();
  }
}

TEST(Update, GateAndTimebase) {
  std::mt19937_64 rng(23);
  EkfConfig cfg;
  cfg.init_scale_sigma = 1e-3;
  cfg.init_misalignment_sigma = 1e-3;
  cfg.init_velocity_sigma = 1e-3;
  const EkfState s = init(cfg, Dcm::Identity(), kOrigin, 5.0, Vec3(2.0, 0.0, 0.0));
  const Vec3 y = predicted_measurement(s);
  try {
    (void)update(s, {5.0, y + Vec3(5.0, 0.0, 0.0)}, cfg);
    FAIL() << "outlier accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InnovationGateExceeded);
  }
  try {
    (void)update(s, {5.1, y}, cfg);
    FAIL() << "stale measurement accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TimebaseMismatch);
  }
  cfg.gate = 0.0;
  EXPECT_NO_THROW((void)update(s, {5.0, y + Vec3(5.0, 0.0, 0.0)}, cfg));
}

TEST(Run, NoiseFreeExactInitTracksVelocity) {
  const Scenario sc = make(sim::build_plan_3d(), {});
  EkfConfig cfg;
  cfg.initial_scale = sc.params.scale;
  const auto& t0 = tick_at(sc.truth, 600.0);
  EkfState s0 = init(cfg, t0.nav.c_b_n, t0.nav.pos, 600.0, t0.nav.v_n);
  s0.c_b_d = sc.params.c_b_d();
  TruthReference ref{&sc.truth, sc.params, {}};
  RunOptions opt;
  opt.record_interval = 10.0;
  const auto r = run(s0, sc.imu, sc.dvl, cfg, ref, opt);
  ASSERT_GT(r.history.size(), 140u);
  for (const auto& h : r.history) {
    ASSERT_TRUE(h.error);
    ASSERT_LT(h.error->segment<3>(kVel).norm(), 1e-3) << "t = " << h.time;
  }
  EXPECT_EQ(r.rejected, 0);
}

TEST(Run, ScaleConvergesAndCovarianceStaysValid) {
  EkfConfig cfg;
  RunOptions opt;
  opt.check_covariance = true;
  const auto r = run_scenario(noisy_3d(), cfg, kAlignmentError, opt);
  EXPECT_EQ(r.history.front().estimate(kScale), 0.8);
  for (const auto& h : r.history) {
    if (h.time < 600.0) ASSERT_EQ(h.estimate(kScale), 0.8);
    if (h.time <= 700.0) continue;
    const double dk = std::abs(h.error->coeff(kScale));
    ASSERT_LT(dk, 3.0 * h.sigma(kScale)) << "t = " << h.time;
    ASSERT_LT(dk, 1e-3) << "t = " << h.time;
  }
  EXPECT_LT(r.history.back().sigma(kScale), 3e-4);
  EXPECT_LT(r.max_asymmetry, 1e-12);
  EXPECT_GE(r.min_eigenvalue, -1e-12);
}

TEST(Run, MisalignmentTiming3D) {
  const auto r = run_scenario(noisy_3d(), {}, kAlignmentError);
  auto at = [&](double t) -> const HistoryRecord& {
    for (const auto& h : r.history) {
      if (h.time >= t - 1e-9) return h;
    }
    return r.history.back();
  };
  EXPECT_LT(std::abs(at(660.0).error->coeff(kMis + 1)), 0.05 * kDeg);
  EXPECT_LT(std::abs(at(660.0).error->coeff(kMis + 2)), 0.05 * kDeg);
  EXPECT_GE(at(660.0).sigma(kMis), 5.0 * at(900.0).sigma(kMis));
  for (const auto& h : r.history) {
    if (h.time >= 720.0) ASSERT_LT(std::abs(h.error->coeff(kMis)), 0.1 * kDeg) << "t = " << h.time;
  }
}

TEST(Run, RollUnobservableIn2D) {
  const Scenario sc = make(sim::build_plan_2d(), sim::default_sensor_errors(6));
  const auto r = run_scenario(sc, {}, kAlignmentError);
  const auto& first = r.history.front();
  const auto& last = r.history.back();
  EXPECT_GE(last.sigma(kMis), 0.5 * first.sigma(kMis));
  EXPECT_LE(last.sigma(kScale), first.sigma(kScale) / 10.0);
  EXPECT_LE(last.sigma(kMis + 1), first.sigma(kMis + 1) / 10.0);
  EXPECT_LE(last.sigma(kMis + 2), first.sigma(kMis + 2) / 10.0);
  EXPECT_LT(std::abs(last.error->coeff(kScale)), 5e-4);
}
