#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "dvlnav/error.hpp"
#include "dvlnav/simkit.hpp"

using namespace dvlnav;
using namespace dvlnav::sim;

namespace {

const geo::GeoPosition kOrigin{114.0 * kDeg, 30.0 * kDeg, -100.0};

double stddev(const std::vector<double>& x) {
  const double m = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / (x.size() - 1));
}

const TruthSeries& truth_3d() {
  static const TruthSeries t = synthesize_truth(build_plan_3d(), kOrigin, {}, 100.0);
  return t;
}

}  // namespace

TEST(Plan, BuiltInPlansAreValidAndContiguous) {
  for (const auto& plan : {build_plan_3d(), build_plan_2d()}) {
    EXPECT_NO_THROW(plan.validate());
    EXPECT_EQ(plan.segments.front().kind, MotionKind::Static);
    EXPECT_DOUBLE_EQ(plan.start(), 0.0);
  }
  EXPECT_DOUBLE_EQ(build_plan_3d().end(), 2060.0);
  EXPECT_DOUBLE_EQ(build_plan_2d().end(), 2040.0);
}

TEST(Plan, BrokenPlansAreRejected) {
  MotionPlan gap = build_plan_3d();
  gap.segments[2].start += 1.0;
  EXPECT_THROW(gap.validate(), Error);
  MotionPlan empty;
  EXPECT_THROW(empty.validate(), Error);
  MotionPlan tight = build_plan_2d();
  tight.segments[2].end = tight.segments[2].start + 100.0;  // four 30 s turns do not fit
  try {
    tight.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidPlan);
  }
}

TEST(Kinematics, RatesMatchFiniteDifferences) {
  const PlanKinematics kin(build_plan_3d(), {});
  for (double t = 1.0; t < 2060.0; t += 7.3) {
    const double h = 1e-4;
    const auto a = kin.at(t - h), b = kin.at(t + h), s = kin.at(t);
    const Vec3 vdot = (b.v_n - a.v_n) / (2 * h);
    EXPECT_LT((vdot - s.v_dot_n).norm(), 1e-6) << t;
    const Dcm ca = att::euler_to_dcm(a.euler), cb = att::euler_to_dcm(b.euler);
    const Dcm c = att::euler_to_dcm(s.euler);
    // C_n^b rate = -[w x] C_n^b
    const Vec3 w = att::vee(-(cb - ca) / (2 * h) * c.transpose());
    EXPECT_LT((w - s.omega_nb_b).norm(), 1e-7) << t;
  }
}

TEST(Kinematics, SquareClosesTheLoop) {
  const PlanKinematics kin(build_plan_2d(), {});
  const auto before = kin.at(800.0 - 1e-6), after = kin.at(2040.0);
  EXPECT_NEAR(std::remainder(after.euler.yaw - before.euler.yaw, 2 * kPi), 0.0, 1e-9);
  EXPECT_NEAR(after.euler.roll, 0.0, 1e-12);
  double peak_roll = 0.0;
  for (double t = 800; t < 2040; t += 0.5) peak_roll = std::max(peak_roll, std::abs(kin.at(t).euler.roll));
  EXPECT_NEAR(peak_roll, 5.0 * kDeg, 0.01 * kDeg);
  EXPECT_NEAR(after.euler.pitch, 0.0, 1e-12);
}

TEST(Truth, SquareReturnsToItsStart) {
  const auto truth = synthesize_truth(build_plan_2d(), kOrigin, {}, 10.0);
  const auto& a = truth.ticks[8000].nav.pos;
  const auto& b = truth.ticks.back().nav.pos;
  const auto r = geo::radii_of_curvature(a.lat);
  EXPECT_LT(std::abs(b.lat - a.lat) * r.meridian, 0.5);
  EXPECT_LT(std::abs(b.lon - a.lon) * r.transverse * std::cos(a.lat), 0.5);
  EXPECT_LT(std::abs(b.height - a.height), 1e-3);
}

TEST(Truth, TypeISegmentsHaveNoRotation) {
  const auto& truth = truth_3d();
  for (const auto& r : truth.ticks) {
    if (r.nav.time < 750.0) EXPECT_EQ(r.omega_nb_b.norm(), 0.0) << r.nav.time;
  }
}

TEST(Truth, ExcitationDirectionsDiffer) {
  const auto& truth = truth_3d();
  // Integrated |v_dot| per axis picks out the dominant excitation directions.
  Vec3 a1 = Vec3::Zero(), a2 = Vec3::Zero();
  for (const auto& r : truth.ticks) {
    if (r.nav.time >= 600 && r.nav.time < 660) a1 += r.v_dot_n.cwiseAbs();
    if (r.nav.time >= 660 && r.nav.time < 720) a2 += r.v_dot_n.cwiseAbs();
  }
  const double angle = std::acos(a1.normalized().dot(a2.normalized()));
  EXPECT_GT(angle, 30.0 * kDeg);
}

TEST(Imu, NoiseLevelMatchesDensity) {
  MotionPlan still;
  still.name = "still";
  MotionPrimitive s;
  s.start = 0;
  s.end = 200;
  still.segments.push_back(s);
  const auto truth = synthesize_truth(still, kOrigin, {}, 100.0);
  SensorErrorModel e;
  e.gyro_noise_density = 0.1 * kDegPerHour;
  e.accel_noise_density = 10 * kMicroG;
  e.seed = 42;
  const auto clean = gen_imu(truth, SensorErrorModel{}, 100.0);
  const auto noisy = gen_imu(truth, e, 100.0);
  ASSERT_EQ(clean.size(), noisy.size());
  for (int axis = 0; axis < 3; ++axis) {
    std::vector<double> g, a;
    for (std::size_t k = 0; k < clean.size(); ++k) {
      g.push_back(noisy[k].gyro(axis) - clean[k].gyro(axis));
      a.push_back(noisy[k].accel(axis) - clean[k].accel(axis));
    }
    EXPECT_NEAR(stddev(g) / (e.gyro_noise_density * 10.0), 1.0, 0.05);
    EXPECT_NEAR(stddev(a) / (e.accel_noise_density * 10.0), 1.0, 0.05);
  }
}

TEST(Imu, BiasAndDeterminism) {
  const auto& truth = truth_3d();
  const auto e = default_sensor_errors(7);
  const auto a = gen_imu(truth, e, 100.0), b = gen_imu(truth, e, 100.0);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); k += 997) {
    EXPECT_EQ(a[k].gyro, b[k].gyro);
    EXPECT_EQ(a[k].accel, b[k].accel);
  }
  const auto c = gen_imu(truth, default_sensor_errors(8), 100.0);
  EXPECT_NE(a[100].gyro, c[100].gyro);

  SensorErrorModel bias_only;
  bias_only.gyro_bias = e.gyro_bias;
  bias_only.accel_bias = e.accel_bias;
  const auto clean = gen_imu(truth, SensorErrorModel{}, 100.0);
  const auto biased = gen_imu(truth, bias_only, 100.0);
  EXPECT_LT((biased[500].gyro - clean[500].gyro - e.gyro_bias).norm(), 1e-18);
  EXPECT_LT((biased[500].accel - clean[500].accel - e.accel_bias).norm(), 1e-12);
}

TEST(Imu, RateMustDivideTruthRate) {
  EXPECT_THROW(gen_imu(truth_3d(), SensorErrorModel{}, 30.0), Error);
  EXPECT_EQ(gen_imu(truth_3d(), SensorErrorModel{}, 50.0).size(), 103001u);
}

TEST(Dvl, NoiseFreeModelAndRate) {
  const auto& truth = truth_3d();
  const auto p = default_dvl_params();
  const auto dvl = gen_dvl(truth, p, SensorErrorModel{}, 1.0);
  ASSERT_EQ(dvl.size(), 2061u);
  const auto& r = truth.ticks[70000];
  const Vec3 oracle = p.scale * p.c_b_d() * r.nav.c_b_n.transpose() * r.nav.v_n;
  EXPECT_LT((dvl[700].velocity - oracle).norm(), 1e-15);
  EXPECT_DOUBLE_EQ(dvl[700].time, 700.0);
}

TEST(Dvl, NoiseSigma) {
  const auto& truth = truth_3d();
  SensorErrorModel e;
  e.dvl_noise_sigma = 0.02;
  const auto clean = gen_dvl(truth, default_dvl_params(), SensorErrorModel{}, 100.0);
  const auto noisy = gen_dvl(truth, default_dvl_params(), e, 100.0);
  std::vector<double> d;
  for (std::size_t k = 0; k < clean.size(); ++k) d.push_back(noisy[k].velocity.y() - clean[k].velocity.y());
  EXPECT_NEAR(stddev(d) / 0.02, 1.0, 0.02);
}

TEST(CounterGaussian, MomentsAndIndependence) {
  const CounterGaussian g(123, 0), h(123, 1);
  double m = 0, v = 0, c = 0;
  const int n = 200000;
  for (int k = 0; k < n; ++k) {
    const double x = g(k), y = h(k);
    m += x;
    v += x * x;
    c += x * y;
  }
  EXPECT_NEAR(m / n, 0.0, 0.01);
  EXPECT_NEAR(v / n, 1.0, 0.02);
  EXPECT_NEAR(c / n, 0.0, 0.01);
  EXPECT_EQ(g(17), CounterGaussian(123, 0)(17));
}
