#include "dvlnav/simkit.hpp"

#include <cmath>
#include <limits>

#include "dvlnav/error.hpp"

namespace dvlnav::sim {

using att::EulerYZX;
using geo::GeoPosition;

const char* to_string(MotionKind kind) {
  switch (kind) {
    case MotionKind::Static: return "Static";
    case MotionKind::LevelAccelerate: return "LevelAccelerate";
    case MotionKind::Descend: return "Descend";
    case MotionKind::Ascend: return "Ascend";
    case MotionKind::SquareLegWithTiltedTurn: return "SquareLegWithTiltedTurn";
  }
  return "Unknown";
}

void MotionPlan::validate() const {
  if (segments.empty()) throw Error(ErrorCode::InvalidPlan, "plan has no segments");
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    if (!(s.end > s.start)) {
      throw Error(ErrorCode::InvalidPlan, "segment " + std::to_string(i) + " has end <= start");
    }
    if (i > 0 && std::abs(s.start - segments[i - 1].end) > 1e-9) {
      throw Error(ErrorCode::InvalidPlan,
                  "segment " + std::to_string(i) + " is not contiguous with its predecessor");
    }
    if (s.constant_attitude()) {
      const double ramp = s.ramp > 0.0 ? s.ramp : s.end - s.start - s.dwell;
      if (s.dwell < 0.0 || ramp <= 0.0 || s.dwell + ramp > s.end - s.start + 1e-9) {
        throw Error(ErrorCode::InvalidPlan, "segment " + std::to_string(i) + " dwell/ramp do not fit");
      }
    }
    if (s.kind == MotionKind::SquareLegWithTiltedTurn) {
      if (s.turns < 1 || s.turn_rate <= 0.0 ||
          s.turns * s.turn_angle / s.turn_rate >= s.end - s.start) {
        throw Error(ErrorCode::InvalidPlan, "square segment too short for its turns");
      }
    }
  }
}

std::vector<double> MotionPlan::boundaries() const {
  std::vector<double> out;
  for (const auto& s : segments) out.push_back(s.end);
  return out;
}

namespace {

MotionPrimitive make(MotionKind kind, double start, double end) {
  MotionPrimitive p;
  p.kind = kind;
  p.start = start;
  p.end = end;
  return p;
}

constexpr double kCruise = 2.0;

}  // namespace

MotionPlan build_plan_3d() {
  MotionPlan plan;
  plan.name = "3d";
  plan.segments.push_back(make(MotionKind::Static, 0, 600));
  auto accel = make(MotionKind::LevelAccelerate, 600, 660);
  accel.speed_to = kCruise;
  accel.ramp = 30.0;
  plan.segments.push_back(accel);
  auto descend = make(MotionKind::Descend, 660, 720);
  descend.vertical_peak = -0.5;
  plan.segments.push_back(descend);
  auto level = make(MotionKind::LevelAccelerate, 720, 750);
  level.speed_to = kCruise;
  level.surge = 0.3;
  plan.segments.push_back(level);
  plan.segments.push_back(make(MotionKind::SquareLegWithTiltedTurn, 750, 1970));
  auto level2 = make(MotionKind::LevelAccelerate, 1970, 2000);
  level2.speed_to = kCruise;
  level2.surge = 0.3;
  plan.segments.push_back(level2);
  auto ascend = make(MotionKind::Ascend, 2000, 2060);
  ascend.vertical_peak = 0.5;
  plan.segments.push_back(ascend);
  return plan;
}

MotionPlan build_plan_2d() {
  MotionPlan plan;
  plan.name = "2d";
  plan.segments.push_back(make(MotionKind::Static, 0, 600));
  auto accel = make(MotionKind::LevelAccelerate, 600, 800);
  accel.speed_to = kCruise;
  accel.ramp = 30.0;
  plan.segments.push_back(accel);
  plan.segments.push_back(make(MotionKind::SquareLegWithTiltedTurn, 800, 2040));
  return plan;
}

DvlParams default_dvl_params() {
  DvlParams p;
  p.scale = 0.9998;
  p.misalignment = {-0.1 * kDeg, -0.2 * kDeg, -0.5 * kDeg};
  return p;
}

void SensorErrorModel::validate() const {
  if (gyro_noise_density < 0.0 || accel_noise_density < 0.0 || dvl_noise_sigma < 0.0) {
    throw Error(ErrorCode::InvalidConfig, "noise parameters must be non-negative");
  }
}

SensorErrorModel default_sensor_errors(std::uint64_t seed) {
  SensorErrorModel m;
  m.gyro_bias = Vec3::Constant(0.01 * kDegPerHour);
  m.gyro_noise_density = 0.1 * kDegPerHour;
  m.accel_bias = Vec3::Constant(50.0 * kMicroG);
  m.accel_noise_density = 10.0 * kMicroG;
  m.dvl_noise_sigma = 0.02;
  m.seed = seed;
  return m;
}

// ---------------------------------------------------------------------------

namespace {

struct Profile {
  double value;
  double rate;
};

// 6s^5 - 15s^4 + 10s^3: zero slope and curvature at both ends.
Profile smootherstep(double s, double duration) {
  const double v = s * s * s * (s * (6.0 * s - 15.0) + 10.0);
  const double d = 30.0 * s * s * (1.0 - s) * (1.0 - s);
  return {v, d / duration};
}

Profile bump(double s, double duration) {
  const double sp = std::sin(kPi * s);
  return {sp * sp, kPi * std::sin(2.0 * kPi * s) / duration};
}

double ramp_length(const MotionPrimitive& p) {
  return p.ramp > 0.0 ? p.ramp : p.end - p.start - p.dwell;
}

}  // namespace

PlanKinematics::PlanKinematics(MotionPlan plan, const EulerYZX& init_attitude)
    : plan_(std::move(plan)), init_(init_attitude) {
  plan_.validate();
  double speed = 0.0, roll = init_.roll, yaw = init_.yaw;
  for (const auto& seg : plan_.segments) {
    starts_.push_back({speed, roll, yaw});
    if (seg.kind == MotionKind::Static && speed != 0.0) {
      throw Error(ErrorCode::InvalidPlan, "static segment entered with non-zero speed");
    }
    if (seg.kind == MotionKind::LevelAccelerate) speed = seg.speed_to;
    if (seg.kind == MotionKind::SquareLegWithTiltedTurn) yaw += seg.turns * seg.turn_angle;
  }
}

PlanKinematics::Sample PlanKinematics::at(double t) const {
  std::size_t idx = 0;
  while (idx + 1 < plan_.segments.size() && t >= plan_.segments[idx].end) ++idx;
  const auto& seg = plan_.segments[idx];
  const auto& st = starts_[idx];
  const double tau = std::clamp(t - seg.start, 0.0, seg.end - seg.start);

  double u = st.speed, u_dot = 0.0;
  double w = 0.0, w_dot = 0.0;
  double roll = st.roll, roll_dot = 0.0;
  double yaw = st.yaw, yaw_dot = 0.0;
  double pitch = init_.pitch, pitch_dot = 0.0;

  if (seg.constant_attitude()) {
    const double len = ramp_length(seg);
    const double raw = (tau - seg.dwell) / len;
    const double s = std::clamp(raw, 0.0, 1.0);
    const bool active = raw > 0.0 && raw < 1.0;
    const Profile step = smootherstep(s, len);
    const Profile b = bump(s, len);
    const double target = seg.kind == MotionKind::LevelAccelerate ? seg.speed_to : st.speed;
    u = st.speed + (target - st.speed) * step.value + seg.surge * b.value;
    w = seg.vertical_peak * b.value;
    if (active) {
      u_dot = (target - st.speed) * step.rate + seg.surge * b.rate;
      w_dot = seg.vertical_peak * b.rate;
    }
  } else if (seg.kind == MotionKind::SquareLegWithTiltedTurn) {
    const double turn_len = seg.turn_angle / seg.turn_rate;
    const double leg = (seg.end - seg.start - seg.turns * turn_len) / seg.turns;
    // (turn, leg) pairs; alternate turns pitch the nose up and down so the
    // gravity direction sweeps out of the roll plane.
    double cursor = 0.0;
    for (int i = 0; i < seg.turns; ++i) {
      if (tau < cursor + turn_len) {
        const double s = (tau - cursor) / turn_len;
        const Profile h = smootherstep(s, turn_len);
        const Profile b = bump(s, turn_len);
        const double sign = i % 2 == 0 ? 1.0 : -1.0;
        yaw = st.yaw + seg.turn_angle * (i + h.value);
        yaw_dot = seg.turn_angle * h.rate;
        roll = st.roll + seg.bank * b.value;
        roll_dot = seg.bank * b.rate;
        pitch = init_.pitch + sign * seg.turn_pitch * b.value;
        pitch_dot = sign * seg.turn_pitch * b.rate;
        break;
      }
      yaw = st.yaw + seg.turn_angle * (i + 1);
      cursor += turn_len + leg;
      if (tau < cursor) break;
    }
  }

  Sample out;
  out.euler = {roll, pitch, yaw};
  const double cr = std::cos(roll), sr = std::sin(roll);
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  // omega = roll_dot e_x + pitch_dot R_x e_z + yaw_dot R_x R_z e_y
  const Vec3 rz_ey(sp, cp, 0.0);
  const Vec3 rx_rz_ey(rz_ey.x(), cr * rz_ey.y() + sr * rz_ey.z(), -sr * rz_ey.y() + cr * rz_ey.z());
  const Vec3 rx_ez(0.0, sr, cr);
  out.omega_nb_b = Vec3(roll_dot, 0.0, 0.0) + pitch_dot * rx_ez + yaw_dot * rx_rz_ey;

  // Forward axis in N-U-E is the first row of C_n^b.
  const Vec3 fwd(cp * cy, sp, -cp * sy);
  const Vec3 fwd_dot(-sp * cy * pitch_dot - cp * sy * yaw_dot, cp * pitch_dot,
                     sp * sy * pitch_dot - cp * cy * yaw_dot);
  const Vec3 up = Vec3::UnitY();
  out.v_n = u * fwd + w * up;
  out.v_dot_n = u_dot * fwd + u * fwd_dot + w_dot * up;
  return out;
}

TruthSeries synthesize_truth(const MotionPlan& plan, const GeoPosition& origin,
                             const EulerYZX& init_attitude, double rate) {
  if (!(rate > 0.0)) throw Error(ErrorCode::InvalidConfig, "truth rate must be positive");
  const PlanKinematics kin(plan, init_attitude);
  const double t0 = plan.start();
  const auto n = static_cast<long>(std::llround((plan.end() - t0) * rate));
  const double half = 0.5 / rate;

  TruthSeries out;
  out.rate = rate;
  out.ticks.reserve(n + 1);
  out.midpoints.reserve(n);

  auto record = [&](double t, const Vec3& p) {
    const auto s = kin.at(t);
    TruthRecord r;
    r.nav.time = t;
    r.nav.c_b_n = att::euler_to_dcm(s.euler).transpose();
    r.nav.v_n = s.v_n;
    r.nav.pos = GeoPosition::from_vector(p);
    r.omega_nb_b = s.omega_nb_b;
    r.v_dot_n = s.v_dot_n;
    return r;
  };
  auto p_dot = [&](double t, const Vec3& p) {
    return geo::curvature_matrix(GeoPosition::from_vector(p)) * kin.at(t).v_n;
  };

  // RK4 on the position ODE with half-tick steps; even steps are ticks.
  Vec3 p = origin.as_vector();
  for (long h = 0; h <= 2 * n; ++h) {
    const double t = t0 + h * half;
    if (h % 2 == 0) {
      out.ticks.push_back(record(t, p));
    } else {
      out.midpoints.push_back(record(t, p));
    }
    if (h == 2 * n) break;
    const Vec3 k1 = p_dot(t, p);
    const Vec3 k2 = p_dot(t + 0.5 * half, p + 0.5 * half * k1);
    const Vec3 k3 = p_dot(t + 0.5 * half, p + 0.5 * half * k2);
    const Vec3 k4 = p_dot(t + half, p + half * k3);
    p += half / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double to_unit(std::uint64_t bits) {
  // (0, 1], never zero so log() is finite.
  return (static_cast<double>(bits >> 11) + 1.0) * (1.0 / 9007199254740992.0);
}

enum Stream : std::uint64_t { kGyro = 0, kAccel = 3, kDvl = 6 };

}  // namespace

double CounterGaussian::operator()(std::uint64_t counter) const {
  const std::uint64_t key = splitmix64(seed_ ^ splitmix64(stream_ + 0x5851F42D4C957F2DULL));
  const double u1 = to_unit(splitmix64(key ^ (2 * counter)));
  const double u2 = to_unit(splitmix64(key ^ (2 * counter + 1)));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

std::vector<ins::ImuSample> gen_imu(const TruthSeries& truth, const SensorErrorModel& errors,
                                    double rate) {
  errors.validate();
  const double ratio = truth.rate / rate;
  const auto stride = static_cast<long>(std::llround(ratio));
  if (stride < 1 || std::abs(ratio - stride) > 1e-9) {
    throw Error(ErrorCode::InvalidConfig, "IMU rate must divide the truth tick rate");
  }
  const auto n_ticks = static_cast<long>(truth.ticks.size());
  const long n = (n_ticks - 1) / stride + 1;
  const double gyro_sigma = errors.gyro_noise_density * std::sqrt(rate);
  const double accel_sigma = errors.accel_noise_density * std::sqrt(rate);
  CounterGaussian gyro_noise[3] = {{errors.seed, kGyro}, {errors.seed, kGyro + 1}, {errors.seed, kGyro + 2}};
  CounterGaussian accel_noise[3] = {
      {errors.seed, kAccel}, {errors.seed, kAccel + 1}, {errors.seed, kAccel + 2}};

  std::vector<ins::ImuSample> out;
  out.reserve(n);
  for (long k = 0; k < n; ++k) {
    // Midpoint of [t_k, t_k + stride ticks) measured in half ticks.
    const long half_index = 2 * k * stride + stride;
    const TruthRecord* r = nullptr;
    if (half_index / 2 >= n_ticks || (half_index % 2 == 1 && half_index / 2 >= n_ticks - 1)) {
      r = &truth.ticks.back();  // final sample has no following interval
    } else if (half_index % 2 == 0) {
      r = &truth.ticks[half_index / 2];
    } else {
      r = &truth.midpoints[half_index / 2];
    }
    const auto ideal = ins::invert_dynamics(r->nav.c_b_n, r->omega_nb_b, r->nav.v_n, r->v_dot_n,
                                            r->nav.pos);
    ins::ImuSample s;
    s.time = truth.ticks[k * stride].nav.time;
    s.gyro = ideal.gyro + errors.gyro_bias;
    s.accel = ideal.accel + errors.accel_bias;
    for (int a = 0; a < 3; ++a) {
      if (gyro_sigma > 0.0) s.gyro(a) += gyro_sigma * gyro_noise[a](static_cast<std::uint64_t>(k));
      if (accel_sigma > 0.0) s.accel(a) += accel_sigma * accel_noise[a](static_cast<std::uint64_t>(k));
    }
    out.push_back(s);
  }
  return out;
}

std::vector<DvlSample> gen_dvl(const TruthSeries& truth, const DvlParams& params,
                               const SensorErrorModel& errors, double rate) {
  errors.validate();
  if (!(rate > 0.0) || rate > truth.rate + 1e-9) {
    throw Error(ErrorCode::InvalidConfig, "DVL rate must be positive and not exceed the truth rate");
  }
  if (!(params.scale > 0.0)) throw Error(ErrorCode::InvalidConfig, "DVL scale must be positive");
  const Dcm c_b_d = params.c_b_d();
  CounterGaussian noise[3] = {{errors.seed, kDvl}, {errors.seed, kDvl + 1}, {errors.seed, kDvl + 2}};
  const double t0 = truth.ticks.front().nav.time;
  const double t1 = truth.ticks.back().nav.time;
  const auto n = static_cast<long>(std::floor((t1 - t0) * rate + 1e-9)) + 1;

  std::vector<DvlSample> out;
  out.reserve(n);
  for (long k = 0; k < n; ++k) {
    const double t = t0 + k / rate;
    const auto idx = static_cast<std::size_t>(std::llround((t - t0) * truth.rate));
    const auto& r = truth.ticks[std::min(idx, truth.ticks.size() - 1)];
    DvlSample s;
    s.time = r.nav.time;
    s.velocity = params.scale * c_b_d * r.nav.c_b_n.transpose() * r.nav.v_n;
    if (errors.dvl_noise_sigma > 0.0) {
      for (int a = 0; a < 3; ++a) {
        s.velocity(a) += errors.dvl_noise_sigma * noise[a](static_cast<std::uint64_t>(k));
      }
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace dvlnav::sim
