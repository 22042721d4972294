#include "dvlnav/ekf.hpp"

#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "dvlnav/attmath.hpp"
#include "dvlnav/error.hpp"

namespace dvlnav::ekf {

const std::array<const char*, kStates> kStateNames = {
    "roll", "pitch", "yaw", "vN",   "vU",   "vE",   "lon",      "lat",       "h",      "bg_x",
    "bg_y", "bg_z",  "ba_x", "ba_y", "ba_z", "k",   "mis_roll", "mis_pitch", "mis_yaw"};

using att::skew;

void EkfConfig::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorCode::InvalidConfig, std::string(what) + " must be positive");
  };
  for (int i = 0; i < 3; ++i) positive(init_attitude_sigma(i), "ekf.init_attitude_sigma");
  positive(init_velocity_sigma, "ekf.init_velocity_sigma");
  positive(init_position_sigma, "ekf.init_position_sigma");
  positive(init_gyro_bias_sigma, "ekf.init_gyro_bias_sigma");
  positive(init_accel_bias_sigma, "ekf.init_accel_bias_sigma");
  positive(init_scale_sigma, "ekf.init_scale_sigma");
  positive(init_misalignment_sigma, "ekf.init_misalignment_sigma");
  positive(gyro_noise_density, "ekf.gyro_noise_density");
  positive(accel_noise_density, "ekf.accel_noise_density");
  positive(gyro_bias_walk, "ekf.gyro_bias_walk");
  positive(accel_bias_walk, "ekf.accel_bias_walk");
  positive(scale_walk, "ekf.scale_walk");
  positive(misalignment_walk, "ekf.misalignment_walk");
  positive(dvl_sigma, "ekf.dvl_sigma");
  positive(initial_scale, "ekf.initial_scale");
  positive(alignment_error_sigma.roll, "ekf.alignment_error_sigma.roll");
  positive(alignment_error_sigma.pitch, "ekf.alignment_error_sigma.pitch");
  positive(alignment_error_sigma.yaw, "ekf.alignment_error_sigma.yaw");
}

EkfState init(const EkfConfig& config, const Dcm& aligned_c_b_n, const geo::GeoPosition& pos,
              double time, const Vec3& v_n) {
  config.validate();
  EkfState s;
  s.nav.c_b_n = aligned_c_b_n;
  s.nav.v_n = v_n;
  s.nav.pos = pos;
  s.nav.time = time;
  s.scale = config.initial_scale;

  const auto r = geo::radii_of_curvature(pos.lat);
  StateVec sd;
  sd.segment<3>(kAtt) = config.init_attitude_sigma;
  sd.segment<3>(kVel).setConstant(config.init_velocity_sigma);
  sd(kPos) = config.init_position_sigma / ((r.transverse + pos.height) * std::cos(pos.lat));
  sd(kPos + 1) = config.init_position_sigma / (r.meridian + pos.height);
  sd(kPos + 2) = config.init_position_sigma;
  sd.segment<3>(kGyroBias).setConstant(config.init_gyro_bias_sigma);
  sd.segment<3>(kAccelBias).setConstant(config.init_accel_bias_sigma);
  sd(kScale) = config.init_scale_sigma;
  sd.segment<3>(kMis).setConstant(config.init_misalignment_sigma);
  s.cov = sd.cwiseAbs2().asDiagonal();
  return s;
}

namespace {

struct RateTerms {
  Mat3 dw_ie_dp = Mat3::Zero();  // d(omega_ie^n)/d(lon, lat, h)
  Mat3 drho_dp = Mat3::Zero();   // d(omega_en^n)/d(lon, lat, h)
  Mat3 drho_dv = Mat3::Zero();
  Mat3 dg_dp = Mat3::Zero();
  Mat3 dpdot_dp = Mat3::Zero();
};

RateTerms rate_terms(const ins::NavState& nav) {
  const auto& p = nav.pos;
  const Vec3& v = nav.v_n;  // N, U, E
  const auto r = geo::radii_of_curvature(p.lat);
  const auto dr = geo::radii_derivative(p.lat);
  const double re = r.transverse + p.height, rn = r.meridian + p.height;
  const double sl = std::sin(p.lat), cl = std::cos(p.lat), tl = sl / cl;
  const double we = geo::kWgs84.earth_rate;

  RateTerms t;
  t.dw_ie_dp.col(1) = Vec3(-we * sl, we * cl, 0.0);

  t.drho_dv(0, 2) = 1.0 / re;
  t.drho_dv(1, 2) = tl / re;
  t.drho_dv(2, 0) = -1.0 / rn;
  t.drho_dp(0, 1) = -v.z() * dr.transverse / (re * re);
  t.drho_dp(1, 1) = v.z() / (cl * cl * re) - v.z() * tl * dr.transverse / (re * re);
  t.drho_dp(2, 1) = v.x() * dr.meridian / (rn * rn);
  t.drho_dp(0, 2) = -v.z() / (re * re);
  t.drho_dp(1, 2) = -v.z() * tl / (re * re);
  t.drho_dp(2, 2) = v.x() / (rn * rn);

  t.dg_dp(1, 1) = -geo::gravity_lat_derivative(p);
  t.dg_dp(1, 2) = geo::kWgs84.free_air_gradient;

  // lon_dot = vE / (re cos L), lat_dot = vN / rn, h_dot = vU.
  t.dpdot_dp(0, 1) = v.z() * (-dr.transverse * cl + re * sl) / (re * re * cl * cl);
  t.dpdot_dp(0, 2) = -v.z() / (re * re * cl);
  t.dpdot_dp(1, 1) = -v.x() * dr.meridian / (rn * rn);
  t.dpdot_dp(1, 2) = -v.x() / (rn * rn);
  return t;
}

bool is_angle(int i) { return i < 3 || i == kPos || i >= kMis; }

StateVec wrap_angles(StateVec e) {
  for (int i = 0; i < kStates; ++i) {
    if (is_angle(i)) e(i) = geo::wrap_pi(e(i));
  }
  return e;
}

Vec3 euler_vec(const Dcm& c) {
  const auto e = att::dcm_to_euler(c);
  return {e.roll, e.pitch, e.yaw};
}

// Euler angles of C(x) for a left-multiplied rotation error x, and their
// sensitivity to x. `transpose` reports the Euler angles of C^T.
Mat3 euler_jacobian(const Dcm& c, bool transpose) {
  constexpr double eps = 1e-7;
  Mat3 j;
  for (int i = 0; i < 3; ++i) {
    const Dcm plus = att::exp_so3(-eps * Vec3::Unit(i)) * c;
    const Dcm minus = att::exp_so3(eps * Vec3::Unit(i)) * c;
    const Vec3 d = euler_vec(transpose ? plus.transpose() : plus) -
                   euler_vec(transpose ? minus.transpose() : minus);
    for (int k = 0; k < 3; ++k) j(k, i) = geo::wrap_pi(d(k)) / (2.0 * eps);
  }
  return j;
}

void symmetrize(Cov& p) { p = 0.5 * (p + p.transpose()).eval(); }

}  // namespace

Cov process_jacobian(const EkfState& s, const ins::ImuSample& sample) {
  const auto& nav = s.nav;
  const Dcm& c = nav.c_b_n;
  const Vec3 w_ie = geo::earth_rate_n(nav.pos.lat);
  const Vec3 w_en = geo::transport_rate(nav.v_n, nav.pos);
  const Vec3 f_n = c * (sample.accel - s.biases.accel);
  const RateTerms t = rate_terms(nav);

  Cov f = Cov::Zero();
  f.block<3, 3>(kAtt, kAtt) = -skew(w_ie + w_en);
  f.block<3, 3>(kAtt, kVel) = t.drho_dv;
  f.block<3, 3>(kAtt, kPos) = t.dw_ie_dp + t.drho_dp;
  f.block<3, 3>(kAtt, kGyroBias) = c;

  const Mat3 v_x = skew(nav.v_n);
  f.block<3, 3>(kVel, kAtt) = skew(f_n);
  f.block<3, 3>(kVel, kVel) = -skew(2.0 * w_ie + w_en) + v_x * t.drho_dv;
  f.block<3, 3>(kVel, kPos) = v_x * (2.0 * t.dw_ie_dp + t.drho_dp) + t.dg_dp;
  f.block<3, 3>(kVel, kAccelBias) = -c;

  f.block<3, 3>(kPos, kVel) = geo::curvature_matrix(nav.pos);
  f.block<3, 3>(kPos, kPos) = t.dpdot_dp;
  return f;
}

Vec3 predicted_measurement(const EkfState& s) {
  return s.scale * (s.c_b_d * (s.nav.c_b_n.transpose() * s.nav.v_n));
}

MeasJacobian measurement_jacobian(const EkfState& s) {
  const Mat3 a = s.c_b_d * s.nav.c_b_n.transpose();
  const Vec3 u = a * s.nav.v_n;
  MeasJacobian h = MeasJacobian::Zero();
  h.block<3, 3>(0, kAtt) = -s.scale * a * skew(s.nav.v_n);
  h.block<3, 3>(0, kVel) = s.scale * a;
  h.col(kScale) = u;
  h.block<3, 3>(0, kMis) = s.scale * skew(u);
  return h;
}

EkfState predict(const EkfState& s, const ins::ImuSample& sample, double dt, const EkfConfig& config) {
  EkfState out = s;
  out.nav = ins::propagate(s.nav, sample, dt, s.biases);

  const Cov phi = Cov::Identity() + process_jacobian(s, sample) * dt;
  StateVec q = StateVec::Zero();
  q.segment<3>(kAtt).setConstant(config.gyro_noise_density * config.gyro_noise_density);
  q.segment<3>(kVel).setConstant(config.accel_noise_density * config.accel_noise_density);
  q.segment<3>(kGyroBias).setConstant(config.gyro_bias_walk * config.gyro_bias_walk);
  q.segment<3>(kAccelBias).setConstant(config.accel_bias_walk * config.accel_bias_walk);
  q(kScale) = config.scale_walk * config.scale_walk;
  q.segment<3>(kMis).setConstant(config.misalignment_walk * config.misalignment_walk);
  out.cov.noalias() = phi * s.cov * phi.transpose();
  out.cov.diagonal() += q * dt;
  symmetrize(out.cov);
  return out;
}

EkfState inject(const EkfState& s, const StateVec& dx) {
  EkfState out = s;
  out.nav.c_b_n = att::exp_so3(-dx.segment<3>(kAtt)) * s.nav.c_b_n;
  out.nav.v_n += dx.segment<3>(kVel);
  out.nav.pos = geo::GeoPosition::from_vector(s.nav.pos.as_vector() + dx.segment<3>(kPos));
  out.nav.pos.lon = geo::wrap_pi(out.nav.pos.lon);
  out.biases.gyro += dx.segment<3>(kGyroBias);
  out.biases.accel += dx.segment<3>(kAccelBias);
  out.scale += dx(kScale);
  out.c_b_d = att::exp_so3(-dx.segment<3>(kMis)) * s.c_b_d;
  return out;
}

EkfState update(const EkfState& s, const sim::DvlSample& meas, const EkfConfig& config,
                UpdateInfo* info, double time_tol, bool hold_dvl_params) {
  if (std::abs(meas.time - s.nav.time) > time_tol) {
    throw Error(ErrorCode::TimebaseMismatch, "DVL sample at " + std::to_string(meas.time) +
                                                 " s does not match filter time " + std::to_string(s.nav.time));
  }
  const Vec3 nu = meas.velocity - predicted_measurement(s);
  MeasJacobian h = measurement_jacobian(s);
  if (hold_dvl_params) {
    h.col(kScale).setZero();
    h.block<3, 3>(0, kMis).setZero();
  }
  const Eigen::Matrix<double, kStates, 3> pht = s.cov * h.transpose();
  const double r = config.dvl_sigma * config.dvl_sigma;
  Mat3 sm = h * pht;
  sm.diagonal().array() += r;
  const Eigen::LLT<Mat3> llt(sm);
  const double nis = nu.dot(llt.solve(nu));
  if (info) {
    info->innovation = nu;
    info->nis = nis;
  }
  if (config.gate > 0.0 && nis > config.gate) {
    throw Error(ErrorCode::InnovationGateExceeded, "NIS " + std::to_string(nis) + " at t = " + std::to_string(meas.time));
  }
  const Eigen::Matrix<double, kStates, 3> k = llt.solve(pht.transpose()).transpose();
  const StateVec dx = k * nu;
  const Cov ikh = Cov::Identity() - k * h;
  EkfState out = inject(s, dx);
  out.cov.noalias() = ikh * s.cov * ikh.transpose();
  out.cov.noalias() += r * k * k.transpose();
  symmetrize(out.cov);
  return out;
}

StateVec error_rate(const EkfState& nominal, const StateVec& dx, const ins::ImuSample& sample) {
  const EkfState truth = inject(nominal, dx);
  const auto rt = ins::nav_rates(truth.nav, sample.gyro - truth.biases.gyro, sample.accel - truth.biases.accel);
  const auto rn = ins::nav_rates(nominal.nav, sample.gyro - nominal.biases.gyro,
                                 sample.accel - nominal.biases.accel);
  // E = C C_hat^T = exp(-phi x); its antisymmetric rate is -phi_dot x to first order.
  const Mat3 e_dot = rt.c_dot * nominal.nav.c_b_n.transpose() + truth.nav.c_b_n * rn.c_dot.transpose();
  StateVec out = StateVec::Zero();
  out.segment<3>(kAtt) = -att::vee(0.5 * (e_dot - e_dot.transpose()));
  out.segment<3>(kVel) = rt.v_dot - rn.v_dot;
  out.segment<3>(kPos) = rt.p_dot - rn.p_dot;
  return out;
}

Vec3 measurement_at(const EkfState& nominal, const StateVec& dx) {
  return predicted_measurement(inject(nominal, dx));
}

namespace {

StateVec fd_steps() {
  StateVec e;
  e.segment<3>(kAtt).setConstant(1e-6);
  e.segment<3>(kVel).setConstant(1e-3);
  e(kPos) = 1e-7;
  e(kPos + 1) = 1e-7;
  e(kPos + 2) = 1.0;
  e.segment<3>(kGyroBias).setConstant(1e-7);
  e.segment<3>(kAccelBias).setConstant(1e-4);
  e(kScale) = 1e-4;
  e.segment<3>(kMis).setConstant(1e-5);
  return e;
}

template <class Analytic, class Fn>
JacobianCheck compare_columns(const Analytic& analytic, Fn&& fn) {
  const StateVec steps = fd_steps();
  JacobianCheck out;
  for (int j = 0; j < kStates; ++j) {
    StateVec dx = StateVec::Zero();
    dx(j) = steps(j);
    const auto plus = fn(dx);
    const auto minus = fn(-dx);
    const auto fd = ((plus - minus) / (2.0 * steps(j))).eval();
    const double scale = std::max(fd.norm(), analytic.col(j).norm());
    if (scale < 1e-15) continue;  // both zero
    const double rel = (fd - analytic.col(j)).norm() / scale;
    if (rel > out.worst_relative) {
      out.worst_relative = rel;
      out.worst_column = j;
    }
  }
  return out;
}

}  // namespace

JacobianCheck check_process_jacobian(const EkfState& s, const ins::ImuSample& sample) {
  const Cov f = process_jacobian(s, sample);
  return compare_columns(f, [&](const StateVec& dx) { return error_rate(s, dx, sample); });
}

JacobianCheck check_measurement_jacobian(const EkfState& s) {
  const MeasJacobian h = measurement_jacobian(s);
  return compare_columns(h, [&](const StateVec& dx) { return measurement_at(s, dx); });
}

StateVec report(const EkfState& s) {
  StateVec x;
  x.segment<3>(kAtt) = euler_vec(s.nav.c_b_n.transpose());
  x.segment<3>(kVel) = s.nav.v_n;
  x.segment<3>(kPos) = s.nav.pos.as_vector();
  x.segment<3>(kGyroBias) = s.biases.gyro;
  x.segment<3>(kAccelBias) = s.biases.accel;
  x(kScale) = s.scale;
  x.segment<3>(kMis) = euler_vec(s.c_b_d);
  return x;
}

StateVec report_sigma(const EkfState& s) {
  StateVec sd = s.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  const Mat3 ja = euler_jacobian(s.nav.c_b_n, true);
  const Mat3 jm = euler_jacobian(s.c_b_d, false);
  sd.segment<3>(kAtt) = (ja * s.cov.block<3, 3>(kAtt, kAtt) * ja.transpose()).diagonal().cwiseMax(0.0).cwiseSqrt();
  sd.segment<3>(kMis) = (jm * s.cov.block<3, 3>(kMis, kMis) * jm.transpose()).diagonal().cwiseMax(0.0).cwiseSqrt();
  return sd;
}

std::optional<StateVec> report_error(const EkfState& s, const TruthReference& ref) {
  if (!ref.truth || ref.truth->ticks.empty()) return std::nullopt;
  const auto& ticks = ref.truth->ticks;
  const double t0 = ticks.front().nav.time;
  const long idx = std::lround((s.nav.time - t0) * ref.truth->rate);
  if (idx < 0 || idx >= static_cast<long>(ticks.size())) return std::nullopt;
  const auto& nav = ticks[static_cast<std::size_t>(idx)].nav;
  if (std::abs(nav.time - s.nav.time) > 0.5 / ref.truth->rate) return std::nullopt;
  EkfState t;
  t.nav = nav;
  t.biases = ref.biases;
  t.scale = ref.dvl.scale;
  t.c_b_d = ref.dvl.c_b_d();
  return wrap_angles(report(t) - report(s));
}

RunResult run(const EkfState& initial, std::span<const ins::ImuSample> imu,
              std::span<const sim::DvlSample> dvl, const EkfConfig& config,
              const std::optional<TruthReference>& truth, const RunOptions& opt) {
  config.validate();
  RunResult out;
  EkfState s = initial;
  if (imu.size() < 2) throw Error(ErrorCode::StreamGap, "IMU stream too short");
  const double nominal_dt = imu[1].time - imu[0].time;
  const double tol = 0.5 * nominal_dt;

  std::size_t i = 0;
  while (i < imu.size() && imu[i].time < s.nav.time - tol) ++i;
  if (i == imu.size()) throw Error(ErrorCode::TimebaseMismatch, "IMU stream ends before the filter start");
  std::size_t j = 0;
  while (j < dvl.size() && dvl[j].time < s.nav.time - tol) ++j;

  double next_record = s.nav.time;
  auto record = [&] {
    if (s.nav.time < next_record - 1e-9) return;
    HistoryRecord h;
    h.time = s.nav.time;
    h.estimate = report(s);
    h.sigma = report_sigma(s);
    if (truth) h.error = report_error(s, *truth);
    out.history.push_back(std::move(h));
    next_record = opt.record_interval > 0.0 ? next_record + opt.record_interval : s.nav.time;
    while (opt.record_interval > 0.0 && next_record <= s.nav.time + 1e-9) next_record += opt.record_interval;
  };
  auto check = [&] {
    if (!opt.check_covariance) return;
    const double scale = std::max(s.cov.cwiseAbs().maxCoeff(), 1e-300);
    out.max_asymmetry = std::max(out.max_asymmetry, (s.cov - s.cov.transpose()).cwiseAbs().maxCoeff() / scale);
    Eigen::SelfAdjointEigenSolver<Cov> eig(s.cov, Eigen::EigenvaluesOnly);
    out.min_eigenvalue = std::min(out.min_eigenvalue, eig.eigenvalues()(0));
  };

  for (;; ++i) {
    record();
    while (j < dvl.size() && dvl[j].time <= s.nav.time + tol) {
      try {
        s = update(s, dvl[j], config, nullptr, tol, dvl[j].time < opt.hold_dvl_params_until);
        ++out.updates;
        check();
      } catch (const Error& e) {
        if (e.code() != ErrorCode::InnovationGateExceeded) throw;
        ++out.rejected;
      }
      ++j;
    }
    if (i + 1 >= imu.size()) break;
    if (std::abs(imu[i].time - s.nav.time) > tol) {
      throw Error(ErrorCode::TimebaseMismatch, "IMU sample at " + std::to_string(imu[i].time) +
                                                   " s does not follow filter time " + std::to_string(s.nav.time));
    }
    const double t_next = imu[i + 1].time;
    s = predict(s, imu[i], t_next - s.nav.time, config);
    s.nav.time = t_next;  // no drift from accumulated dt
    if (++out.predictions % ins::kRenormalizeEvery == 0) {
      s.nav.c_b_n = att::orthonormalize(s.nav.c_b_n);
      s.c_b_d = att::orthonormalize(s.c_b_d);
    }
    check();
  }
  out.final_state = s;
  return out;
}

}  // namespace dvlnav::ekf
