#include "dvlnav/iodvlc.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dvlnav/error.hpp"
#include "dvlnav/geo.hpp"

namespace dvlnav::iodvlc {

namespace {

constexpr double kTimeEps = 1e-9;

std::string span_text(double a, double b) {
  return "[" + std::to_string(a) + ", " + std::to_string(b) + "]";
}

double nominal_step(std::span<const double> times) {
  std::vector<double> d;
  for (std::size_t i = 1; i < times.size() && d.size() < 64; ++i) d.push_back(times[i] - times[i - 1]);
  if (d.empty()) return 0.0;
  std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
  return d[d.size() / 2];
}

// Checks that [a, b] is covered with no holes larger than 1.5 nominal steps.
void require_coverage(std::span<const double> times, double a, double b, const char* what) {
  if (times.size() < 2 || times.front() > a + kTimeEps || times.back() < b - kTimeEps) {
    throw Error(ErrorCode::StreamGap, std::string(what) + " stream does not cover " + span_text(a, b));
  }
  const double step = nominal_step(times);
  const auto first = std::upper_bound(times.begin(), times.end(), a + kTimeEps) - times.begin();
  for (auto i = std::max<std::ptrdiff_t>(first, 1); i < static_cast<std::ptrdiff_t>(times.size()); ++i) {
    if (times[i - 1] > b) break;
    if (times[i] - times[i - 1] > 1.5 * step) {
      throw Error(ErrorCode::StreamGap, std::string(what) + " samples missing near t=" +
                                            std::to_string(times[i - 1]));
    }
  }
}

std::vector<double> imu_times(std::span<const ins::ImuSample> imu) {
  std::vector<double> t(imu.size());
  for (std::size_t i = 0; i < imu.size(); ++i) t[i] = imu[i].time;
  return t;
}

std::vector<double> dvl_times(std::span<const sim::DvlSample> dvl) {
  std::vector<double> t(dvl.size());
  for (std::size_t i = 0; i < dvl.size(); ++i) t[i] = dvl[i].time;
  return t;
}

double interval(std::span<const ins::ImuSample> imu, std::size_t i, double fallback) {
  return i + 1 < imu.size() ? imu[i + 1].time - imu[i].time : fallback;
}

std::size_t lower_index(std::span<const double> times, double t) {
  return static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), t - kTimeEps) -
                                  times.begin());
}

// Polynomial least squares in tau = t - t0; returns coefficients c0 + c1 tau + ...
Eigen::VectorXd poly_fit(const std::vector<double>& tau, const std::vector<double>& value, int degree) {
  const auto n = static_cast<Eigen::Index>(tau.size());
  const int terms = std::min<int>(degree + 1, static_cast<int>(n));
  Eigen::MatrixXd a(n, terms);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double p = 1.0;
    for (int j = 0; j < terms; ++j, p *= tau[i]) a(i, j) = p;
    b(i) = value[i];
  }
  Eigen::VectorXd c = Eigen::VectorXd::Zero(degree + 1);
  c.head(terms) = a.colPivHouseholderQr().solve(b);
  return c;
}

// Value and slope at t0 of per-axis polynomial fits.
struct VecFit {
  Vec3 value = Vec3::Zero();
  Vec3 slope = Vec3::Zero();
};

VecFit fit_vectors(const std::vector<double>& tau, const std::vector<Vec3>& v, int degree) {
  VecFit out;
  std::vector<double> axis(v.size());
  for (int a = 0; a < 3; ++a) {
    for (std::size_t i = 0; i < v.size(); ++i) axis[i] = v[i](a);
    const Eigen::VectorXd c = poly_fit(tau, axis, degree);
    out.value(a) = c(0);
    out.slope(a) = degree >= 1 ? c(1) : 0.0;
  }
  return out;
}

Vec3 dvl_at(std::span<const sim::DvlSample> dvl, std::span<const double> times, double t) {
  auto j = lower_index(times, t);
  if (j >= dvl.size()) return dvl.back().velocity;
  if (std::abs(times[j] - t) <= kTimeEps || j == 0) return dvl[j].velocity;
  const double w = (t - times[j - 1]) / (times[j] - times[j - 1]);
  return (1.0 - w) * dvl[j - 1].velocity + w * dvl[j].velocity;
}

// Running integral of a piecewise-constant IMU quantity: value at any time.
class PiecewiseIntegral {
 public:
  PiecewiseIntegral(std::vector<double> knots, std::vector<Vec3> values, std::vector<Vec3> rates)
      : knots_(std::move(knots)), values_(std::move(values)), rates_(std::move(rates)) {}
  Vec3 at(double t) const {
    if (t <= knots_.front()) return Vec3::Zero();
    auto j = static_cast<std::size_t>(std::upper_bound(knots_.begin(), knots_.end(), t + kTimeEps) -
                                      knots_.begin());
    j = j == 0 ? 0 : j - 1;
    if (std::abs(knots_[j] - t) <= kTimeEps) return values_[j];
    return values_[j] + rates_[j] * (t - knots_[j]);
  }

 private:
  std::vector<double> knots_;
  std::vector<Vec3> values_;
  std::vector<Vec3> rates_;  // integrand over [knot_j, knot_{j+1})
};

void check_segment(const Segment& s, double min_length) {
  if (!(s.end > s.start)) throw Error(ErrorCode::InvalidConfig, "segment end must follow start");
  if (s.end - s.start < min_length) {
    throw Error(ErrorCode::SegmentTooShort,
                "segment " + span_text(s.start, s.end) + " is shorter than " + std::to_string(min_length) + " s");
  }
}

// Local navigation geometry seen from a body frame that does not rotate
// relative to the navigation frame.
struct BodyGeometry {
  Vec3 up, north, east;
  Vec3 earth_rate;  // omega_ie in body axes
  double lat = 0.0;
  geo::Radii radii;
  double gravity = 0.0;
  double dg_dlat = 0.0;

  Vec3 transport(const Vec3& u) const {
    const double vn = u.dot(north), ve = u.dot(east);
    return ve / radii.transverse * north + ve * std::tan(lat) / radii.transverse * up -
           vn / radii.meridian * east;
  }
};

BodyGeometry body_geometry(const Vec3& gyro_ref, const Vec3& f_ref, const Vec3& u_ref,
                           const Vec3& u_dot_ref) {
  BodyGeometry g;
  g.earth_rate = gyro_ref;
  g.up = f_ref.normalized();
  for (int it = 0; it < 4; ++it) {
    const double s = std::clamp(g.earth_rate.normalized().dot(g.up), -1.0, 1.0);
    g.lat = std::asin(s);
    const Vec3 horiz = g.earth_rate - g.earth_rate.dot(g.up) * g.up;
    g.north = horiz.norm() > 0.0 ? horiz.normalized() : Vec3::UnitX();
    g.east = g.north.cross(g.up);
    g.radii = geo::radii_of_curvature(g.lat);
    g.earth_rate = gyro_ref - g.transport(u_ref);
    const Vec3 w = 2.0 * g.earth_rate + g.transport(u_ref);
    const Vec3 grav = u_dot_ref - f_ref + w.cross(u_ref);
    g.up = -grav.normalized();
    g.gravity = grav.norm();
  }
  g.dg_dlat = geo::gravity_lat_derivative({0.0, g.lat, 0.0});
  return g;
}

BetaGammaSeries accumulate_literal(std::span<const ins::ImuSample> imu,
                                   std::span<const sim::DvlSample> dvl, const Segment& seg,
                                   const ins::ImuBiases& biases, const AccumulateOptions& opt,
                                   bool rate_form) {
  const auto ti = imu_times(imu);
  const auto td = dvl_times(dvl);
  const double step = nominal_step(ti);

  // f(t_s) from a linear fit over the first accel_fit_window seconds.
  std::vector<double> tau;
  std::vector<Vec3> f;
  for (auto i = lower_index(ti, seg.start); i < imu.size() && ti[i] < seg.start + opt.accel_fit_window - kTimeEps; ++i) {
    tau.push_back(ti[i] + 0.5 * interval(imu, i, step) - seg.start);
    f.push_back(imu[i].accel - biases.accel);
  }
  const VecFit f_fit = fit_vectors(tau, f, 1);

  tau.clear();
  std::vector<Vec3> y;
  for (auto j = lower_index(td, seg.start); j < dvl.size() && td[j] <= seg.start + opt.dvl_fit_window + kTimeEps; ++j) {
    tau.push_back(td[j] - seg.start);
    y.push_back(dvl[j].velocity);
  }
  const VecFit y_fit = fit_vectors(tau, y, 2);

  std::vector<double> knots;
  std::vector<Vec3> values, rates;
  Vec3 acc = Vec3::Zero();
  for (auto i = lower_index(ti, seg.start); i < imu.size() && ti[i] < seg.end + kTimeEps; ++i) {
    const double dt = interval(imu, i, step);
    Vec3 rate;
    if (rate_form) {
      // Specific-force rate by differencing neighbouring samples.
      const std::size_t a = i == 0 ? 0 : i - 1, b = std::min(i + 1, imu.size() - 1);
      rate = (imu[b].accel - imu[a].accel) / (imu[b].time - imu[a].time) - f_fit.slope;
    } else {
      rate = imu[i].accel - biases.accel - f_fit.value;
    }
    knots.push_back(ti[i]);
    values.push_back(acc);
    rates.push_back(rate);
    acc += rate * dt;
  }
  const PiecewiseIntegral beta(std::move(knots), std::move(values), std::move(rates));

  BetaGammaSeries out;
  for (auto j = lower_index(td, seg.start); j < dvl.size() && td[j] <= seg.end + kTimeEps; ++j) {
    const double t = td[j] - seg.start;
    BetaGammaRecord r;
    r.time = td[j];
    r.segment_id = seg.id;
    r.beta = beta.at(td[j]);
    r.gamma = dvl[j].velocity - y_fit.value - y_fit.slope * t;
    out.push_back(r);
  }
  return out;
}

BetaGammaSeries accumulate_referenced(std::span<const ins::ImuSample> imu,
                                      std::span<const sim::DvlSample> dvl, const Segment& seg,
                                      const ins::ImuBiases& biases, const AccumulateOptions& opt) {
  const ReferenceWindow ref = *opt.reference;
  if (!(ref.end > ref.start) || ref.end > seg.start + kTimeEps) {
    throw Error(ErrorCode::InvalidConfig, "reference window " + span_text(ref.start, ref.end) +
                                              " must precede segment " + span_text(seg.start, seg.end));
  }
  const auto ti = imu_times(imu);
  const auto td = dvl_times(dvl);
  require_coverage(ti, ref.start, seg.end, "IMU");
  require_coverage(td, ref.start, seg.end, "DVL");
  const double step = nominal_step(ti);
  const double k = opt.scale_guess;
  const Dcm& c_d_b = opt.c_d_b_guess;

  Vec3 f_ref = Vec3::Zero(), w_ref = Vec3::Zero();
  int n_ref = 0;
  for (auto i = lower_index(ti, ref.start); i < imu.size() && ti[i] < ref.end - kTimeEps; ++i, ++n_ref) {
    f_ref += imu[i].accel - biases.accel;
    w_ref += imu[i].gyro - biases.gyro;
  }
  if (n_ref == 0) throw Error(ErrorCode::StreamGap, "no IMU samples in the reference window");
  f_ref /= n_ref;
  w_ref /= n_ref;

  std::vector<double> tau;
  std::vector<Vec3> y;
  for (auto j = lower_index(td, ref.start); j < dvl.size() && td[j] <= ref.end + kTimeEps; ++j) {
    tau.push_back(td[j] - ref.end);
    y.push_back(dvl[j].velocity);
  }
  const VecFit y_ref = fit_vectors(tau, y, 1);
  const Vec3 u_ref = c_d_b * y_ref.value / k;
  const Vec3 u_dot_ref = c_d_b * y_ref.slope / k;
  const BodyGeometry geo = body_geometry(w_ref, f_ref, u_ref, u_dot_ref);
  const Vec3 coriolis_ref = (2.0 * geo.earth_rate + geo.transport(u_ref)).cross(u_ref);

  // Velocity-level relation integrated from the end of the reference window.
  std::vector<double> knots;
  std::vector<Vec3> values, rates;
  Vec3 acc = Vec3::Zero();
  double dh = 0.0, dlat = 0.0;
  for (auto i = lower_index(ti, ref.end); i < imu.size() && ti[i] < seg.end + kTimeEps; ++i) {
    const double dt = interval(imu, i, step);
    const Vec3 u = c_d_b * dvl_at(dvl, td, ti[i] + 0.5 * dt) / k;
    const double vu = u.dot(geo.up), vn = u.dot(geo.north);
    const double dh_mid = dh + 0.5 * dt * vu;
    const double dlat_mid = dlat + 0.5 * dt * vn / geo.radii.meridian;
    const double dg = -geo::kWgs84.free_air_gradient * dh_mid + geo.dg_dlat * dlat_mid;
    const Vec3 coriolis = (2.0 * geo.earth_rate + geo.transport(u)).cross(u);
    const Vec3 rate = (imu[i].accel - biases.accel - f_ref) - (coriolis - coriolis_ref) - dg * geo.up;
    knots.push_back(ti[i]);
    values.push_back(acc);
    rates.push_back(rate);
    acc += rate * dt;
    dh += dt * vu;
    dlat += dt * vn / geo.radii.meridian;
  }
  const PiecewiseIntegral beta(std::move(knots), std::move(values), std::move(rates));
  auto gamma_at = [&](std::size_t j) { return Vec3(dvl[j].velocity - y_ref.value - y_ref.slope * (td[j] - ref.end)); };

  // Anchor at the segment start using its quiet lead-in; a segment that
  // follows the reference directly borrows the whole reference window.
  const Dcm kc_b_d = k * c_d_b.transpose();
  const double anchor_from = seg.start - ref.end < opt.anchor_window ? ref.start : seg.start;
  const double anchor_to = std::min(seg.start + opt.anchor_window, seg.end);
  Vec3 offset = Vec3::Zero();
  int n_anchor = 0;
  for (auto j = lower_index(td, anchor_from); j < dvl.size() && td[j] <= anchor_to + kTimeEps; ++j, ++n_anchor) {
    offset += gamma_at(j) - kc_b_d * beta.at(td[j]);
  }
  offset /= std::max(n_anchor, 1);
  const Vec3 beta0 = beta.at(seg.start);
  const Vec3 gamma0 = offset + kc_b_d * beta0;

  BetaGammaSeries out;
  for (auto j = lower_index(td, seg.start); j < dvl.size() && td[j] <= seg.end + kTimeEps; ++j) {
    BetaGammaRecord r;
    r.time = td[j];
    r.segment_id = seg.id;
    r.beta = beta.at(td[j]) - beta0;
    r.gamma = gamma_at(j) - gamma0;
    out.push_back(r);
  }
  return out;
}

double median(std::vector<double> v) {
  const auto n = v.size();
  std::nth_element(v.begin(), v.begin() + n / 2, v.end());
  const double hi = v[n / 2];
  if (n % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + n / 2));
}

}  // namespace

BetaGammaSeries accumulate(std::span<const ins::ImuSample> imu, std::span<const sim::DvlSample> dvl,
                           const Segment& segment, const ins::ImuBiases& biases,
                           const AccumulateOptions& opt) {
  check_segment(segment, opt.min_length);
  if (opt.reference) return accumulate_referenced(imu, dvl, segment, biases, opt);
  require_coverage(imu_times(imu), segment.start, segment.end, "IMU");
  require_coverage(dvl_times(dvl), segment.start, segment.end, "DVL");
  return accumulate_literal(imu, dvl, segment, biases, opt, false);
}

BetaGammaSeries accumulate_rate_form(std::span<const ins::ImuSample> imu,
                                     std::span<const sim::DvlSample> dvl, const Segment& segment) {
  AccumulateOptions opt;
  check_segment(segment, opt.min_length);
  require_coverage(imu_times(imu), segment.start, segment.end, "IMU");
  require_coverage(dvl_times(dvl), segment.start, segment.end, "DVL");
  return accumulate_literal(imu, dvl, segment, {}, opt, true);
}

ScaleEstimate estimate_scale(const BetaGammaSeries& series, double beta_floor) {
  ScaleEstimate out;
  for (const auto& r : series) {
    const double b = r.beta.norm();
    if (b > beta_floor) out.ratios.push_back(r.gamma.norm() / b);
  }
  if (out.ratios.size() < kMinScaleSamples) {
    throw Error(ErrorCode::InsufficientExcitation,
                "only " + std::to_string(out.ratios.size()) + " samples exceed the beta floor");
  }
  out.scale = median(out.ratios);
  return out;
}

double refine_scale(const BetaGammaSeries& series, const Dcm& c_d_b) {
  double num = 0.0, den = 0.0;
  for (const auto& r : series) {
    num += r.beta.dot(c_d_b * r.gamma);
    den += r.beta.squaredNorm();
  }
  if (!(den > 0.0)) throw Error(ErrorCode::InsufficientExcitation, "beta is identically zero");
  return num / den;
}

double rms_residual(const BetaGammaSeries& series, double scale, const Dcm& c_d_b) {
  if (series.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : series) s += (scale * r.beta - c_d_b * r.gamma).squaredNorm();
  return std::sqrt(s / static_cast<double>(series.size()));
}

DvlCalibration estimate_misalignment(const BetaGammaSeries& series, double scale,
                                     double rank_tolerance) {
  if (!(scale > 0.0)) throw Error(ErrorCode::InvalidConfig, "scale must be positive");
  Mat3 profile = Mat3::Zero();
  for (const auto& r : series) profile += scale * r.beta * r.gamma.transpose();
  const auto w = att::wahba_from_profile(profile, rank_tolerance);
  DvlCalibration out;
  out.scale_estimate = scale;
  out.scale_median = scale;
  out.misalignment_estimate = w.rotation;
  out.free_axis = w.free_axis;
  out.singular_values = w.singular_values;
  out.residual = rms_residual(series, scale, w.rotation);
  return out;
}

CalibrateResult calibrate(std::span<const ins::ImuSample> imu, std::span<const sim::DvlSample> dvl,
                          std::span<const CalibrationInput> segments, const AccumulateOptions& base,
                          int iterations) {
  if (segments.empty()) throw Error(ErrorCode::NoTypeISegments, "no constant-attitude segments to calibrate on");
  AccumulateOptions opt = base;
  CalibrateResult out;
  for (int it = 0; it < std::max(iterations, 1); ++it) {
    out.series.clear();
    for (const auto& s : segments) {
      opt.reference = s.reference;
      const auto part = accumulate(imu, dvl, s.segment, {}, opt);
      out.series.insert(out.series.end(), part.begin(), part.end());
    }
    const auto scale = estimate_scale(out.series);
    out.calibration = estimate_misalignment(out.series, scale.scale);
    out.calibration.scale_samples = scale.ratios;
    const double k = refine_scale(out.series, out.calibration.misalignment_estimate);
    out.calibration.scale_estimate = k;
    out.calibration.residual = rms_residual(out.series, k, out.calibration.misalignment_estimate);
    const double dk = std::abs(k - opt.scale_guess);
    const double drot = (out.calibration.misalignment_estimate - opt.c_d_b_guess).cwiseAbs().maxCoeff();
    opt.scale_guess = k;
    opt.c_d_b_guess = out.calibration.misalignment_estimate;
    if (it > 0 && dk < 1e-14 && drot < 1e-14) break;
  }
  return out;
}

std::vector<HistoryPoint> estimate_history(const BetaGammaSeries& series, double step, double beta_floor) {
  std::vector<HistoryPoint> out;
  if (series.empty()) return out;
  if (!(step > 0.0)) throw Error(ErrorCode::InvalidConfig, "history step must be positive");
  std::vector<const BetaGammaRecord*> sorted;
  for (const auto& r : series) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->time < b->time; });

  std::vector<double> ratios;
  Mat3 profile = Mat3::Zero();
  double beta_sq = 0.0;
  std::size_t i = 0;
  const double t0 = sorted.front()->time, t1 = sorted.back()->time;
  const auto n = static_cast<long>(std::floor((t1 - t0) / step + kTimeEps));
  for (long m = 0; m <= n; ++m) {
    const double t = t0 + m * step;
    for (; i < sorted.size() && sorted[i]->time <= t + kTimeEps; ++i) {
      const auto& r = *sorted[i];
      const double b = r.beta.norm();
      if (b > beta_floor) ratios.push_back(r.gamma.norm() / b);
      profile += r.beta * r.gamma.transpose();
      beta_sq += r.beta.squaredNorm();
    }
    HistoryPoint h;
    h.time = t;
    if (!ratios.empty()) h.scale = median(ratios);
    if (profile.cwiseAbs().maxCoeff() > 0.0) {
      const auto w = att::wahba_from_profile(profile, 1e-2);
      h.c_d_b = w.rotation;
      h.free_axis = w.free_axis;
      // sum beta.(C gamma) = trace(C profile^T)
      h.scale_ls = (w.rotation * profile.transpose()).trace() / beta_sq;
    }
    out.push_back(h);
  }
  return out;
}

}  // namespace dvlnav::iodvlc
