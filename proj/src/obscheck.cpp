#include "dvlnav/obscheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "dvlnav/attmath.hpp"
#include "dvlnav/error.hpp"

namespace dvlnav::obs {

const char* to_string(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::TypeI: return "TypeI";
    case SegmentKind::TypeII: return "TypeII";
    case SegmentKind::Neither: return "Neither";
  }
  return "Unknown";
}

namespace {

constexpr double kTimeEps = 1e-9;

enum class Label { Still, Turn, Other };

struct Block {
  Vec3 gyro = Vec3::Zero();
  Vec3 accel = Vec3::Zero();
  int n = 0;
};

Vec3 axis_median(std::vector<Vec3> v) {
  Vec3 out;
  for (int a = 0; a < 3; ++a) {
    std::vector<double> x(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) x[i] = v[i](a);
    std::nth_element(x.begin(), x.begin() + x.size() / 2, x.end());
    out(a) = x[x.size() / 2];
  }
  return out;
}

// Principal axis of a set of vectors (no centering).
Vec3 principal_axis(const std::vector<Vec3>& v, double* largest = nullptr) {
  Mat3 s = Mat3::Zero();
  for (const auto& x : v) s += x * x.transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> eig(s);
  Vec3 axis = eig.eigenvectors().col(2);
  const Eigen::Index i = [&] {
    Eigen::Index k;
    axis.cwiseAbs().maxCoeff(&k);
    return k;
  }();
  if (axis(i) < 0.0) axis = -axis;
  if (largest) *largest = eig.eigenvalues()(2);
  return axis;
}

// Runs of equal labels as [first, last] block index pairs.
template <class T>
std::vector<std::pair<std::size_t, std::size_t>> runs_of(const std::vector<T>& labels, T value) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < labels.size();) {
    if (labels[i] != value) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < labels.size() && labels[j + 1] == value) ++j;
    out.emplace_back(i, j);
    i = j + 1;
  }
  return out;
}

Vec3 sample_at(std::span<const ins::ImuSample> imu, double t, bool gyro) {
  const auto it = std::lower_bound(imu.begin(), imu.end(), t - kTimeEps,
                                   [](const ins::ImuSample& s, double v) { return s.time < v; });
  auto pick = [&](const ins::ImuSample& s) { return gyro ? s.gyro : s.accel; };
  if (it == imu.end()) return pick(imu.back());
  if (it == imu.begin()) return pick(*it);
  if (std::abs(it->time - t) <= kTimeEps) {
    // Samples hold interval-midpoint values; t sits halfway between two of them.
    if (it - imu.begin() >= 2 && imu.end() - it >= 2) {
      return (9.0 * (pick(*(it - 1)) + pick(*it)) - pick(*(it - 2)) - pick(*(it + 1))) / 16.0;
    }
    return 0.5 * (pick(*(it - 1)) + pick(*it));
  }
  return pick(*(it - 1));
}

}  // namespace

std::vector<Segment> classify_segments(std::span<const ins::ImuSample> imu, const ClassifyOptions& opt) {
  if (imu.size() < 2) return {};
  const double t0 = imu.front().time;
  const double t_end = imu.back().time;
  const auto n_blocks = static_cast<std::size_t>(std::floor((t_end - t0) / opt.block + kTimeEps));
  if (n_blocks < 2) return {};
  std::vector<Block> blocks(n_blocks);
  for (const auto& s : imu) {
    const auto b = static_cast<std::size_t>(std::floor((s.time - t0) / opt.block + kTimeEps));
    if (b >= n_blocks) continue;
    blocks[b].gyro += s.gyro;
    blocks[b].accel += s.accel;
    ++blocks[b].n;
  }
  std::vector<Vec3> gyro_means;
  for (auto& b : blocks) {
    if (b.n == 0) throw Error(ErrorCode::StreamGap, "IMU stream has an empty classification block");
    b.gyro /= b.n;
    b.accel /= b.n;
    gyro_means.push_back(b.gyro);
  }
  // The typical rate is the Earth/transport rate plus any constant bias.
  const Vec3 rest = axis_median(gyro_means);
  std::vector<Label> label(n_blocks);
  std::vector<double> dev(n_blocks);
  for (std::size_t i = 0; i < n_blocks; ++i) {
    dev[i] = (blocks[i].gyro - rest).norm();
    label[i] = dev[i] < opt.still_rate ? Label::Still : dev[i] > opt.turn_rate ? Label::Turn : Label::Other;
  }
  const auto min_still = static_cast<std::size_t>(std::ceil(2.0 * opt.window / opt.block - kTimeEps));
  const auto min_turn = static_cast<std::size_t>(std::ceil(opt.turn_min_duration / opt.block - kTimeEps));
  for (auto [a, b] : runs_of(label, Label::Still)) {
    if (b - a + 1 < min_still) std::fill(label.begin() + a, label.begin() + b + 1, Label::Other);
  }
  for (auto [a, b] : runs_of(label, Label::Turn)) {
    if (b - a + 1 < min_turn) std::fill(label.begin() + a, label.begin() + b + 1, Label::Other);
  }
  auto time_of = [&](std::size_t block) { return t0 + static_cast<double>(block) * opt.block; };

  std::vector<Segment> out;
  for (std::size_t i = 0; i < n_blocks;) {
    std::size_t j = i;
    while (j + 1 < n_blocks && label[j + 1] == label[i]) ++j;
    const double start = time_of(i), end = time_of(j + 1);

    if (label[i] == Label::Turn) {
      Segment s;
      s.kind = SegmentKind::TypeII;
      s.start = start;
      s.end = end;
      Vec3 mean = Vec3::Zero();
      for (std::size_t b = i; b <= j; ++b) {
        s.excitation = std::max(s.excitation, dev[b]);
        mean += blocks[b].gyro - rest;
      }
      s.attitude_variation = mean.norm() * opt.block;
      s.excitation_axis = mean.normalized();
      out.push_back(s);
    } else if (label[i] == Label::Other) {
      Segment s;
      s.start = start;
      s.end = end;
      for (std::size_t b = i; b <= j; ++b) s.excitation = std::max(s.excitation, dev[b]);
      out.push_back(s);
    } else {
      // Constant attitude: split out the bursts of specific-force change.
      std::vector<Vec3> acc;
      Vec3 mean_rate = Vec3::Zero();
      for (std::size_t b = i; b <= j; ++b) {
        acc.push_back(blocks[b].accel);
        mean_rate += blocks[b].gyro;
      }
      mean_rate /= static_cast<double>(j - i + 1);
      const Vec3 quiet = axis_median(acc);
      std::vector<bool> active(j - i + 1);
      for (std::size_t b = i; b <= j; ++b) active[b - i] = (blocks[b].accel - quiet).norm() > opt.force_threshold;
      auto bursts = runs_of(active, true);
      const auto gap = static_cast<std::size_t>(std::llround(opt.merge_gap / opt.block));
      std::vector<std::pair<std::size_t, std::size_t>> merged;
      for (const auto& r : bursts) {
        if (!merged.empty() && r.first - merged.back().second - 1 <= gap) {
          merged.back().second = r.second;
        } else {
          merged.push_back(r);
        }
      }
      auto variation = [&](double a, double b) {
        Vec3 cum = Vec3::Zero();
        double worst = 0.0;
        for (std::size_t k = i; k <= j; ++k) {
          if (time_of(k) < a - kTimeEps || time_of(k + 1) > b + kTimeEps) continue;
          cum += (blocks[k].gyro - mean_rate) * opt.block;
          worst = std::max(worst, cum.norm());
        }
        return worst;
      };
      std::vector<double> starts;
      for (const auto& m : merged) starts.push_back(std::max(start, time_of(i + m.first) - opt.lead));
      if (starts.empty() || starts.front() > start + kTimeEps) {
        Segment s;
        s.kind = SegmentKind::TypeI;
        s.start = start;
        s.end = starts.empty() ? end : starts.front();
        s.attitude_variation = variation(s.start, s.end);
        out.push_back(s);
      }
      for (std::size_t m = 0; m < merged.size(); ++m) {
        Segment s;
        s.kind = SegmentKind::TypeI;
        s.excited = true;
        s.start = starts[m];
        s.end = m + 1 < merged.size() ? starts[m + 1] : end;
        std::vector<Vec3> change;
        for (std::size_t b = i + merged[m].first; b <= i + merged[m].second; ++b) {
          const Vec3 d = blocks[b].accel - quiet;
          s.excitation = std::max(s.excitation, d.norm());
          change.push_back(d);
        }
        s.excitation_axis = principal_axis(change);
        s.attitude_variation = variation(s.start, s.end);
        out.push_back(s);
      }
    }
    i = j + 1;
  }
  return out;
}

Type1Result check_type1(std::span<const Segment> segments, std::span<const sim::DvlSample> dvl,
                        double rank_tolerance, double floor, double lead) {
  std::vector<const Segment*> excited;
  bool any_type1 = false;
  for (const auto& s : segments) {
    if (s.kind != SegmentKind::TypeI) continue;
    any_type1 = true;
    if (s.excited) excited.push_back(&s);
  }
  if (!any_type1) throw Error(ErrorCode::NoTypeISegments, "no constant-attitude segments");

  Type1Result out;
  for (const auto* s : excited) {
    Vec3 base = Vec3::Zero();
    int n_base = 0;
    std::vector<Vec3> y;
    for (const auto& d : dvl) {
      if (d.time < s->start - kTimeEps || d.time > s->end + kTimeEps) continue;
      if (d.time <= s->start + lead + kTimeEps) {
        base += d.velocity;
        ++n_base;
      }
      y.push_back(d.velocity);
    }
    if (n_base == 0 || y.size() < 3) continue;
    base /= n_base;
    for (auto& v : y) v -= base;
    double largest = 0.0;
    const Vec3 axis = principal_axis(y, &largest);
    if (std::sqrt(largest / static_cast<double>(y.size())) < floor) continue;
    out.directions.push_back(axis);
  }
  if (out.directions.empty()) {
    throw Error(ErrorCode::NoExcitation, "no constant-attitude segment shows a velocity change above " +
                                             std::to_string(floor) + " m/s");
  }
  Eigen::MatrixXd d(static_cast<Eigen::Index>(out.directions.size()), 3);
  for (std::size_t i = 0; i < out.directions.size(); ++i) d.row(static_cast<Eigen::Index>(i)) = out.directions[i].transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(d, Eigen::ComputeFullV);
  const Eigen::VectorXd sv = svd.singularValues();
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    out.singular_values(i) = sv(i);
    if (sv(i) > rank_tolerance * sv(0)) ++out.rank;
  }
  if (out.rank == 1) out.free_axis = svd.matrixV().col(0);
  return out;
}

double scatter_min_eigenvalue(std::span<const Vec3> alpha) {
  Mat3 s = Mat3::Zero();
  for (const auto& a : alpha) s += a * a.transpose();
  return Eigen::SelfAdjointEigenSolver<Mat3>(s, Eigen::EigenvaluesOnly).eigenvalues()(0);
}

Type2Result check_type2(std::span<const Segment> segments, std::span<const ins::ImuSample> imu,
                        std::span<const sim::DvlSample> dvl, double scale, const Dcm& c_d_b,
                        const Vec3& gyro_bias, const Type2Options& opt) {
  if (!(scale > 0.0)) throw Error(ErrorCode::InvalidConfig, "scale must be positive");
  if (opt.fit_order < 1 || opt.fit_samples <= opt.fit_order) {
    throw Error(ErrorCode::InvalidConfig, "local fit needs more samples than its order");
  }
  double duration = 0.0;
  for (const auto& s : segments) {
    if (s.kind == SegmentKind::TypeII) duration += s.end - s.start;
  }
  if (duration < opt.min_duration) {
    throw Error(ErrorCode::InsufficientTurning,
                "turning lasts " + std::to_string(duration) + " s, need " + std::to_string(opt.min_duration));
  }
  const int half = opt.fit_samples / 2;
  Type2Result out;
  for (const auto& s : segments) {
    if (s.kind != SegmentKind::TypeII) continue;
    const auto first = static_cast<std::size_t>(
        std::lower_bound(dvl.begin(), dvl.end(), s.start - kTimeEps,
                         [](const sim::DvlSample& d, double v) { return d.time < v; }) - dvl.begin());
    for (std::size_t j = first + half; j + half < dvl.size() && dvl[j + half].time <= s.end + kTimeEps; ++j) {
      // Local polynomial in tau = t - t_j; value and slope at tau = 0.
      const int order = opt.fit_order;
      Eigen::MatrixXd basis(opt.fit_samples, order + 1);
      Eigen::MatrixXd rhs(opt.fit_samples, 3);
      for (int m = -half; m <= half; ++m) {
        const double tau = dvl[j + m].time - dvl[j].time;
        double p = 1.0;
        for (int c = 0; c <= order; ++c, p *= tau) basis(m + half, c) = p;
        rhs.row(m + half) = dvl[j + m].velocity.transpose();
      }
      const Eigen::MatrixXd c = basis.colPivHouseholderQr().solve(rhs);
      const Vec3 y = c.row(0).transpose(), y_dot = c.row(1).transpose();
      const Vec3 w = sample_at(imu, dvl[j].time, true) - gyro_bias;
      const Vec3 f = sample_at(imu, dvl[j].time, false);
      const Vec3 a = (w.cross(c_d_b * y) + c_d_b * y_dot) / scale - f;
      out.times.push_back(dvl[j].time);
      out.alpha.push_back(a);
      out.scatter += a * a.transpose();
    }
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(out.scatter, Eigen::EigenvaluesOnly);
  out.min_eigenvalue = eig.eigenvalues()(0);
  out.trace = out.scatter.trace();
  out.nonsingular = out.min_eigenvalue > opt.conditioning * out.trace / 3.0;
  return out;
}

Vec3 accel_bias_from_quadratic(std::span<const Vec3> alpha, double gravity, const Vec3& initial) {
  if (alpha.size() < 3) throw Error(ErrorCode::InsufficientTurning, "too few alpha samples");
  Vec3 b = initial;
  for (int it = 0; it < 50; ++it) {
    Mat3 jtj = Mat3::Zero();
    Vec3 jtr = Vec3::Zero();
    for (const auto& a : alpha) {
      const Vec3 p = a + b;
      const double r = p.squaredNorm() - gravity * gravity;
      const Vec3 j = 2.0 * p;
      jtj += j * j.transpose();
      jtr += j * r;
    }
    const Vec3 step = jtj.ldlt().solve(-jtr);
    b += step;
    if (step.norm() < 1e-15) break;
  }
  return b;
}

Vec3 accel_bias_from_sphere(std::span<const Vec3> alpha) {
  return -att::sphere_center(alpha).center;
}

ObservabilityReport observability_verdict(const std::optional<Type1Result>& type1,
                                     const std::optional<Type2Result>& type2) {
  ObservabilityReport r;
  if (type1) {
    r.type1_rank = type1->rank;
    r.type1_free_axis = type1->free_axis;
  }
  if (type2) {
    r.type2_min_eigenvalue = type2->min_eigenvalue;
    r.type2_nonsingular = type2->nonsingular;
  }
  auto& e = r.estimable;
  e.dvl_scale = r.type1_rank >= 1;
  if (r.type1_rank >= 2) {
    e.dvl_roll = e.dvl_pitch = e.dvl_yaw = true;
  } else if (r.type1_rank == 1 && r.type1_free_axis) {
    // Only the angle about the excitation direction stays free.
    Eigen::Index k;
    r.type1_free_axis->cwiseAbs().maxCoeff(&k);
    e.dvl_roll = k != 0;
    e.dvl_yaw = k != 1;
    e.dvl_pitch = k != 2;
  }
  e.accel_bias = r.type2_nonsingular;
  e.attitude = e.velocity = e.gyro_bias = r.type2_nonsingular;
  return r;
}

}  // namespace dvlnav::obs
