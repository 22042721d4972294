#include "dvlnav/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "dvlnav/error.hpp"

namespace dvlnav::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// --- config keys ------------------------------------------------------------

enum class Kind { Number, Triple, Integer, Text };

struct Parsed {
  double x = 0.0;
  Vec3 v = Vec3::Zero();
  std::uint64_t i = 0;
  std::string s;
};

struct Key {
  const char* name;
  Kind kind;
  const char* def;
  void (*apply)(ScenarioConfig&, const Parsed&);
};

constexpr double kUg = sim::kMicroG;
constexpr double kDph = sim::kDegPerHour;

// Order here is the order of the canonical text.
const Key kKeys[] = {
    {"scenario.plan", Kind::Text, "3d", [](ScenarioConfig& c, const Parsed& p) { c.plan = p.s; }},
    {"scenario.seed", Kind::Integer, "1",
     [](ScenarioConfig& c, const Parsed& p) {
       c.seed = p.i;
       c.errors.seed = p.i;
     }},
    {"scenario.imu_rate_hz", Kind::Number, "100", [](ScenarioConfig& c, const Parsed& p) { c.imu_rate = p.x; }},
    {"scenario.dvl_rate_hz", Kind::Number, "100", [](ScenarioConfig& c, const Parsed& p) { c.dvl_rate = p.x; }},
    {"origin.lon_deg", Kind::Number, "114", [](ScenarioConfig& c, const Parsed& p) { c.origin.lon = p.x * kDeg; }},
    {"origin.lat_deg", Kind::Number, "30", [](ScenarioConfig& c, const Parsed& p) { c.origin.lat = p.x * kDeg; }},
    {"origin.h_m", Kind::Number, "-100", [](ScenarioConfig& c, const Parsed& p) { c.origin.height = p.x; }},
    {"attitude.roll_deg", Kind::Number, "3", [](ScenarioConfig& c, const Parsed& p) { c.init_attitude.roll = p.x * kDeg; }},
    {"attitude.pitch_deg", Kind::Number, "0", [](ScenarioConfig& c, const Parsed& p) { c.init_attitude.pitch = p.x * kDeg; }},
    {"attitude.yaw_deg", Kind::Number, "10", [](ScenarioConfig& c, const Parsed& p) { c.init_attitude.yaw = p.x * kDeg; }},
    {"sensor.gyro_bias_deg_h", Kind::Triple, "0.01,0.01,0.01",
     [](ScenarioConfig& c, const Parsed& p) { c.errors.gyro_bias = p.v * kDph; }},
    {"sensor.gyro_noise_deg_h_rthz", Kind::Number, "0.1",
     [](ScenarioConfig& c, const Parsed& p) { c.errors.gyro_noise_density = p.x * kDph; }},
    {"sensor.accel_bias_ug", Kind::Triple, "50,50,50",
     [](ScenarioConfig& c, const Parsed& p) { c.errors.accel_bias = p.v * kUg; }},
    {"sensor.accel_noise_ug_rthz", Kind::Number, "10",
     [](ScenarioConfig& c, const Parsed& p) { c.errors.accel_noise_density = p.x * kUg; }},
    {"sensor.dvl_noise_m_s", Kind::Number, "0.02", [](ScenarioConfig& c, const Parsed& p) { c.errors.dvl_noise_sigma = p.x; }},
    {"dvl.scale", Kind::Number, "0.9998", [](ScenarioConfig& c, const Parsed& p) { c.dvl.scale = p.x; }},
    {"dvl.roll_deg", Kind::Number, "-0.1", [](ScenarioConfig& c, const Parsed& p) { c.dvl.misalignment.roll = p.x * kDeg; }},
    {"dvl.pitch_deg", Kind::Number, "-0.2", [](ScenarioConfig& c, const Parsed& p) { c.dvl.misalignment.pitch = p.x * kDeg; }},
    {"dvl.yaw_deg", Kind::Number, "-0.5", [](ScenarioConfig& c, const Parsed& p) { c.dvl.misalignment.yaw = p.x * kDeg; }},
    {"ekf.alignment", Kind::Text, "filter",
     [](ScenarioConfig& c, const Parsed& p) {
       if (p.s == "filter") {
         c.alignment = Alignment::Filter;
       } else if (p.s == "injected") {
         c.alignment = Alignment::Injected;
       } else {
         throw Error(ErrorCode::InvalidConfig, "expected 'filter' or 'injected'");
       }
     }},
    {"ekf.alignment_error_deg", Kind::Triple, "0.01,0.01,0.1",
     [](ScenarioConfig& c, const Parsed& p) {
       c.ekf.alignment_error_sigma = {p.v.x() * kDeg, p.v.y() * kDeg, p.v.z() * kDeg};
     }},
    {"ekf.initial_scale", Kind::Number, "0.8", [](ScenarioConfig& c, const Parsed& p) { c.ekf.initial_scale = p.x; }},
    {"ekf.dvl_sigma_m_s", Kind::Number, "0.02", [](ScenarioConfig& c, const Parsed& p) { c.ekf.dvl_sigma = p.x; }},
    {"ekf.gate", Kind::Number, "16.266", [](ScenarioConfig& c, const Parsed& p) { c.ekf.gate = p.x; }},
    {"ekf.record_interval_s", Kind::Number, "1", [](ScenarioConfig& c, const Parsed& p) { c.record_interval = p.x; }},
    {"ekf.init_attitude_sigma_deg", Kind::Triple, "0.01,0.1,0.01",
     [](ScenarioConfig& c, const Parsed& p) { c.ekf.init_attitude_sigma = p.v * kDeg; }},
    {"ekf.init_velocity_sigma_m_s", Kind::Number, "0.05",
     [](ScenarioConfig& c, const Parsed& p) { c.ekf.init_velocity_sigma = p.x; }},
    {"ekf.init_position_sigma_m", Kind::Number, "1", [](ScenarioConfig& c, const Parsed& p) { c.ekf.init_position_sigma = p.x; }},
    {"ekf.init_gyro_bias_sigma_deg_h", Kind::Number, "0.02",
     [](ScenarioConfig& c, const Parsed& p) { c.ekf.init_gyro_bias_sigma = p.x * kDph; }},
    {"ekf.init_accel_bias_sigma_ug", Kind::Number, "100",
     [](ScenarioConfig& c, const Parsed& p) { c.ekf.init_accel_bias_sigma = p.x * kUg; }},
    {"ekf.init_scale_sigma", Kind::Number, "0.2", [](ScenarioConfig& c, const Parsed& p) { c.ekf.init_scale_sigma = p.x; }},
    {"ekf.init_misalignment_sigma_deg", Kind::Number, "1",
     [](ScenarioConfig& c, const Parsed& p) { c.ekf.init_misalignment_sigma = p.x * kDeg; }},
    {"ekf.gyro_noise_deg_h_rthz", Kind::Number, "0.1",
     [](ScenarioConfig& c, const Parsed& p) { c.ekf.gyro_noise_density = p.x * kDph; }},
    {"ekf.accel_noise_ug_rthz", Kind::Number, "10",
     [](ScenarioConfig& c, const Parsed& p) { c.ekf.accel_noise_density = p.x * kUg; }},
    {"ekf.gyro_bias_walk_deg_h_rts", Kind::Number, "1e-08",
     [](ScenarioConfig& c, const Parsed& p) { c.ekf.gyro_bias_walk = p.x * kDph; }},
    {"ekf.accel_bias_walk_ug_rts", Kind::Number, "5e-05",
     [](ScenarioConfig& c, const Parsed& p) { c.ekf.accel_bias_walk = p.x * kUg; }},
    {"ekf.scale_walk_rts", Kind::Number, "1e-08", [](ScenarioConfig& c, const Parsed& p) { c.ekf.scale_walk = p.x; }},
    {"ekf.misalignment_walk_rad_rts", Kind::Number, "1e-08",
     [](ScenarioConfig& c, const Parsed& p) { c.ekf.misalignment_walk = p.x; }},
    {"iodvlc.chains", Kind::Text, "first",
     [](ScenarioConfig& c, const Parsed& p) {
       if (p.s != "first" && p.s != "all") throw Error(ErrorCode::InvalidConfig, "expected 'first' or 'all'");
       c.calibrate_all_chains = p.s == "all";
     }},
    {"obscheck.block_s", Kind::Number, "1", [](ScenarioConfig& c, const Parsed& p) { c.classify.block = p.x; }},
    {"obscheck.window_s", Kind::Number, "5", [](ScenarioConfig& c, const Parsed& p) { c.classify.window = p.x; }},
    {"obscheck.still_rate_deg_s", Kind::Number, "0.02",
     [](ScenarioConfig& c, const Parsed& p) { c.classify.still_rate = p.x * kDeg; }},
    {"obscheck.turn_rate_deg_s", Kind::Number, "0.5",
     [](ScenarioConfig& c, const Parsed& p) { c.classify.turn_rate = p.x * kDeg; }},
    {"obscheck.turn_min_s", Kind::Number, "10", [](ScenarioConfig& c, const Parsed& p) { c.classify.turn_min_duration = p.x; }},
    {"obscheck.force_threshold_m_s2", Kind::Number, "0.005",
     [](ScenarioConfig& c, const Parsed& p) { c.classify.force_threshold = p.x; }},
    {"obscheck.lead_s", Kind::Number, "5", [](ScenarioConfig& c, const Parsed& p) { c.classify.lead = p.x; }},
    {"obscheck.merge_gap_s", Kind::Number, "5", [](ScenarioConfig& c, const Parsed& p) { c.classify.merge_gap = p.x; }},
    {"obscheck.rank_tolerance", Kind::Number, "0.01", [](ScenarioConfig& c, const Parsed& p) { c.rank_tolerance = p.x; }},
    {"obscheck.conditioning", Kind::Number, "0.001", [](ScenarioConfig& c, const Parsed& p) { c.type2.conditioning = p.x; }},
    {"obscheck.type2_min_duration_s", Kind::Number, "60",
     [](ScenarioConfig& c, const Parsed& p) { c.type2.min_duration = p.x; }},
    {"obscheck.fit_samples", Kind::Integer, "7",
     [](ScenarioConfig& c, const Parsed& p) { c.type2.fit_samples = static_cast<int>(p.i); }},
};

const Key* find_key(const std::string& name) {
  for (const auto& k : kKeys) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double finite_number(std::string_view s) {
  const double v = io::parse_double(trim(s));
  if (!std::isfinite(v)) throw Error(ErrorCode::InvalidConfig, "value must be finite");
  return v;
}

// Parses a value and returns it together with its normalized text.
std::pair<Parsed, std::string> parse_value(const Key& key, std::string_view text) {
  Parsed p;
  std::string norm;
  switch (key.kind) {
    case Kind::Number:
      p.x = finite_number(text);
      norm = io::format_double(p.x);
      break;
    case Kind::Triple: {
      std::vector<std::string_view> parts;
      std::size_t pos = 0;
      for (;;) {
        const auto comma = text.find(',', pos);
        parts.push_back(text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
      }
      if (parts.size() != 3) throw Error(ErrorCode::InvalidConfig, "expected three comma-separated numbers");
      for (int i = 0; i < 3; ++i) {
        p.v(i) = finite_number(parts[static_cast<std::size_t>(i)]);
        norm += (i ? "," : "") + io::format_double(p.v(i));
      }
      break;
    }
    case Kind::Integer: {
      const auto t = trim(text);
      const auto res = std::from_chars(t.data(), t.data() + t.size(), p.i);
      if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
        throw Error(ErrorCode::InvalidConfig, "expected a non-negative integer");
      }
      norm = std::to_string(p.i);
      break;
    }
    case Kind::Text:
      p.s = std::string(trim(text));
      if (p.s.empty()) throw Error(ErrorCode::InvalidConfig, "empty value");
      norm = p.s;
      break;
  }
  return {p, norm};
}

void validate(const ScenarioConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::InvalidConfig, what);
  };
  require(c.imu_rate > 0.0 && c.dvl_rate > 0.0, "scenario rates must be positive");
  const double ratio = c.imu_rate / c.dvl_rate;
  require(ratio >= 1.0 && std::abs(ratio - std::round(ratio)) < 1e-9,
          "scenario.dvl_rate_hz must divide scenario.imu_rate_hz");
  require(1.0 / c.imu_rate <= ins::kMaxStep, "scenario.imu_rate_hz too low for the mechanization step");
  require(std::abs(c.origin.lat) < 89.0 * kDeg, "origin.lat_deg must stay away from the poles");
  require(std::abs(c.init_attitude.pitch) < 80.0 * kDeg, "attitude.pitch_deg too close to gimbal lock");
  require(c.dvl.scale > 0.0, "dvl.scale must be positive");
  require(c.record_interval >= 0.0, "ekf.record_interval_s must not be negative");
  require(c.rank_tolerance > 0.0 && c.rank_tolerance < 1.0, "obscheck.rank_tolerance must be in (0, 1)");
  require(c.type2.conditioning > 0.0, "obscheck.conditioning must be positive");
  require(c.type2.fit_samples >= 5, "obscheck.fit_samples must be at least 5");
  require(c.classify.block > 0.0 && c.classify.window > 0.0 && c.classify.still_rate > 0.0 &&
              c.classify.turn_rate > c.classify.still_rate && c.classify.force_threshold > 0.0,
          "obscheck thresholds must be positive and turn_rate above still_rate");
  c.errors.validate();
  c.ekf.validate();
}

}  // namespace

const io::ConfigMap& default_values() {
  static const io::ConfigMap m = [] {
    io::ConfigMap out;
    for (const auto& k : kKeys) out[k.name] = {k.def, "default"};
    return out;
  }();
  return m;
}

ResolvedConfig resolve(const io::ConfigMap& overrides, const fs::path& base_dir) {
  for (const auto& [name, v] : overrides) {
    if (!find_key(name)) throw Error(ErrorCode::InvalidConfig, v.origin + ": unknown key '" + name + "'");
  }
  ResolvedConfig out;
  for (const auto& k : kKeys) {
    const auto it = overrides.find(k.name);
    const io::ConfigValue& raw = it != overrides.end() ? it->second : default_values().at(k.name);
    try {
      auto [parsed, norm] = parse_value(k, raw.value);
      k.apply(out.scenario, parsed);
      out.values[k.name] = {norm, raw.origin};
      out.canonical += std::string(k.name) + " = " + norm + "\n";
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidConfig, raw.origin + ": " + k.name + " = '" + raw.value + "': " + e.what());
    }
  }
  try {
    validate(out.scenario);
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  auto& plan = out.scenario.plan;
  if (plan != "3d" && plan != "2d") {
    fs::path p(plan);
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    if (!fs::exists(p)) {
      throw Error(ErrorCode::FileNotFound, out.values["scenario.plan"].origin + ": plan file " + p.string() + " not found");
    }
    plan = p.string();
    (void)plan_for(out.scenario);  // surface plan errors now
  }
  out.hash = io::sha256_hex(out.canonical);
  return out;
}

ResolvedConfig load(const std::optional<fs::path>& path, std::optional<std::uint64_t> seed_override) {
  io::ConfigMap m;
  fs::path base;
  if (path) {
    m = io::load_config_file(*path);
    base = path->parent_path();
  }
  if (seed_override) m["scenario.seed"] = {std::to_string(*seed_override), "--seed"};
  return resolve(m, base);
}

std::string to_json(const ResolvedConfig& config) {
  json j = json::object();
  for (const auto& k : kKeys) {
    const std::string name = k.name;
    const auto dot = name.find('.');
    const std::string section = name.substr(0, dot), key = name.substr(dot + 1);
    const std::string& v = config.values.at(name).value;
    switch (k.kind) {
      case Kind::Number: j[section][key] = io::parse_double(v); break;
      case Kind::Integer: j[section][key] = std::stoull(v); break;
      case Kind::Text: j[section][key] = v; break;
      case Kind::Triple: {
        const auto p = parse_value(k, v).first;
        j[section][key] = {p.v.x(), p.v.y(), p.v.z()};
        break;
      }
    }
  }
  return j.dump(2) + "\n";
}

// --- plans ------------------------------------------------------------------

namespace {

struct KindName {
  sim::MotionKind kind;
  const char* name;
};
constexpr KindName kKindNames[] = {{sim::MotionKind::Static, "static"},
                                   {sim::MotionKind::LevelAccelerate, "accelerate"},
                                   {sim::MotionKind::Descend, "descend"},
                                   {sim::MotionKind::Ascend, "ascend"},
                                   {sim::MotionKind::SquareLegWithTiltedTurn, "square"}};

struct FieldDef {
  const char* name;
  double sim::MotionPrimitive::*member;
  double unit;
};
const FieldDef kFields[] = {
    {"speed_to", &sim::MotionPrimitive::speed_to, 1.0},
    {"surge", &sim::MotionPrimitive::surge, 1.0},
    {"vertical_peak", &sim::MotionPrimitive::vertical_peak, 1.0},
    {"dwell", &sim::MotionPrimitive::dwell, 1.0},
    {"ramp", &sim::MotionPrimitive::ramp, 1.0},
    {"turn_rate_deg_s", &sim::MotionPrimitive::turn_rate, kDeg},
    {"bank_deg", &sim::MotionPrimitive::bank, kDeg},
    {"turn_pitch_deg", &sim::MotionPrimitive::turn_pitch, kDeg},
    {"turn_angle_deg", &sim::MotionPrimitive::turn_angle, kDeg},
};

}  // namespace

sim::MotionPlan parse_plan(std::string_view text, const std::string& source) {
  sim::MotionPlan plan;
  plan.name = source;
  std::size_t line_no = 0;
  for (std::string_view rest = text; !rest.empty();) {
    const auto nl = rest.find('\n');
    std::string_view line = rest.substr(0, nl);
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    std::istringstream in{std::string(line)};
    std::vector<std::string> tok;
    for (std::string t; in >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() < 3) throw Error(ErrorCode::InvalidPlan, where + ": expected 'kind start end [field=value ...]'");
    sim::MotionPrimitive seg;
    const auto kn = std::find_if(std::begin(kKindNames), std::end(kKindNames),
                                 [&](const KindName& k) { return tok[0] == k.name; });
    if (kn == std::end(kKindNames)) throw Error(ErrorCode::InvalidPlan, where + ": unknown motion '" + tok[0] + "'");
    seg.kind = kn->kind;
    try {
      seg.start = io::parse_double(tok[1]);
      seg.end = io::parse_double(tok[2]);
      for (std::size_t i = 3; i < tok.size(); ++i) {
        const auto eq = tok[i].find('=');
        if (eq == std::string::npos) throw Error(ErrorCode::InvalidPlan, "expected field=value, got '" + tok[i] + "'");
        const std::string name = tok[i].substr(0, eq), value = tok[i].substr(eq + 1);
        if (name == "turns") {
          seg.turns = static_cast<int>(io::parse_double(value));
          continue;
        }
        const auto f = std::find_if(std::begin(kFields), std::end(kFields),
                                    [&](const FieldDef& d) { return name == d.name; });
        if (f == std::end(kFields)) throw Error(ErrorCode::InvalidPlan, "unknown field '" + name + "'");
        seg.*(f->member) = io::parse_double(value) * f->unit;
      }
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidPlan, where + ": " + e.what());
    }
    plan.segments.push_back(seg);
  }
  plan.validate();
  return plan;
}

std::string plan_text(const sim::MotionPlan& plan) {
  const sim::MotionPrimitive defaults;
  std::string out;
  for (const auto& s : plan.segments) {
    const auto kn = std::find_if(std::begin(kKindNames), std::end(kKindNames),
                                 [&](const KindName& k) { return k.kind == s.kind; });
    out += std::string(kn->name) + " " + io::format_double(s.start) + " " + io::format_double(s.end);
    for (const auto& f : kFields) {
      if (s.*(f.member) != defaults.*(f.member)) out += std::string(" ") + f.name + "=" + io::format_double(s.*(f.member) / f.unit);
    }
    if (s.turns != defaults.turns) out += " turns=" + std::to_string(s.turns);
    out += "\n";
  }
  return out;
}

sim::MotionPlan plan_for(const ScenarioConfig& config) {
  if (config.plan == "3d") return sim::build_plan_3d();
  if (config.plan == "2d") return sim::build_plan_2d();
  auto plan = parse_plan(io::read_text(config.plan), config.plan);
  plan.name = fs::path(config.plan).stem().string();
  return plan;
}

// --- pipelines ----------------------------------------------------------------

Simulation simulate(const ScenarioConfig& config) {
  Simulation s;
  s.plan = plan_for(config);
  s.truth = sim::synthesize_truth(s.plan, config.origin, config.init_attitude, config.imu_rate);
  sim::SensorErrorModel errors = config.errors;
  errors.seed = config.seed;
  s.imu = sim::gen_imu(s.truth, errors, config.imu_rate);
  s.dvl = sim::gen_dvl(s.truth, config.dvl, errors, config.dvl_rate);
  return s;
}

CalibrationReport calibrate(std::span<const ins::ImuSample> imu, std::span<const sim::DvlSample> dvl,
                            const ScenarioConfig& config) {
  CalibrationReport out;
  const auto segments = obs::classify_segments(imu, config.classify);
  const iodvlc::AccumulateOptions base;
  const obs::Segment* still = nullptr;
  int id = 0;
  for (const auto& s : segments) {
    if (s.kind != obs::SegmentKind::TypeI || !s.excited) {
      if (!out.inputs.empty() && !config.calibrate_all_chains) break;
      still = s.kind == obs::SegmentKind::TypeI ? &s : nullptr;
      continue;
    }
    if (s.end - s.start < base.min_length) continue;
    iodvlc::CalibrationInput in;
    in.segment = {s.start, s.end, ++id};
    if (still) in.reference = iodvlc::ReferenceWindow{still->start, still->end};
    out.inputs.push_back(in);
  }
  if (out.inputs.empty()) throw Error(ErrorCode::NoTypeISegments, "no excited constant-attitude segment found");
  out.result = iodvlc::calibrate(imu, dvl, out.inputs, base);
  out.history = iodvlc::estimate_history(out.result.series, 1.0);
  return out;
}

CheckReport check(std::span<const ins::ImuSample> imu, std::span<const sim::DvlSample> dvl,
                  const ScenarioConfig& config) {
  CheckReport out;
  out.segments = obs::classify_segments(imu, config.classify);
  try {
    out.type1 = obs::check_type1(out.segments, dvl, config.rank_tolerance);
  } catch (const Error& e) {
    out.notes.push_back(std::string("type I: ") + e.what());
  }
  double scale = 1.0;
  Dcm c_d_b = Dcm::Identity();
  try {
    const auto cal = calibrate(imu, dvl, config).result.calibration;
    scale = cal.scale_estimate;
    c_d_b = cal.misalignment_estimate;
  } catch (const Error& e) {
    out.notes.push_back(std::string("calibration for the type II test: ") + e.what() + "; using k = 1, C = I");
  }
  try {
    out.type2 = obs::check_type2(out.segments, imu, dvl, scale, c_d_b, Vec3::Zero(), config.type2);
  } catch (const Error& e) {
    out.notes.push_back(std::string("type II: ") + e.what());
  }
  out.verdict = obs::observability_verdict(out.type1, out.type2);
  return out;
}

namespace {

void check_timebase(std::span<const ins::ImuSample> imu, std::span<const sim::DvlSample> dvl,
                    const sim::TruthSeries* truth) {
  if (imu.size() < 2) throw Error(ErrorCode::TimebaseMismatch, "IMU stream has fewer than two samples");
  const double t0 = imu.front().time;
  const double dt = imu[1].time - imu[0].time;
  if (!(dt > 0.0)) throw Error(ErrorCode::TimebaseMismatch, "IMU timestamps do not increase");
  const double tol = 1e-6;
  auto on_grid = [&](double t) {
    const long k = std::lround((t - t0) / dt);
    if (k < 0 || k >= static_cast<long>(imu.size())) return false;
    return std::abs(imu[static_cast<std::size_t>(k)].time - t) <= tol;
  };
  for (const auto& d : dvl) {
    if (!on_grid(d.time)) {
      throw Error(ErrorCode::TimebaseMismatch, "DVL sample at " + io::format_double(d.time) + " s is not on the IMU time grid");
    }
  }
  if (truth && (truth->ticks.empty() || !on_grid(truth->ticks.front().nav.time) ||
                std::abs(truth->dt() - dt) > tol)) {
    throw Error(ErrorCode::TimebaseMismatch, "truth does not share the IMU time base");
  }
}

const sim::TruthRecord* truth_at(const sim::TruthSeries& truth, double t) {
  const long k = std::lround((t - truth.ticks.front().nav.time) * truth.rate);
  if (k < 0 || k >= static_cast<long>(truth.ticks.size())) return nullptr;
  return &truth.ticks[static_cast<std::size_t>(k)];
}

}  // namespace

EkfReport run_ekf(std::span<const ins::ImuSample> imu, std::span<const sim::DvlSample> dvl,
                  const sim::TruthSeries* truth, const ScenarioConfig& config) {
  check_timebase(imu, dvl, truth);
  EkfReport out;

  // End of the stationary phase, if the data starts with one.
  const auto segments = obs::classify_segments(imu, config.classify);
  out.hold_until = imu.front().time;
  if (!segments.empty() && segments.front().kind == obs::SegmentKind::TypeI && !segments.front().excited) {
    out.hold_until = segments.front().end;
  }

  const sim::CounterGaussian draw(config.seed, 0xA119);
  const auto& sig = config.ekf.alignment_error_sigma;
  out.alignment_error = {draw(0) * sig.roll, draw(1) * sig.pitch, draw(2) * sig.yaw};

  const double start = config.alignment == Alignment::Filter ? imu.front().time : out.hold_until;
  ins::NavState nav;
  if (truth) {
    const auto* rec = truth_at(*truth, start);
    if (!rec) throw Error(ErrorCode::TimebaseMismatch, "truth does not cover the filter start");
    nav = rec->nav;
  } else if (config.alignment == Alignment::Filter) {
    nav.c_b_n = att::euler_to_dcm(config.init_attitude).transpose();
    nav.pos = config.origin;
    nav.time = start;
  } else {
    throw Error(ErrorCode::InvalidConfig, "ekf.alignment = injected needs truth to start from");
  }
  att::EulerYZX e = att::dcm_to_euler(nav.c_b_n.transpose());
  e.roll += out.alignment_error.roll;
  e.pitch += out.alignment_error.pitch;
  e.yaw += out.alignment_error.yaw;
  out.initial = ekf::init(config.ekf, att::euler_to_dcm(e).transpose(), nav.pos, start, nav.v_n);

  std::optional<ekf::TruthReference> ref;
  if (truth) ref = ekf::TruthReference{truth, config.dvl, {config.errors.gyro_bias, config.errors.accel_bias}};
  ekf::RunOptions opt;
  opt.record_interval = config.record_interval;
  if (config.alignment == Alignment::Filter) opt.hold_dvl_params_until = out.hold_until;
  out.run = ekf::run(out.initial, imu, dvl, config.ekf, ref, opt);
  return out;
}

EkfSummary summarize(const EkfReport& report, std::uint64_t seed) {
  EkfSummary s;
  s.seed = seed;
  s.rejected = report.run.rejected;
  s.updates = report.run.updates;
  const auto& h = report.run.history;
  if (h.empty()) return s;
  s.final_sigma = h.back().sigma;
  if (h.back().error) {
    s.final_error = *h.back().error;
    s.final_scale_error = h.back().error->coeff(ekf::kScale);
  }
  long n = 0, inside = 0;
  for (const auto& r : h) {
    if (r.time <= 700.0 || !r.error) continue;
    const double dk = std::abs(r.error->coeff(ekf::kScale));
    s.max_scale_error_after_700 = std::max(s.max_scale_error_after_700, dk);
    ++n;
    if (dk <= 3.0 * r.sigma(ekf::kScale)) ++inside;
  }
  s.scale_within_3sigma = n ? static_cast<double>(inside) / static_cast<double>(n) : 0.0;
  return s;
}

std::vector<EkfSummary> ekf_batch(const ScenarioConfig& config, std::span<const std::uint64_t> seeds) {
  std::vector<EkfSummary> out(seeds.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < seeds.size();) {
      try {
        ScenarioConfig c = config;
        c.seed = seeds[i];
        c.errors.seed = seeds[i];
        const Simulation sim = simulate(c);
        out[i] = summarize(run_ekf(sim.imu, sim.dvl, &sim.truth, c), seeds[i]);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), static_cast<unsigned>(seeds.size())));
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

namespace {

// States shown in the normalized-sigma figure.
constexpr int kNormalized[] = {ekf::kAtt,           ekf::kAtt + 1,       ekf::kAtt + 2,       ekf::kGyroBias,
                               ekf::kGyroBias + 1,  ekf::kGyroBias + 2,  ekf::kAccelBias,     ekf::kAccelBias + 1,
                               ekf::kAccelBias + 2, ekf::kScale,         ekf::kMis,           ekf::kMis + 1,
                               ekf::kMis + 2};

}  // namespace

io::Table normalized_sigmas(std::span<const ekf::HistoryRecord> history) {
  io::Table t;
  t.columns.push_back("t");
  for (int i : kNormalized) t.columns.push_back(std::string("norm_sigma_") + ekf::kStateNames[static_cast<std::size_t>(i)]);
  if (history.empty()) return t;
  const auto& s0 = history.front().sigma;
  for (const auto& h : history) {
    std::vector<double> row{h.time};
    for (int i : kNormalized) row.push_back(h.sigma(i) / s0(i));
    t.rows.push_back(std::move(row));
  }
  return t;
}

// --- figures ------------------------------------------------------------------

const char* figure_title(int id) {
  switch (id) {
    case 1: return "horizontal track of the 3D and 2D runs (m from origin)";
    case 2: return "DVL outputs, 3D run (m/s), decimated to 10 Hz";
    case 3: return "IMU gyro (deg/s) and accelerometer (m/s^2) outputs, 3D run, decimated to 10 Hz";
    case 4: return "DVL scale factor estimate by IO-DVLC";
    case 5: return "DVL misalignment estimate by IO-DVLC (deg)";
    case 6: return "DVL scale factor estimate and sigma by EKF";
    case 7: return "DVL misalignment estimate and sigma by EKF (deg)";
    case 8: return "gyro bias estimate and sigma by EKF (deg/h)";
    case 9: return "accelerometer bias estimate and sigma by EKF (ug)";
    case 10: return "attitude error and sigma by EKF (deg)";
    case 11: return "horizontal position error and sigma by EKF (m)";
    case 12: return "normalized standard deviations (sigma / initial sigma)";
    case 13: return "DVL scale factor estimate and sigma by EKF, 2D run";
    case 14: return "DVL misalignment estimate and sigma by EKF, 2D run (deg)";
    case 15: return "attitude error and sigma by EKF, 2D run (deg)";
    case 16: return "horizontal position error and sigma by EKF, 2D run (m)";
    default: return nullptr;
  }
}

namespace {

// Lazily computed runs shared by the figures of one reproduce call.
class FigureContext {
 public:
  explicit FigureContext(const ScenarioConfig& config) : config_(config) {
    config2d_ = config;
    config2d_.plan = "2d";
  }

  const ScenarioConfig& config(bool two_d) const { return two_d ? config2d_ : config_; }

  const Simulation& sim(bool two_d) {
    auto& slot = two_d ? sim2_ : sim_;
    if (!slot) slot = simulate(config(two_d));
    return *slot;
  }
  const EkfReport& ekf(bool two_d) {
    auto& slot = two_d ? ekf2_ : ekf_;
    if (!slot) {
      const auto& s = sim(two_d);
      slot = run_ekf(s.imu, s.dvl, &s.truth, config(two_d));
    }
    return *slot;
  }
  const CalibrationReport& cal() {
    if (!cal_) cal_ = calibrate(sim(false).imu, sim(false).dvl, config_);
    return *cal_;
  }

 private:
  ScenarioConfig config_, config2d_;
  std::optional<Simulation> sim_, sim2_;
  std::optional<EkfReport> ekf_, ekf2_;
  std::optional<CalibrationReport> cal_;
};

void add_columns(io::Table& t, std::initializer_list<const char*> names) {
  for (const char* n : names) t.columns.emplace_back(n);
}

io::Table track_table(const Simulation& three, const Simulation& two, const geo::GeoPosition& origin) {
  io::Table t;
  add_columns(t, {"run", "t", "north_m", "east_m", "h_m"});
  const auto r = geo::radii_of_curvature(origin.lat);
  for (const auto* s : {&three, &two}) {
    const double run = s == &three ? 3.0 : 2.0;
    const auto step = static_cast<std::size_t>(std::max(1.0, std::round(s->truth.rate)));
    for (std::size_t i = 0; i < s->truth.ticks.size(); i += step) {
      const auto& n = s->truth.ticks[i].nav;
      t.rows.push_back({run, n.time, (n.pos.lat - origin.lat) * (r.meridian + origin.height),
                        (n.pos.lon - origin.lon) * (r.transverse + origin.height) * std::cos(origin.lat), n.pos.height});
    }
  }
  return t;
}

// Columns t, then estimate (scaled) and sigma (scaled) for the given states.
io::Table estimate_table(std::span<const ekf::HistoryRecord> h, std::initializer_list<int> states, double unit,
                         const char* suffix) {
  io::Table t;
  t.columns.push_back("t");
  for (int i : states) t.columns.push_back(std::string(ekf::kStateNames[static_cast<std::size_t>(i)]) + suffix);
  for (int i : states) t.columns.push_back(std::string("sigma_") + ekf::kStateNames[static_cast<std::size_t>(i)] + suffix);
  for (const auto& r : h) {
    std::vector<double> row{r.time};
    for (int i : states) row.push_back(r.estimate(i) / unit);
    for (int i : states) row.push_back(r.sigma(i) / unit);
    t.rows.push_back(std::move(row));
  }
  return t;
}

io::Table attitude_error_table(std::span<const ekf::HistoryRecord> h) {
  io::Table t;
  add_columns(t, {"t", "err_roll_deg", "err_pitch_deg", "err_yaw_deg", "sigma_roll_deg", "sigma_pitch_deg",
                  "sigma_yaw_deg"});
  for (const auto& r : h) {
    if (!r.error) continue;
    std::vector<double> row{r.time};
    for (int i = 0; i < 3; ++i) row.push_back(r.error->coeff(ekf::kAtt + i) / kDeg);
    for (int i = 0; i < 3; ++i) row.push_back(r.sigma(ekf::kAtt + i) / kDeg);
    t.rows.push_back(std::move(row));
  }
  return t;
}

io::Table position_error_table(std::span<const ekf::HistoryRecord> h) {
  io::Table t;
  add_columns(t, {"t", "err_north_m", "err_east_m", "sigma_north_m", "sigma_east_m"});
  for (const auto& r : h) {
    if (!r.error) continue;
    const double lat = r.estimate(ekf::kPos + 1), height = r.estimate(ekf::kPos + 2);
    const auto radii = geo::radii_of_curvature(lat);
    const double north = radii.meridian + height, east = (radii.transverse + height) * std::cos(lat);
    t.rows.push_back({r.time, r.error->coeff(ekf::kPos + 1) * north, r.error->coeff(ekf::kPos) * east,
                      r.sigma(ekf::kPos + 1) * north, r.sigma(ekf::kPos) * east});
  }
  return t;
}

io::Table build_figure(int id, FigureContext& ctx) {
  using namespace ekf;
  switch (id) {
    case 1: return track_table(ctx.sim(false), ctx.sim(true), ctx.config(false).origin);
    case 2: {
      io::Table t;
      add_columns(t, {"t", "y_x", "y_y", "y_z"});
      const auto& dvl = ctx.sim(false).dvl;
      const auto step = static_cast<std::size_t>(std::max(1.0, std::round(ctx.config(false).dvl_rate / 10.0)));
      for (std::size_t i = 0; i < dvl.size(); i += step) {
        t.rows.push_back({dvl[i].time, dvl[i].velocity.x(), dvl[i].velocity.y(), dvl[i].velocity.z()});
      }
      return t;
    }
    case 3: {
      io::Table t;
      add_columns(t, {"t", "gyro_x_deg_s", "gyro_y_deg_s", "gyro_z_deg_s", "accel_x", "accel_y", "accel_z"});
      const auto& imu = ctx.sim(false).imu;
      const auto step = static_cast<std::size_t>(std::max(1.0, std::round(ctx.config(false).imu_rate / 10.0)));
      for (std::size_t i = 0; i < imu.size(); i += step) {
        const auto& s = imu[i];
        t.rows.push_back({s.time, s.gyro.x() / kDeg, s.gyro.y() / kDeg, s.gyro.z() / kDeg, s.accel.x(), s.accel.y(),
                          s.accel.z()});
      }
      return t;
    }
    case 4: {
      io::Table t;
      add_columns(t, {"t", "k_median", "k_ls"});
      for (const auto& p : ctx.cal().history) {
        if (p.scale && p.scale_ls) t.rows.push_back({p.time, *p.scale, *p.scale_ls});
      }
      return t;
    }
    case 5: {
      io::Table t;
      add_columns(t, {"t", "roll_deg", "pitch_deg", "yaw_deg", "roll_free"});
      for (const auto& p : ctx.cal().history) {
        if (!p.c_d_b) continue;
        const auto e = att::dcm_to_euler(p.c_d_b->transpose());
        t.rows.push_back({p.time, e.roll / kDeg, e.pitch / kDeg, e.yaw / kDeg, p.free_axis ? 1.0 : 0.0});
      }
      return t;
    }
    case 6:
    case 13: {
      io::Table t;
      add_columns(t, {"t", "k_hat", "k_sigma"});
      for (const auto& r : ctx.ekf(id == 13).run.history) t.rows.push_back({r.time, r.estimate(kScale), r.sigma(kScale)});
      return t;
    }
    case 7:
    case 14: return estimate_table(ctx.ekf(id == 14).run.history, {kMis, kMis + 1, kMis + 2}, kDeg, "_deg");
    case 8:
      return estimate_table(ctx.ekf(false).run.history, {kGyroBias, kGyroBias + 1, kGyroBias + 2}, sim::kDegPerHour,
                            "_deg_h");
    case 9:
      return estimate_table(ctx.ekf(false).run.history, {kAccelBias, kAccelBias + 1, kAccelBias + 2}, sim::kMicroG,
                            "_ug");
    case 10:
    case 15: return attitude_error_table(ctx.ekf(id == 15).run.history);
    case 11:
    case 16: return position_error_table(ctx.ekf(id == 16).run.history);
    case 12: return normalized_sigmas(ctx.ekf(false).run.history);
    default: throw Error(ErrorCode::UnknownFigure, "figure " + std::to_string(id) + " (valid: 1-16)");
  }
}

io::Table figure_with_provenance(int id, FigureContext& ctx, const ResolvedConfig& config) {
  if (!figure_title(id)) throw Error(ErrorCode::UnknownFigure, "figure " + std::to_string(id) + " (valid: 1-16)");
  io::Table t = build_figure(id, ctx);
  t.comments = {"figure " + std::to_string(id) + ": " + figure_title(id), "config sha256 " + config.hash,
                "seed " + std::to_string(config.scenario.seed)};
  if (id >= 13) t.comments.push_back("plan 2d");
  return t;
}

// --- command plumbing -----------------------------------------------------------

struct Streams {
  std::vector<ins::ImuSample> imu;
  std::vector<sim::DvlSample> dvl;
  std::optional<sim::TruthSeries> truth;
  bool simulated = false;
};

Streams load_streams(const ScenarioConfig& config, const Inputs& in, bool want_truth) {
  Streams s;
  if (!in.imu && !in.dvl) {
    if (in.truth) throw Error(ErrorCode::InvalidConfig, "--truth needs --imu and --dvl");
    Simulation sim = simulate(config);
    s.imu = std::move(sim.imu);
    s.dvl = std::move(sim.dvl);
    if (want_truth) s.truth = std::move(sim.truth);
    s.simulated = true;
    return s;
  }
  if (!in.imu || !in.dvl) throw Error(ErrorCode::InvalidConfig, "--imu and --dvl must be given together");
  s.imu = io::read_imu(*in.imu);
  s.dvl = io::read_dvl(*in.dvl);
  if (in.truth && want_truth) {
    const auto rows = io::read_truth(*in.truth);
    s.truth = io::truth_series(rows);
  }
  return s;
}

class Output {
 public:
  Output(fs::path dir, std::string command, const ResolvedConfig& config) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    report_.command = std::move(command);
    record_["command"] = report_.command;
    record_["config_sha256"] = config.hash;
    record_["seed"] = config.scenario.seed;
    write("config.resolved.cfg", [&](const fs::path& p) { io::write_text(p, config.canonical); });
  }

  template <class Writer>
  void write(const std::string& name, Writer&& writer) {
    const fs::path p = dir_ / name;
    writer(p);
    report_.manifest.push_back({name, io::sha256_file(p), fs::file_size(p)});
  }

  json& record() { return record_; }
  std::string& summary() { return report_.summary; }

  RunReport finish() {
    json files = json::array();
    for (const auto& m : report_.manifest) files.push_back({{"file", m.file}, {"sha256", m.sha256}, {"bytes", m.bytes}});
    record_["files"] = files;
    report_.record = record_.dump(2) + "\n";
    io::write_text(dir_ / "report.json", report_.record);
    return report_;
  }

 private:
  fs::path dir_;
  RunReport report_;
  json record_ = json::object();
};

std::string fmt(double v, int precision = 6) {
  std::ostringstream ss;
  ss.precision(precision);
  ss << v;
  return ss.str();
}

json euler_deg(const att::EulerYZX& e) {
  return {{"roll_deg", e.roll / kDeg}, {"pitch_deg", e.pitch / kDeg}, {"yaw_deg", e.yaw / kDeg}};
}

json vec_json(const Vec3& v, double unit = 1.0) { return {v.x() / unit, v.y() / unit, v.z() / unit}; }

json state_json(const ekf::StateVec& v) {
  json j = json::object();
  for (int i = 0; i < ekf::kStates; ++i) j[ekf::kStateNames[static_cast<std::size_t>(i)]] = v(i);
  return j;
}

}  // namespace

io::Table figure_table(int id, const ResolvedConfig& config) {
  if (!figure_title(id)) throw Error(ErrorCode::UnknownFigure, "figure " + std::to_string(id) + " (valid: 1-16)");
  FigureContext ctx(config.scenario);
  return figure_with_provenance(id, ctx, config);
}

RunReport cmd_simulate(const ResolvedConfig& config, const fs::path& out_dir) {
  Output out(out_dir, "simulate", config);
  const Simulation s = simulate(config.scenario);
  out.write("truth.csv", [&](const fs::path& p) { io::write_truth(p, io::truth_rows(s.truth)); });
  out.write("imu.csv", [&](const fs::path& p) { io::write_imu(p, s.imu); });
  out.write("dvl.csv", [&](const fs::path& p) { io::write_dvl(p, s.dvl); });
  out.write("plan.txt", [&](const fs::path& p) { io::write_text(p, plan_text(s.plan)); });
  out.record()["results"] = {{"plan", s.plan.name},
                             {"start_s", s.plan.start()},
                             {"end_s", s.plan.end()},
                             {"imu_samples", s.imu.size()},
                             {"dvl_samples", s.dvl.size()}};
  out.summary() = "simulated plan '" + s.plan.name + "' over [" + fmt(s.plan.start()) + ", " + fmt(s.plan.end()) +
                  "] s: " + std::to_string(s.imu.size()) + " IMU samples, " + std::to_string(s.dvl.size()) +
                  " DVL samples\n";
  return out.finish();
}

RunReport cmd_calibrate(const ResolvedConfig& config, const Inputs& in, const fs::path& out_dir) {
  Output out(out_dir, "calibrate", config);
  const Streams s = load_streams(config.scenario, in, false);
  const auto cal = calibrate(s.imu, s.dvl, config.scenario);
  const auto& c = cal.result.calibration;
  const auto e = att::dcm_to_euler(c.misalignment_estimate.transpose());

  io::Table scale;
  add_columns(scale, {"t", "k_median", "k_ls"});
  io::Table angles;
  add_columns(angles, {"t", "roll_deg", "pitch_deg", "yaw_deg", "roll_free"});
  for (const auto& p : cal.history) {
    if (p.scale && p.scale_ls) scale.rows.push_back({p.time, *p.scale, *p.scale_ls});
    if (p.c_d_b) {
      const auto a = att::dcm_to_euler(p.c_d_b->transpose());
      angles.rows.push_back({p.time, a.roll / kDeg, a.pitch / kDeg, a.yaw / kDeg, p.free_axis ? 1.0 : 0.0});
    }
  }
  out.write("calibration_scale.csv", [&](const fs::path& p) { io::write_table(p, scale); });
  out.write("calibration_angles.csv", [&](const fs::path& p) { io::write_table(p, angles); });

  json segs = json::array();
  for (const auto& i : cal.inputs) {
    json seg = {{"id", i.segment.id}, {"start_s", i.segment.start}, {"end_s", i.segment.end}};
    if (i.reference) seg["reference"] = {i.reference->start, i.reference->end};
    segs.push_back(seg);
  }
  json res = {{"scale", c.scale_estimate},
              {"scale_median", c.scale_median},
              {"misalignment", euler_deg(e)},
              {"residual_m_s", c.residual},
              {"singular_values", vec_json(c.singular_values)},
              {"segments", segs}};
  if (c.free_axis) res["free_axis"] = vec_json(*c.free_axis);
  out.record()["results"] = res;

  std::string& txt = out.summary();
  txt += "IO-DVLC on " + std::to_string(cal.inputs.size()) + " segment(s)\n";
  txt += "  scale k          " + fmt(c.scale_estimate, 8) + " (median ratio " + fmt(c.scale_median, 8) + ")\n";
  txt += "  misalignment deg roll " + fmt(e.roll / kDeg, 4) + "  pitch " + fmt(e.pitch / kDeg, 4) + "  yaw " +
         fmt(e.yaw / kDeg, 4) + "\n";
  txt += "  residual         " + fmt(c.residual, 3) + " m/s rms\n";
  if (c.free_axis) txt += "  rotation about the excitation axis is not determined (single direction)\n";
  return out.finish();
}

RunReport cmd_check(const ResolvedConfig& config, const Inputs& in, const fs::path& out_dir) {
  Output out(out_dir, "check", config);
  const Streams s = load_streams(config.scenario, in, false);
  const auto r = check(s.imu, s.dvl, config.scenario);

  json segs = json::array();
  std::string& txt = out.summary();
  txt += "segments:\n";
  for (const auto& g : r.segments) {
    segs.push_back({{"kind", obs::to_string(g.kind)}, {"start_s", g.start}, {"end_s", g.end}, {"excited", g.excited}});
    txt += "  " + std::string(obs::to_string(g.kind)) + std::string(g.kind == obs::SegmentKind::TypeII ? " " : "  ") +
           "[" + fmt(g.start) + ", " + fmt(g.end) + "] s" + (g.excited ? "  excited" : "") + "\n";
  }
  const auto& v = r.verdict;
  json res = {{"segments", segs},
              {"type1_rank", v.type1_rank},
              {"type2_min_eigenvalue", v.type2_min_eigenvalue},
              {"type2_nonsingular", v.type2_nonsingular},
              {"notes", r.notes}};
  if (v.type1_free_axis) res["type1_free_axis"] = vec_json(*v.type1_free_axis);
  if (r.type2) res["type2_trace"] = r.type2->trace;
  const auto& es = v.estimable;
  const std::pair<const char*, bool> verdicts[] = {
      {"attitude", es.attitude},   {"velocity", es.velocity},   {"gyro_bias", es.gyro_bias},
      {"accel_bias", es.accel_bias}, {"dvl_scale", es.dvl_scale}, {"dvl_roll", es.dvl_roll},
      {"dvl_pitch", es.dvl_pitch}, {"dvl_yaw", es.dvl_yaw}};
  json est = json::object();
  for (const auto& [name, ok] : verdicts) est[name] = ok;
  res["estimable"] = est;
  res["all_estimable"] = es.all();
  out.record()["results"] = res;

  txt += "type I rank " + std::to_string(v.type1_rank);
  if (v.type1_free_axis) {
    const Vec3& a = *v.type1_free_axis;
    txt += ", free axis (" + fmt(a.x(), 4) + ", " + fmt(a.y(), 4) + ", " + fmt(a.z(), 4) + ")";
  }
  txt += "\ntype II min eigenvalue " + fmt(v.type2_min_eigenvalue, 4) + (v.type2_nonsingular ? " (non-singular)" : " (singular)") + "\n";
  txt += "estimable:";
  for (const auto& [name, ok] : verdicts) txt += std::string(" ") + name + (ok ? "=yes" : "=NO");
  txt += "\n";
  for (const auto& n : r.notes) txt += "note: " + n + "\n";
  out.write("observability.json", [&](const fs::path& p) { io::write_text(p, res.dump(2) + "\n"); });
  return out.finish();
}

RunReport cmd_ekf(const ResolvedConfig& config, const Inputs& in, const fs::path& out_dir,
                  std::span<const std::uint64_t> batch_seeds) {
  Output out(out_dir, "ekf", config);
  std::string& txt = out.summary();
  if (!batch_seeds.empty()) {
    if (in.imu || in.dvl || in.truth) throw Error(ErrorCode::InvalidConfig, "batch runs simulate their own inputs");
    const auto res = ekf_batch(config.scenario, batch_seeds);
    io::Table t;
    add_columns(t, {"seed", "final_k_error", "max_k_error_after_700", "k_within_3sigma", "rejected", "updates"});
    json runs = json::array();
    for (const auto& r : res) {
      t.rows.push_back({static_cast<double>(r.seed), r.final_scale_error, r.max_scale_error_after_700,
                        r.scale_within_3sigma, static_cast<double>(r.rejected), static_cast<double>(r.updates)});
      runs.push_back({{"seed", r.seed},
                      {"final_error", state_json(r.final_error)},
                      {"final_sigma", state_json(r.final_sigma)},
                      {"max_k_error_after_700", r.max_scale_error_after_700},
                      {"k_within_3sigma", r.scale_within_3sigma},
                      {"rejected", r.rejected}});
      txt += "seed " + std::to_string(r.seed) + ": final k error " + fmt(r.final_scale_error, 3) +
             ", max after 700 s " + fmt(r.max_scale_error_after_700, 3) + ", within 3 sigma " +
             fmt(100.0 * r.scale_within_3sigma, 4) + "%\n";
    }
    out.write("batch_summary.csv", [&](const fs::path& p) { io::write_table(p, t); });
    out.record()["results"] = {{"runs", runs}};
    return out.finish();
  }

  const Streams s = load_streams(config.scenario, in, true);
  const auto rep = run_ekf(s.imu, s.dvl, s.truth ? &*s.truth : nullptr, config.scenario);
  const auto sum = summarize(rep, config.scenario.seed);
  const std::vector<std::string> comments = {"config sha256 " + config.hash,
                                             "seed " + std::to_string(config.scenario.seed)};
  out.write("estimate_history.csv",
            [&](const fs::path& p) { io::write_estimate_history(p, rep.run.history, comments); });
  auto norm = normalized_sigmas(rep.run.history);
  norm.comments = comments;
  out.write("normalized_sigmas.csv", [&](const fs::path& p) { io::write_table(p, norm); });

  const auto& fin = rep.run.final_state;
  const auto est = ekf::report(fin);
  json res = {{"start_s", rep.initial.nav.time},
              {"dvl_params_held_until_s", config.scenario.alignment == Alignment::Filter ? rep.hold_until : rep.initial.nav.time},
              {"alignment_error", euler_deg(rep.alignment_error)},
              {"final_estimate", state_json(est)},
              {"final_sigma", state_json(sum.final_sigma)},
              {"predictions", rep.run.predictions},
              {"updates", rep.run.updates},
              {"rejected", rep.run.rejected}};
  if (s.truth) {
    res["final_error"] = state_json(sum.final_error);
    res["max_k_error_after_700"] = sum.max_scale_error_after_700;
    res["k_within_3sigma_after_700"] = sum.scale_within_3sigma;
  }
  out.record()["results"] = res;

  txt += "EKF " + fmt(rep.initial.nav.time) + " -> " + fmt(fin.nav.time) + " s, " + std::to_string(rep.run.updates) +
         " DVL updates (" + std::to_string(rep.run.rejected) + " gated out)\n";
  txt += "  scale k        " + fmt(fin.scale, 8) + " +- " + fmt(sum.final_sigma(ekf::kScale), 2) + "\n";
  txt += "  misalignment   roll " + fmt(est(ekf::kMis) / kDeg, 4) + "  pitch " + fmt(est(ekf::kMis + 1) / kDeg, 4) +
         "  yaw " + fmt(est(ekf::kMis + 2) / kDeg, 4) + " deg\n";
  txt += "  gyro bias      " + fmt(fin.biases.gyro.x() / sim::kDegPerHour, 3) + ", " +
         fmt(fin.biases.gyro.y() / sim::kDegPerHour, 3) + ", " + fmt(fin.biases.gyro.z() / sim::kDegPerHour, 3) + " deg/h\n";
  txt += "  accel bias     " + fmt(fin.biases.accel.x() / sim::kMicroG, 4) + ", " +
         fmt(fin.biases.accel.y() / sim::kMicroG, 4) + ", " + fmt(fin.biases.accel.z() / sim::kMicroG, 4) + " ug\n";
  if (s.truth) {
    txt += "  final k error  " + fmt(sum.final_scale_error, 3) + ", max after 700 s " +
           fmt(sum.max_scale_error_after_700, 3) + "\n";
  }
  return out.finish();
}

RunReport cmd_reproduce(const ResolvedConfig& config, std::span<const int> figures, const fs::path& out_dir) {
  for (int id : figures) {
    if (!figure_title(id)) throw Error(ErrorCode::UnknownFigure, "figure " + std::to_string(id) + " (valid: 1-16)");
  }
  Output out(out_dir, "reproduce", config);
  FigureContext ctx(config.scenario);
  json figs = json::array();
  for (int id : figures) {
    const io::Table t = figure_with_provenance(id, ctx, config);
    char name[16];
    std::snprintf(name, sizeof name, "fig%02d.csv", id);
    out.write(name, [&](const fs::path& p) { io::write_table(p, t); });
    figs.push_back({{"figure", id}, {"file", name}, {"title", figure_title(id)}, {"rows", t.rows.size()}});
    out.summary() += std::string(name) + "  " + figure_title(id) + " (" + std::to_string(t.rows.size()) + " rows)\n";
  }
  out.record()["results"] = {{"figures", figs}};
  return out.finish();
}

}  // namespace dvlnav::pipeline
