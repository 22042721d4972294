#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dvlnav/dataio.hpp"
#include "dvlnav/ekf.hpp"
#include "dvlnav/iodvlc.hpp"
#include "dvlnav/obscheck.hpp"
#include "dvlnav/simkit.hpp"

// End-to-end pipelines behind the command-line tool: scenario config,
// simulation, IO-DVLC calibration, observability check, EKF, and the data
// series behind each reference figure.
namespace dvlnav::pipeline {

enum class Alignment {
  Filter,    // EKF starts with the data and aligns itself during the stationary phase
  Injected,  // EKF starts at the end of the stationary phase from truth + alignment errors
};

struct ScenarioConfig {
  std::string plan = "3d";  // 3d, 2d, or a plan file
  geo::GeoPosition origin;
  att::EulerYZX init_attitude;
  double imu_rate = 100.0;
  double dvl_rate = 100.0;
  sim::SensorErrorModel errors;
  sim::DvlParams dvl;
  ekf::EkfConfig ekf;
  Alignment alignment = Alignment::Filter;
  double record_interval = 1.0;
  obs::ClassifyOptions classify;
  obs::Type2Options type2;
  double rank_tolerance = 1e-2;
  // IO-DVLC: only the first chain of excited segments after a still stretch,
  // or every chain. Later chains start from a moving reference, which the
  // compensation handles only approximately.
  bool calibrate_all_chains = false;
  std::uint64_t seed = 1;
};

/// A config with every key resolved. `canonical` lists all keys sorted, one
/// `key = value` per line, and is what the hash covers.
struct ResolvedConfig {
  ScenarioConfig scenario;
  io::ConfigMap values;
  std::string canonical;
  std::string hash;  // SHA-256 of canonical
};

/// Every accepted key with its default value, in canonical order.
const io::ConfigMap& default_values();

/// Defaults overlaid with `overrides`. Throws InvalidConfig naming the key
/// and its origin for unknown keys or bad values, FileNotFound for a missing
/// plan file. Relative plan paths resolve against `base_dir`.
ResolvedConfig resolve(const io::ConfigMap& overrides, const std::filesystem::path& base_dir = {});
ResolvedConfig load(const std::optional<std::filesystem::path>& path, std::optional<std::uint64_t> seed_override = {});

/// JSON form of the resolved values (nested by section).
std::string to_json(const ResolvedConfig& config);

// --- plans ----------------------------------------------------------------

/// One primitive per line: `kind start end [field=value ...]`, angles in
/// degrees, '#' comments.
sim::MotionPlan parse_plan(std::string_view text, const std::string& source = "<plan>");
std::string plan_text(const sim::MotionPlan& plan);
sim::MotionPlan plan_for(const ScenarioConfig& config);

// --- pipelines ------------------------------------------------------------

struct Simulation {
  sim::MotionPlan plan;
  sim::TruthSeries truth;
  std::vector<ins::ImuSample> imu;
  std::vector<sim::DvlSample> dvl;
};

Simulation simulate(const ScenarioConfig& config);

struct CalibrationReport {
  std::vector<iodvlc::CalibrationInput> inputs;
  iodvlc::CalibrateResult result;
  std::vector<iodvlc::HistoryPoint> history;
};

/// IO-DVLC on the excited Type-I segments found by the classifier; each uses
/// the still stretch that precedes its chain as the reference window.
CalibrationReport calibrate(std::span<const ins::ImuSample> imu, std::span<const sim::DvlSample> dvl,
                            const ScenarioConfig& config);

struct CheckReport {
  std::vector<obs::Segment> segments;
  std::optional<obs::Type1Result> type1;
  std::optional<obs::Type2Result> type2;
  obs::ObservabilityReport verdict;
  std::vector<std::string> notes;  // why a check could not run
};

/// Observability conditions for the DVL parameters and biases. The Type-II test needs k and C_d^b; they come from
/// an IO-DVLC pass when it succeeds, else nominal values.
CheckReport check(std::span<const ins::ImuSample> imu, std::span<const sim::DvlSample> dvl,
                  const ScenarioConfig& config);

struct EkfReport {
  ekf::RunResult run;
  ekf::EkfState initial;
  double hold_until = 0.0;
  att::EulerYZX alignment_error;  // drawn from the seed
};

/// Initial state from truth at the start tick, or (Filter alignment, no
/// truth) from the configured origin and attitude at rest.
EkfReport run_ekf(std::span<const ins::ImuSample> imu, std::span<const sim::DvlSample> dvl,
                  const sim::TruthSeries* truth, const ScenarioConfig& config);

struct EkfSummary {
  std::uint64_t seed = 0;
  double final_scale_error = 0.0;
  double max_scale_error_after_700 = 0.0;
  double scale_within_3sigma = 0.0;  // fraction of records after 700 s
  ekf::StateVec final_error = ekf::StateVec::Zero();
  ekf::StateVec final_sigma = ekf::StateVec::Zero();
  long rejected = 0;
  long updates = 0;
};
EkfSummary summarize(const EkfReport& report, std::uint64_t seed);

/// Independent seeds, simulated and filtered concurrently.
std::vector<EkfSummary> ekf_batch(const ScenarioConfig& config, std::span<const std::uint64_t> seeds);

/// sigma(t) / sigma(first record) for attitude, biases, scale, misalignment.
io::Table normalized_sigmas(std::span<const ekf::HistoryRecord> history);

// --- figures --------------------------------------------------------------

inline constexpr int kFirstFigure = 1;
inline constexpr int kLastFigure = 16;
const char* figure_title(int id);

/// The series a figure plots, labelled. Comments carry provenance (config
/// hash, seed, title). Throws UnknownFigure.
io::Table figure_table(int id, const ResolvedConfig& config);

// --- commands -------------------------------------------------------------

struct Inputs {
  std::optional<std::filesystem::path> imu;
  std::optional<std::filesystem::path> dvl;
  std::optional<std::filesystem::path> truth;
};

struct ManifestEntry {
  std::string file;
  std::string sha256;
  std::uintmax_t bytes = 0;
};

struct RunReport {
  std::string command;
  std::string summary;       // human-readable, degrees for angles
  std::string record;        // JSON, written as report.json
  std::vector<ManifestEntry> manifest;
};

// Each command writes its files plus report.json into out_dir. Commands that
// read streams simulate them from the config when no input files are given.
RunReport cmd_simulate(const ResolvedConfig& config, const std::filesystem::path& out_dir);
RunReport cmd_calibrate(const ResolvedConfig& config, const Inputs& in, const std::filesystem::path& out_dir);
RunReport cmd_ekf(const ResolvedConfig& config, const Inputs& in, const std::filesystem::path& out_dir,
                  std::span<const std::uint64_t> batch_seeds = {});
RunReport cmd_check(const ResolvedConfig& config, const Inputs& in, const std::filesystem::path& out_dir);
RunReport cmd_reproduce(const ResolvedConfig& config, std::span<const int> figures, const std::filesystem::path& out_dir);

}  // namespace dvlnav::pipeline
