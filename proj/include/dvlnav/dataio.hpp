#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dvlnav/ekf.hpp"
#include "dvlnav/simkit.hpp"
#include "dvlnav/strapdown.hpp"

// File formats: CSV logs with an exact header row and optional leading
// '# ' comment lines, and the key = value scenario config (with a JSON mirror).
// Numbers are written in the shortest form that parses back to the same
// double, so every emitted file re-reads bit-identically.
namespace dvlnav::io {

std::string format_double(double v);
/// Whole-string parse; throws ParseError on trailing garbage.
double parse_double(std::string_view s);

struct Table {
  std::vector<std::string> comments;  // without the leading "# "
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

void write_table(const std::filesystem::path& path, const Table& table);
/// Throws FileNotFound, or ParseError with file:line on malformed content.
Table read_table(const std::filesystem::path& path);

extern const std::vector<std::string> kImuColumns;
extern const std::vector<std::string> kDvlColumns;
extern const std::vector<std::string> kTruthColumns;

void write_imu(const std::filesystem::path& path, std::span<const ins::ImuSample> imu,
               const std::vector<std::string>& comments = {});
std::vector<ins::ImuSample> read_imu(const std::filesystem::path& path);

void write_dvl(const std::filesystem::path& path, std::span<const sim::DvlSample> dvl,
               const std::vector<std::string>& comments = {});
std::vector<sim::DvlSample> read_dvl(const std::filesystem::path& path);

/// One truth.csv row; attitude as the y-z-x Euler angles of C_n^b.
struct TruthRow {
  double time = 0.0;
  geo::GeoPosition pos;
  Vec3 v_n = Vec3::Zero();
  att::EulerYZX euler;
};

std::vector<TruthRow> truth_rows(const sim::TruthSeries& truth);
/// Ticks only (no midpoints, no rates); enough for error reporting.
sim::TruthSeries truth_series(std::span<const TruthRow> rows);

void write_truth(const std::filesystem::path& path, std::span<const TruthRow> rows,
                 const std::vector<std::string>& comments = {});
std::vector<TruthRow> read_truth(const std::filesystem::path& path);

/// t_s, the 19 estimates, sigma_<name> for each, and err_<name> for each when
/// every record carries an error.
std::vector<std::string> estimate_history_columns(bool with_error);
void write_estimate_history(const std::filesystem::path& path, std::span<const ekf::HistoryRecord> history,
                            const std::vector<std::string>& comments = {});
std::vector<ekf::HistoryRecord> read_estimate_history(const std::filesystem::path& path);

// --- config ---------------------------------------------------------------

struct ConfigValue {
  std::string value;
  std::string origin;  // "file:line" for diagnostics
};
using ConfigMap = std::map<std::string, ConfigValue>;

/// `key = value` lines; `#` starts a comment; `[section]` prefixes following
/// keys with "section.". Duplicate keys are an error.
ConfigMap parse_key_value(std::string_view text, const std::string& source = "<config>");
/// Nested objects flatten to dotted keys; arrays of numbers become
/// comma-separated lists.
ConfigMap parse_json(std::string_view text, const std::string& source = "<config>");
/// Dispatches on extension: .json is JSON, anything else key = value.
ConfigMap load_config_file(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace dvlnav::io
