#include "dvlnav/dataio.hpp"

#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <json.hpp>
#include <sstream>

#include "dvlnav/error.hpp"

namespace dvlnav::io {

namespace fs = std::filesystem;

const std::vector<std::string> kImuColumns = {"t_s", "gyro_x", "gyro_y", "gyro_z", "accel_x", "accel_y", "accel_z"};
const std::vector<std::string> kDvlColumns = {"t_s", "y_x", "y_y", "y_z"};
const std::vector<std::string> kTruthColumns = {"t_s", "lon_rad", "lat_rad", "h_m", "vN",
                                                "vU",  "vE",      "roll",    "pitch", "yaw"};

std::string format_double(double v) {
  std::array<char, 32> buf;
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (s.empty() || res.ec != std::errc() || res.ptr != last) {
    throw Error(ErrorCode::ParseError, "not a number: '" + std::string(s) + "'");
  }
  return v;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  for (;;) {
    const auto next = s.find(sep, pos);
    out.push_back(s.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

std::string join(const std::vector<std::string>& items, char sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

Table read_checked(const fs::path& path, const std::vector<std::string>& columns) {
  Table t = read_table(path);
  if (t.columns != columns) {
    throw Error(ErrorCode::ParseError, path.string() + ": expected columns '" + join(columns, ',') + "', found '" +
                                           join(t.columns, ',') + "'");
  }
  return t;
}

}  // namespace

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileNotFound, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

void write_table(const fs::path& path, const Table& table) {
  std::string text;
  for (const auto& c : table.comments) text += "# " + c + "\n";
  text += join(table.columns, ',') + "\n";
  for (const auto& row : table.rows) {
    if (row.size() != table.columns.size()) {
      throw Error(ErrorCode::IoError, path.string() + ": row width does not match the header");
    }
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) text += ',';
      text += format_double(row[i]);
    }
    text += '\n';
  }
  write_text(path, text);
}

Table read_table(const fs::path& path) {
  const std::string text = read_text(path);
  Table t;
  std::size_t line_no = 0;
  bool have_header = false;
  for (std::string_view rest = text; !rest.empty();) {
    const auto nl = rest.find('\n');
    std::string_view line = rest.substr(0, nl);
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (!have_header && line.starts_with("#")) {
      line.remove_prefix(1);
      if (line.starts_with(" ")) line.remove_prefix(1);
      t.comments.emplace_back(line);
      continue;
    }
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    if (!have_header) {
      for (auto f : fields) t.columns.emplace_back(trim(f));
      have_header = true;
      continue;
    }
    if (fields.size() != t.columns.size()) {
      throw Error(ErrorCode::ParseError, where + ": expected " + std::to_string(t.columns.size()) + " fields, found " +
                                             std::to_string(fields.size()));
    }
    std::vector<double> row;
    row.reserve(fields.size());
    for (auto f : fields) {
      try {
        row.push_back(parse_double(trim(f)));
      } catch (const Error&) {
        throw Error(ErrorCode::ParseError, where + ": not a number: '" + std::string(f) + "'");
      }
    }
    t.rows.push_back(std::move(row));
  }
  if (!have_header) throw Error(ErrorCode::ParseError, path.string() + ": missing header row");
  return t;
}

void write_imu(const fs::path& path, std::span<const ins::ImuSample> imu, const std::vector<std::string>& comments) {
  Table t{comments, kImuColumns, {}};
  t.rows.reserve(imu.size());
  for (const auto& s : imu) {
    t.rows.push_back({s.time, s.gyro.x(), s.gyro.y(), s.gyro.z(), s.accel.x(), s.accel.y(), s.accel.z()});
  }
  write_table(path, t);
}

std::vector<ins::ImuSample> read_imu(const fs::path& path) {
  const Table t = read_checked(path, kImuColumns);
  std::vector<ins::ImuSample> out;
  out.reserve(t.rows.size());
  for (const auto& r : t.rows) out.push_back({r[0], Vec3(r[1], r[2], r[3]), Vec3(r[4], r[5], r[6])});
  return out;
}

void write_dvl(const fs::path& path, std::span<const sim::DvlSample> dvl, const std::vector<std::string>& comments) {
  Table t{comments, kDvlColumns, {}};
  t.rows.reserve(dvl.size());
  for (const auto& s : dvl) t.rows.push_back({s.time, s.velocity.x(), s.velocity.y(), s.velocity.z()});
  write_table(path, t);
}

std::vector<sim::DvlSample> read_dvl(const fs::path& path) {
  const Table t = read_checked(path, kDvlColumns);
  std::vector<sim::DvlSample> out;
  out.reserve(t.rows.size());
  for (const auto& r : t.rows) out.push_back({r[0], Vec3(r[1], r[2], r[3])});
  return out;
}

std::vector<TruthRow> truth_rows(const sim::TruthSeries& truth) {
  std::vector<TruthRow> out;
  out.reserve(truth.ticks.size());
  for (const auto& tick : truth.ticks) {
    const auto& n = tick.nav;
    out.push_back({n.time, n.pos, n.v_n, att::dcm_to_euler(n.c_b_n.transpose())});
  }
  return out;
}

sim::TruthSeries truth_series(std::span<const TruthRow> rows) {
  sim::TruthSeries s;
  if (rows.size() >= 2) s.rate = 1.0 / (rows[1].time - rows[0].time);
  s.ticks.reserve(rows.size());
  for (const auto& r : rows) {
    sim::TruthRecord rec;
    rec.nav.time = r.time;
    rec.nav.pos = r.pos;
    rec.nav.v_n = r.v_n;
    rec.nav.c_b_n = att::euler_to_dcm(r.euler).transpose();
    s.ticks.push_back(rec);
  }
  return s;
}

void write_truth(const fs::path& path, std::span<const TruthRow> rows, const std::vector<std::string>& comments) {
  Table t{comments, kTruthColumns, {}};
  t.rows.reserve(rows.size());
  for (const auto& r : rows) {
    t.rows.push_back({r.time, r.pos.lon, r.pos.lat, r.pos.height, r.v_n.x(), r.v_n.y(), r.v_n.z(), r.euler.roll,
                      r.euler.pitch, r.euler.yaw});
  }
  write_table(path, t);
}

std::vector<TruthRow> read_truth(const fs::path& path) {
  const Table t = read_checked(path, kTruthColumns);
  std::vector<TruthRow> out;
  out.reserve(t.rows.size());
  for (const auto& r : t.rows) {
    out.push_back({r[0], {r[1], r[2], r[3]}, Vec3(r[4], r[5], r[6]), {r[7], r[8], r[9]}});
  }
  return out;
}

std::vector<std::string> estimate_history_columns(bool with_error) {
  std::vector<std::string> cols{"t_s"};
  for (const char* n : ekf::kStateNames) cols.emplace_back(n);
  for (const char* n : ekf::kStateNames) cols.push_back(std::string("sigma_") + n);
  if (with_error) {
    for (const char* n : ekf::kStateNames) cols.push_back(std::string("err_") + n);
  }
  return cols;
}

void write_estimate_history(const fs::path& path, std::span<const ekf::HistoryRecord> history,
                            const std::vector<std::string>& comments) {
  bool with_error = !history.empty();
  for (const auto& h : history) with_error = with_error && h.error.has_value();
  Table t{comments, estimate_history_columns(with_error), {}};
  t.rows.reserve(history.size());
  for (const auto& h : history) {
    std::vector<double> row{h.time};
    row.insert(row.end(), h.estimate.data(), h.estimate.data() + ekf::kStates);
    row.insert(row.end(), h.sigma.data(), h.sigma.data() + ekf::kStates);
    if (with_error) row.insert(row.end(), h.error->data(), h.error->data() + ekf::kStates);
    t.rows.push_back(std::move(row));
  }
  write_table(path, t);
}

std::vector<ekf::HistoryRecord> read_estimate_history(const fs::path& path) {
  Table t = read_table(path);
  const bool with_error = t.columns == estimate_history_columns(true);
  if (!with_error && t.columns != estimate_history_columns(false)) {
    throw Error(ErrorCode::ParseError, path.string() + ": not an estimate history header");
  }
  std::vector<ekf::HistoryRecord> out;
  out.reserve(t.rows.size());
  for (const auto& r : t.rows) {
    ekf::HistoryRecord h;
    h.time = r[0];
    h.estimate = Eigen::Map<const ekf::StateVec>(r.data() + 1);
    h.sigma = Eigen::Map<const ekf::StateVec>(r.data() + 1 + ekf::kStates);
    if (with_error) h.error = ekf::StateVec(Eigen::Map<const ekf::StateVec>(r.data() + 1 + 2 * ekf::kStates));
    out.push_back(std::move(h));
  }
  return out;
}

// --- config ---------------------------------------------------------------

ConfigMap parse_key_value(std::string_view text, const std::string& source) {
  ConfigMap out;
  std::string section;
  std::size_t line_no = 0;
  for (std::string_view rest = text; !rest.empty();) {
    const auto nl = rest.find('\n');
    std::string_view line = rest.substr(0, nl);
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw Error(ErrorCode::InvalidConfig, where + ": bad section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw Error(ErrorCode::InvalidConfig, where + ": expected 'key = value'");
    const std::string_view key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(ErrorCode::InvalidConfig, where + ": empty key");
    const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
    if (out.count(full)) {
      throw Error(ErrorCode::InvalidConfig, where + ": duplicate key '" + full + "' (first at " + out[full].origin + ")");
    }
    out[full] = {std::string(trim(line.substr(eq + 1))), where};
  }
  return out;
}

namespace {

std::string scalar_text(const nlohmann::json& j, const std::string& where) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_boolean()) return j.get<bool>() ? "true" : "false";
  if (j.is_number_integer() || j.is_number_unsigned()) return j.dump();
  if (j.is_number_float()) return format_double(j.get<double>());
  throw Error(ErrorCode::InvalidConfig, where + ": unsupported JSON value " + j.dump());
}

void flatten(const nlohmann::json& j, const std::string& prefix, const std::string& source, ConfigMap& out) {
  for (const auto& [key, value] : j.items()) {
    const std::string full = prefix.empty() ? key : prefix + "." + key;
    const std::string where = source + ":" + full;
    if (value.is_object()) {
      flatten(value, full, source, out);
    } else if (value.is_array()) {
      std::string text;
      for (std::size_t i = 0; i < value.size(); ++i) {
        if (i) text += ',';
        text += scalar_text(value[i], where);
      }
      out[full] = {text, where};
    } else {
      out[full] = {scalar_text(value, where), where};
    }
  }
}

}  // namespace

ConfigMap parse_json(std::string_view text, const std::string& source) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig, source + ": " + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, source + ": top level must be an object");
  ConfigMap out;
  flatten(j, "", source, out);
  return out;
}

ConfigMap load_config_file(const fs::path& path) {
  const std::string text = read_text(path);
  if (path.extension() == ".json") return parse_json(text, path.string());
  return parse_key_value(text, path.string());
}

std::string sha256_hex(std::string_view data) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), md.data(), &len) != 1) {
    throw Error(ErrorCode::IoError, "SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 0xF];
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text(path)); }

}  // namespace dvlnav::io
