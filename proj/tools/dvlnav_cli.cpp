// dvlnav: command-line front end for the IMU/DVL navigation workbench.
//
// Exit codes: 0 success, 1 invalid input or config, 2 runtime/numerical failure.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dvlnav/error.hpp"
#include "dvlnav/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dvlnav;

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> config;
  std::string out_dir = "out";
};

struct InputFlags {
  std::optional<std::string> imu, dvl, truth;

  pipeline::Inputs get() const {
    pipeline::Inputs in;
    if (imu) in.imu = *imu;
    if (dvl) in.dvl = *dvl;
    if (truth) in.truth = *truth;
    return in;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed (overrides scenario.seed)");
  cmd->add_option("--config", c.config, "Scenario config (key = value, or .json)");
  cmd->add_option("--out-dir", c.out_dir, "Output directory")->capture_default_str();
}

void add_inputs(CLI::App* cmd, InputFlags& in, bool truth) {
  cmd->add_option("--imu", in.imu, "imu.csv (simulated from the config when omitted)");
  cmd->add_option("--dvl", in.dvl, "dvl.csv");
  if (truth) cmd->add_option("--truth", in.truth, "truth.csv, for error columns");
}

// "1-20", "3", or "1,4,9".
std::vector<std::uint64_t> parse_seeds(const std::string& spec) {
  std::vector<std::uint64_t> out;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    const auto comma = spec.find(',', pos);
    const std::string item = spec.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      const auto dash = item.find('-');
      std::size_t used = 0;
      if (dash == std::string::npos) {
        out.push_back(std::stoull(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } else {
        const auto a = std::stoull(item.substr(0, dash)), b = std::stoull(item.substr(dash + 1), &used);
        if (b < a || used != item.size() - dash - 1 || b - a > 10000) throw std::invalid_argument(item);
        for (auto s = a; s <= b; ++s) out.push_back(s);
      }
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::InvalidConfig, "bad --seeds entry '" + item + "'");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::vector<int> parse_figures(const std::vector<std::string>& items) {
  std::vector<int> out;
  for (const auto& item : items) {
    if (item == "all") {
      for (int i = pipeline::kFirstFigure; i <= pipeline::kLastFigure; ++i) out.push_back(i);
      continue;
    }
    try {
      std::size_t used = 0;
      const int id = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(id);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::UnknownFigure, "'" + item + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IMU/DVL navigation workbench: simulation, DVL calibration, observability check, EKF"};
  app.require_subcommand(1);

  Common common;
  InputFlags inputs;
  std::vector<std::string> figures;
  std::optional<std::string> seeds;

  auto* simulate = app.add_subcommand("simulate", "Generate truth.csv, imu.csv and dvl.csv");
  auto* calibrate = app.add_subcommand("calibrate", "IO-DVLC scale and misalignment calibration");
  auto* ekf = app.add_subcommand("ekf", "Run the 19-state EKF and write estimate_history.csv");
  auto* check = app.add_subcommand("check", "Observability (Type I/II segment) report");
  auto* reproduce = app.add_subcommand("reproduce", "Write the data series behind the reference figures (1-16)");
  for (auto* cmd : {simulate, calibrate, ekf, check, reproduce}) add_common(cmd, common);
  add_inputs(calibrate, inputs, false);
  add_inputs(ekf, inputs, true);
  add_inputs(check, inputs, false);
  ekf->add_option("--seeds", seeds, "Batch over seeds, e.g. 1-20 or 1,5,9 (simulated inputs only)");
  reproduce->add_option("--figure", figures, "Figure id 1-16, or 'all' (repeatable)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    std::optional<fs::path> config_path;
    if (common.config) config_path = *common.config;
    const auto config = pipeline::load(config_path, common.seed);
    const fs::path out = common.out_dir;

    pipeline::RunReport report;
    if (*simulate) {
      report = pipeline::cmd_simulate(config, out);
    } else if (*calibrate) {
      report = pipeline::cmd_calibrate(config, inputs.get(), out);
    } else if (*ekf) {
      const auto batch = seeds ? parse_seeds(*seeds) : std::vector<std::uint64_t>{};
      report = pipeline::cmd_ekf(config, inputs.get(), out, batch);
    } else if (*check) {
      report = pipeline::cmd_check(config, inputs.get(), out);
    } else {
      report = pipeline::cmd_reproduce(config, parse_figures(figures), out);
    }
    std::cout << report.summary << "wrote " << report.manifest.size() << " file(s) and report.json to " << out.string()
              << " (config " << config.hash.substr(0, 12) << ", seed " << config.scenario.seed << ")\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "dvlnav: " << e.what() << "\n";
    return e.is_validation() ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "dvlnav: " << e.what() << "\n";
    return 2;
  }
}
