#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "perturbvamp/harness.hpp"

namespace pvamp {

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace cli_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw config_error("config: bad numeric value for '" + key + "': " + v);
  }
}

inline long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long d = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw config_error("config: bad integer value for '" + key + "': " + v);
  }
}

inline SolveMode parse_mode(const std::string& v) {
  if (v == "oracle") return SolveMode::Oracle;
  if (v == "pi") return SolveMode::PI;
  if (v == "pc") return SolveMode::PC;
  throw config_error("config: unknown mode '" + v + "' (expected oracle|pi|pc)");
}

inline PerturbKind parse_kind(const std::string& v) {
  if (v == "generic") return PerturbKind::GenericBasis;
  if (v == "iid") return PerturbKind::IID;
  if (v == "circulant") return PerturbKind::Circulant;
  if (v == "matrix_restricted") return PerturbKind::MatrixRestricted;
  throw config_error("config: unknown perturbation.kind '" + v + "'");
}

inline std::vector<SolveMode> parse_modes(const std::string& v) {
  std::vector<SolveMode> modes;
  for (const auto& tok : split(v, ','))
    if (!tok.empty()) modes.push_back(parse_mode(tok));
  if (modes.empty()) throw config_error("config: empty mode list");
  return modes;
}

}  // namespace cli_detail

/// Flat key = value experiment description. Unknown keys are rejected;
/// omitted keys fall back to defaults and are reported through `defaulted`.
struct ConfigFile {
  ExperimentSpec spec;
  std::vector<std::string> defaulted;

  static const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys = {
        "n",         "ratio", "rho",  "mu_x",  "sigma_x2",  "perturbation.kind",
        "snr_w_db",  "snr_e_db", "trials", "seed", "modes", "max_iters",
        "gamma1_init", "damping", "coeff_path"};
    return keys;
  }

  static ConfigFile parse(std::istream& in) {
    using namespace cli_detail;
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw config_error("config: line " + std::to_string(lineno) + " is not key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      if (std::find(known_keys().begin(), known_keys().end(), key) == known_keys().end())
        throw config_error("config: unknown key '" + key + "'");
      if (kv.count(key)) throw config_error("config: duplicate key '" + key + "'");
      if (val.empty()) throw config_error("config: empty value for '" + key + "'");
      kv[key] = val;
    }

    ConfigFile cfg;
    ExperimentSpec& s = cfg.spec;
    auto take = [&](const char* key) -> std::optional<std::string> {
      auto it = kv.find(key);
      if (it == kv.end()) {
        cfg.defaulted.push_back(key);
        return std::nullopt;
      }
      return it->second;
    };

    if (auto v = take("n")) s.n = static_cast<Index>(parse_int("n", *v));
    if (auto v = take("ratio")) s.measurement_ratio = parse_double("ratio", *v);
    if (auto v = take("rho")) s.rho = parse_double("rho", *v);
    if (auto v = take("mu_x")) s.mu_x = parse_double("mu_x", *v);
    if (auto v = take("sigma_x2")) s.sigma_x2 = parse_double("sigma_x2", *v);
    if (auto v = take("perturbation.kind")) s.kind = parse_kind(*v);
    if (auto v = take("snr_w_db")) s.snr_w_db = parse_double("snr_w_db", *v);
    if (auto v = take("snr_e_db")) {
      s.snr_e_db.clear();
      for (const auto& tok : split(*v, ','))
        if (!tok.empty()) s.snr_e_db.push_back(parse_double("snr_e_db", tok));
      if (s.snr_e_db.empty()) throw config_error("config: empty snr_e_db list");
    }
    if (auto v = take("trials")) s.trials = static_cast<int>(parse_int("trials", *v));
    if (auto v = take("seed")) s.seed = static_cast<std::uint64_t>(parse_int("seed", *v));
    if (auto v = take("modes")) s.modes = parse_modes(*v);
    if (auto v = take("max_iters")) s.max_iters = static_cast<int>(parse_int("max_iters", *v));
    if (auto v = take("gamma1_init")) s.gamma1_init = parse_double("gamma1_init", *v);
    if (auto v = take("damping")) s.damping = parse_double("damping", *v);
    if (auto v = take("coeff_path")) s.coeff_path = *v;

    try {
      s.validate();
    } catch (const std::exception& err) {
      throw config_error(std::string("config: ") + err.what());
    }
    return cfg;
  }

  static ConfigFile parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("config: cannot open " + path);
    return parse(in);
  }
};

inline std::string describe_spec(const ExperimentSpec& s) {
  std::ostringstream os;
  os << "n = " << s.n << '\n'
     << "ratio = " << detail::fmt_g6(s.measurement_ratio) << '\n'
     << "rho = " << detail::fmt_g6(s.rho) << '\n'
     << "mu_x = " << detail::fmt_g6(s.mu_x) << '\n'
     << "sigma_x2 = " << detail::fmt_g6(s.sigma_x2) << '\n'
     << "perturbation.kind = " << to_string(s.kind) << '\n'
     << "snr_w_db = " << detail::fmt_g6(s.snr_w_db) << '\n';
  os << "snr_e_db = ";
  for (std::size_t i = 0; i < s.snr_e_db.size(); ++i)
    os << (i ? "," : "") << detail::fmt_g6(s.snr_e_db[i]);
  os << '\n'
     << "trials = " << s.trials << '\n'
     << "seed = " << s.seed << '\n';
  os << "modes = ";
  for (std::size_t i = 0; i < s.modes.size(); ++i) os << (i ? "," : "") << to_string(s.modes[i]);
  os << '\n'
     << "max_iters = " << s.max_iters << '\n'
     << "gamma1_init = " << detail::fmt_g6(s.gamma1_init) << '\n'
     << "damping = " << detail::fmt_g6(s.damping) << '\n'
     << "coeff_path = " << (s.coeff_path.empty() ? "(none)" : s.coeff_path) << '\n';
  return os.str();
}

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::vector<SolveMode>> modes;
  int threads = 1;
};

/// Exit codes: 0 success, 2 config error, 3 every run diverged, 4 I/O error.
inline int cmd_run(const std::string& config_path, const std::string& out_dir,
                   const CliOverrides& overrides = {}, std::ostream& log = std::cout) {
  ConfigFile cfg;
  try {
    cfg = ConfigFile::parse_file(config_path);
  } catch (const config_error& err) {
    log << "error: " << err.what() << '\n';
    return 2;
  }
  for (const auto& key : cfg.defaulted) log << "note: '" << key << "' not set, using default\n";
  if (overrides.seed) cfg.spec.seed = *overrides.seed;
  if (overrides.modes) cfg.spec.modes = *overrides.modes;
  cfg.spec.name = std::filesystem::path(config_path).stem().string();

  ExperimentResult result;
  try {
    result = run_experiment(cfg.spec, overrides.threads);
  } catch (const std::exception& err) {
    log << "error: " << err.what() << '\n';
    return 2;
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    log << "error: cannot create " << out_dir << ": " << ec.message() << '\n';
    return 4;
  }
  const auto write = [&](const std::string& file, auto&& writer) {
    std::ofstream os(std::filesystem::path(out_dir) / file, std::ios::binary);
    if (!os) return false;
    writer(os);
    return static_cast<bool>(os);
  };
  const bool ok =
      write("trace.csv", [&](std::ostream& os) { write_trace_csv(os, result); }) &&
      write("aggregate.csv", [&](std::ostream& os) { write_aggregate_csv(os, result); }) &&
      write("manifest.txt", [&](std::ostream& os) {
        os << "perturbvamp " << PERTURBVAMP_VERSION << '\n'
           << "experiment = " << result.spec.name << '\n'
           << describe_spec(result.spec);
      });
  if (!ok) {
    log << "error: failed writing results under " << out_dir << '\n';
    return 4;
  }

  if (result.all_diverged()) {
    log << "error: every trial diverged; no aggregate is available\n";
    return 3;
  }
  int diverged = 0;
  for (const auto& row : result.aggregate) diverged += row.diverged;
  log << "wrote " << out_dir << "/trace.csv, aggregate.csv, manifest.txt";
  if (diverged > 0) log << " (" << diverged << " diverged runs excluded)";
  log << '\n';
  return 0;
}

/// Single-realization comparison at the reference setting (N = 512, M = N/2,
/// Gaussian family with q = N, SNR_w = 30 dB, SNR_e = 20 dB): prints the
/// per-iteration NMSE of each requested mode.
inline int cmd_demo(std::uint64_t seed = 1,
                    std::vector<SolveMode> modes = {SolveMode::Oracle, SolveMode::PI, SolveMode::PC},
                    int threads = 1, std::ostream& os = std::cout) {
  ExperimentSpec spec;
  spec.name = "demo";
  spec.n = 512;
  spec.measurement_ratio = 0.5;
  spec.kind = PerturbKind::GenericBasis;
  spec.snr_w_db = 30.0;
  spec.snr_e_db = {20.0};
  spec.trials = 1;
  spec.seed = seed;
  spec.modes = std::move(modes);
  spec.max_iters = 60;

  ExperimentResult result;
  try {
    result = run_experiment(spec, threads);
  } catch (const std::exception& err) {
    os << "error: " << err.what() << '\n';
    return 2;
  }
  const TrialResult& trial = result.trials.front();

  os << "single realization: n = " << spec.n << ", m = " << spec.rows()
     << ", snr_w = " << detail::fmt_g6(spec.snr_w_db) << " dB, snr_e = "
     << detail::fmt_g6(spec.snr_e_db.front()) << " dB, seed = " << spec.seed << "\n\n";
  os << "  iter";
  for (const ModeRun& run : trial.runs) os << "  " << std::setw(9) << to_string(run.mode);
  os << '\n';
  char buf[32];
  for (int k = 0; k < spec.max_iters; ++k) {
    os << std::setw(6) << (k + 1);
    for (const ModeRun& run : trial.runs) {
      if (run.diverged || static_cast<std::size_t>(k) >= run.records.size()) {
        os << "  " << std::setw(9) << (run.diverged ? "diverged" : "-");
      } else {
        std::snprintf(buf, sizeof(buf), "%9.3f", run.records[static_cast<std::size_t>(k)].nmse_db);
        os << "  " << buf;
      }
    }
    os << '\n';
  }
  os << "\nfinal NMSE [dB]:";
  bool all_diverged = true;
  for (const ModeRun& run : trial.runs) {
    os << ' ' << to_string(run.mode) << " = "
       << (run.diverged ? "diverged" : detail::fmt_g6(run.final_nmse_db));
    all_diverged &= run.diverged;
  }
  os << '\n';
  return all_diverged ? 3 : 0;
}

}  // namespace pvamp
