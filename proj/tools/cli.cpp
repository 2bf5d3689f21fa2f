// Copyright 2026 The fedrem Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <tuple>

#include <CLI11.hpp>

#include "fedrem/config.hpp"
#include "fedrem/data.hpp"
#include "fedrem/errors.hpp"
#include "fedrem/federation.hpp"
#include "fedrem/io_util.hpp"
#include "fedrem/metrics.hpp"
#include "fedrem/run_io.hpp"

namespace fedrem::cli {

namespace fs = std::filesystem;

namespace {

GridFormat format_for(const fs::path& p) { return p.extension() == ".csv" ? GridFormat::Csv : GridFormat::Binary; }

std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::vector<double> parse_list(const std::string& text, const char* flag) {
  std::vector<double> values;
  for (auto part : split(text, ',')) {
    auto v = parse_number<double>(trim(part));
    if (!v) throw ConfigError(std::string(flag) + ": malformed value '" + std::string(part) + "'");
    values.push_back(*v);
  }
  return values;
}

std::vector<bool> parse_switch_list(const std::string& text) {
  std::vector<bool> values;
  for (auto part : split(text, ',')) {
    part = trim(part);
    if (part == "on") {
      values.push_back(true);
    } else if (part == "off") {
      values.push_back(false);
    } else {
      throw ConfigError("--quantization: expected on/off, got '" + std::string(part) + "'");
    }
  }
  return values;
}

// Options shared by train and sweep.
struct RunOptions {
  std::string partition;
  std::string config;
  std::string preset = "default";
  std::vector<std::string> ablate;
  std::vector<std::string> set;
  std::optional<std::uint64_t> seed;
  std::optional<int> rounds;
  std::optional<int> threads;
  std::string output;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--partition", partition, "Partition directory");
    cmd->add_option("--config", config, "key=value config file");
    cmd->add_option("--preset", preset, "Preset (default, desk)");
    cmd->add_option("--ablate", ablate,
                    "Disable a feature: no-split-head, no-periodic-sync, no-top-k, no-quantization, no-ema");
    cmd->add_option("--set", set, "Override one config key (key=value)");
    cmd->add_option("--seed", seed, "Training seed");
    cmd->add_option("--rounds", rounds, "Communication rounds")->check(CLI::NonNegativeNumber);
    cmd->add_option("--threads", threads, "Client worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("-o,--output", output, "Output directory");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig cfg = fedrem::preset(preset);
    if (!config.empty()) cfg = load_config_file(config, cfg);
    for (const auto& kv : set) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      apply_setting(cfg, trim(std::string_view(kv).substr(0, eq)), std::string_view(kv).substr(eq + 1));
    }
    for (const auto& a : ablate) apply_ablation(cfg.run, a);
    if (seed) cfg.run.seed = *seed;
    if (rounds) cfg.run.rounds = *rounds;
    if (threads) cfg.run.threads = *threads;
    if (!partition.empty()) cfg.partition_dir = partition;
    if (!output.empty()) cfg.output_dir = output;
    return cfg;
  }
};

ScenarioPartition load_for(ExperimentConfig& cfg) {
  if (cfg.partition_dir.empty()) throw ConfigError("no partition given (--partition or partition=)");
  ScenarioPartition part = load_partition(cfg.partition_dir);
  cfg.scenario = to_string(part.scenario);
  cfg.client_rows = part.rows;
  cfg.client_cols = part.cols;
  cfg.partition_seed = part.seed;
  cfg.neighbor_mix = part.neighbor_mix;
  cfg.test_fraction = part.test_fraction;
  return part;
}

void print_summary(std::ostream& out, const ExperimentConfig& cfg, const TrainingResult& result) {
  const auto& last = result.log.back();
  out << "mode=" << to_string(cfg.run.mode) << " scenario=" << cfg.scenario << " rounds=" << last.round
      << " rmse_micro=" << fmt(last.metrics.rmse_micro) << " rmse_macro=" << fmt(last.metrics.rmse_macro)
      << " mae_macro=" << fmt(last.metrics.mae_macro) << " uplink_mb=" << fmt(to_megabytes(last.cum_uplink_bytes), 6)
      << "\n";
}

int cmd_gen_data(std::uint64_t seed, int size, int bs, int features, double obstacles, const std::string& output,
                 std::ostream& out) {
  SyntheticMapConfig cfg;
  cfg.seed = seed;
  cfg.width = size;
  cfg.height = size;
  cfg.num_bs = bs;
  cfg.num_features = features;
  cfg.obstacle_density = obstacles;
  const RadioMapGrid map = generate_synthetic_map(cfg);
  const fs::path path(output);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (format_for(path) == GridFormat::Csv) {
    write_grid_csv(map, path);
  } else {
    write_grid(map, path);
  }
  out << "wrote " << output << " (" << size << "x" << size << ", M=" << bs << ", P=" << features << ")\n";
  return kExitOk;
}

int cmd_partition(const std::string& input, const std::string& scenario, const std::string& clients,
                  std::uint64_t seed, double mix, double test_fraction, bool per_bs_stats, const std::string& output,
                  std::ostream& out) {
  PartitionConfig cfg;
  const auto x = clients.find('x');
  auto r = x == std::string::npos ? std::nullopt : parse_number<int>(std::string_view(clients).substr(0, x));
  auto c = x == std::string::npos ? std::nullopt : parse_number<int>(std::string_view(clients).substr(x + 1));
  if (!r || !c || *r < 1 || *c < 1) throw ConfigError("--clients expects RxC, got '" + clients + "'");
  cfg.rows = *r;
  cfg.cols = *c;
  cfg.seed = seed;
  cfg.neighbor_mix = mix;
  cfg.test_fraction = test_fraction;
  cfg.per_bs_stats = per_bs_stats;
  const Scenario sc = parse_scenario(scenario);
  if (!fs::exists(input)) throw IngestError("grid file not found: " + input);
  const RadioMapGrid map = ingest_grid(input, format_for(input));
  const ScenarioPartition part = build_partition(map, sc, cfg);
  export_partition(part, output);
  out << "wrote " << part.clients.size() << " clients (" << scenario << ") to " << output << "\n";
  return kExitOk;
}

int cmd_train(const RunOptions& opts, const std::string& mode, bool print_config, std::ostream& out) {
  ExperimentConfig cfg = opts.resolve();
  if (!mode.empty()) cfg.run.mode = parse_mode(mode);
  if (print_config) {
    out << config_to_text(cfg);
    return kExitOk;
  }
  cfg.run.validate();
  if (cfg.output_dir.empty()) throw ConfigError("no output directory given (-o or output=)");
  ScenarioPartition part = load_for(cfg);
  const TrainingResult result = run_training(part, cfg.run);
  write_run_dir(cfg.output_dir, cfg, result);
  print_summary(out, cfg, result);
  return kExitOk;
}

std::string sweep_label(double density, int period, bool quantization) {
  return "rho=" + format_number(density) + "_R=" + std::to_string(period) + "_q=" + (quantization ? "on" : "off");
}

int cmd_sweep(const RunOptions& opts, const std::string& densities, const std::string& periods,
              const std::string& quantization, std::ostream& out, std::ostream& err) {
  ExperimentConfig base = opts.resolve();
  base.run.mode = Mode::Epfl;
  if (base.output_dir.empty()) throw ConfigError("no output directory given (-o or output=)");
  const auto rho = parse_list(densities, "--density");
  std::vector<int> R;
  for (double p : parse_list(periods, "--period")) {
    if (p != static_cast<int>(p)) throw ConfigError("--period expects integers");
    R.push_back(static_cast<int>(p));
  }
  const auto q = parse_switch_list(quantization);
  if (rho.empty() || R.empty() || q.empty()) throw ConfigError("sweep grid is empty");

  ScenarioPartition part = load_for(base);
  std::vector<ParetoPoint> points;
  int failures = 0;
  for (double d : rho) {
    for (int p : R) {
      for (bool quant : q) {
        ExperimentConfig cfg = base;
        cfg.run.density = d;
        cfg.run.sync_period = p;
        cfg.run.features.quantization = quant;
        const std::string label = sweep_label(d, p, quant);
        cfg.output_dir = (fs::path(base.output_dir) / label).string();
        try {
          cfg.run.validate();
          const TrainingResult result = run_training(part, cfg.run);
          write_run_dir(cfg.output_dir, cfg, result);
          const auto& last = result.log.back();
          points.push_back({label, last.metrics.rmse_macro, to_megabytes(last.cum_uplink_bytes)});
          out << label << " rmse_macro=" << fmt(last.metrics.rmse_macro)
              << " uplink_mb=" << fmt(to_megabytes(last.cum_uplink_bytes), 6) << "\n";
        } catch (const std::exception& e) {
          ++failures;
          err << "warning: sweep cell " << label << " failed: " << e.what() << "\n";
        }
      }
    }
  }
  if (points.empty()) {
    err << "error: every sweep cell failed\n";
    return kExitRuntime;
  }
  const fs::path csv = fs::path(base.output_dir) / "pareto.csv";
  write_pareto_csv(points, csv);
  out << "frontier:";
  for (const auto& p : pareto_frontier(points)) out << " " << p.label;
  out << "\nwrote " << csv.string() << " (" << points.size() << " points, " << failures << " failed)\n";
  return kExitOk;
}

struct ReportRow {
  std::string label;
  std::string scenario;
  std::string mode;
  double rmse_micro;
  double rmse_macro;
  double mae_macro;
  double uplink_mb;
  double bs_range;
};

int scenario_rank(const std::string& s) {
  try {
    return static_cast<int>(parse_scenario(s));
  } catch (const ConfigError&) {
    return 3;
  }
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& csv_path, std::ostream& out,
               std::ostream& err) {
  std::vector<ReportRow> rows;
  for (const auto& dir : dirs) {
    const std::string log_path = (fs::path(dir) / kRoundLogFile).string();
    std::vector<LoggedRound> log;
    try {
      log = read_round_log(log_path);
    } catch (const MissingColumnError&) {
      throw;
    } catch (const Error& e) {
      err << "warning: skipping " << dir << ": " << e.what() << "\n";
      continue;
    }
    if (log.empty()) {
      err << "warning: skipping " << dir << ": round log has no rows\n";
      continue;
    }
    const auto& last = log.back();
    const auto [lo, hi] = std::minmax_element(last.rmse_bs.begin(), last.rmse_bs.end());
    std::string label = fs::path(dir).lexically_normal().filename().string();
    if (label.empty()) label = fs::path(dir).lexically_normal().parent_path().filename().string();
    rows.push_back({label, last.scenario, last.mode, last.rmse_micro, last.rmse_macro, last.mae_macro,
                    last.cum_uplink_mb, *hi - *lo});
  }
  if (rows.empty()) {
    err << "error: no readable runs\n";
    return kExitData;
  }
  std::sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    return std::tuple(scenario_rank(a.scenario), a.scenario, a.mode, a.label) <
           std::tuple(scenario_rank(b.scenario), b.scenario, b.mode, b.label);
  });

  char line[256];
  std::snprintf(line, sizeof line, "%-8s %-7s %-24s %10s %10s %10s %12s %10s\n", "scenario", "mode", "run",
                "rmse_micro", "rmse_macro", "mae_macro", "uplink_mb", "bs_range");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-8s %-7s %-24s %10.4f %10.4f %10.4f %12.6f %10.4f\n", r.scenario.c_str(),
                  r.mode.c_str(), r.label.c_str(), r.rmse_micro, r.rmse_macro, r.mae_macro, r.uplink_mb, r.bs_range);
    out << line;
  }

  if (!csv_path.empty()) {
    std::string csv = "run,scenario,mode,rmse_micro,rmse_macro,mae_macro,uplink_mb,bs_rmse_range\n";
    for (const auto& r : rows) {
      csv += r.label + "," + r.scenario + "," + r.mode + "," + format_number(r.rmse_micro) + "," +
             format_number(r.rmse_macro) + "," + format_number(r.mae_macro) + "," + format_number(r.uplink_mb) +
             "," + format_number(r.bs_range) + "\n";
    }
    const fs::path p(csv_path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!(f << csv)) throw IngestError("cannot write " + csv_path);
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated radio-map simulator"};
  app.name("fedrem");
  app.require_subcommand(1);

  std::uint64_t gen_seed = 1;
  int gen_size = 256;
  int gen_bs = 4;
  int gen_features = 100;
  double gen_obstacles = 0.15;
  std::string gen_output;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic radio map (REMG1, or CSV for .csv paths)");
  gen->add_option("--seed", gen_seed, "Map seed");
  gen->add_option("--size", gen_size, "Grid width and height")->check(CLI::PositiveNumber);
  gen->add_option("--bs", gen_bs, "Number of base stations")->check(CLI::PositiveNumber);
  gen->add_option("--features", gen_features, "Feature layers P")->check(CLI::PositiveNumber);
  gen->add_option("--obstacle-density", gen_obstacles, "Obstacle cover fraction")->check(CLI::Range(0.0, 1.0));
  gen->add_option("-o,--output", gen_output, "Output grid file")->required();

  std::string part_input;
  std::string part_scenario;
  std::string part_clients = "10x9";
  std::uint64_t part_seed = 1;
  double part_mix = 0.1;
  double part_test = 0.2;
  bool part_per_bs = false;
  std::string part_output;
  auto* partition = app.add_subcommand("partition", "Split one scenario of a grid into client datasets");
  partition->add_option("grid", part_input, "Grid file (REMG1 or .csv)")->required();
  partition->add_option("--scenario", part_scenario, "light, medium or heavy")->required();
  partition->add_option("--clients", part_clients, "Client grid RxC");
  partition->add_option("--seed", part_seed, "Partition seed");
  partition->add_option("--neighbor-mix", part_mix, "Fraction exchanged with neighbouring tiles");
  partition->add_option("--test-fraction", part_test, "Per-client test share");
  partition->add_flag("--per-bs-stats", part_per_bs, "Standardize each base station's labels separately");
  partition->add_option("-o,--output", part_output, "Output directory")->required();

  RunOptions train_opts;
  std::string train_mode;
  bool print_config = false;
  auto* train = app.add_subcommand("train", "Run one federated training job");
  train_opts.add_to(train);
  train->add_option("--mode", train_mode, "epfl or fedavg");
  train->add_flag("--print-config", print_config, "Print the resolved config and exit");

  RunOptions sweep_opts;
  std::string sweep_density = "0.005,0.01,0.05,1";
  std::string sweep_period = "5";
  std::string sweep_quant = "on";
  auto* sweep = app.add_subcommand("sweep", "Run a density/period/quantization grid and write pareto.csv");
  sweep_opts.add_to(sweep);
  sweep->add_option("--density", sweep_density, "Comma-separated densities");
  sweep->add_option("--period", sweep_period, "Comma-separated sync periods");
  sweep->add_option("--quantization", sweep_quant, "Comma-separated on/off");

  std::vector<std::string> report_dirs;
  std::string report_csv;
  auto* report = app.add_subcommand("report", "Summarize run directories");
  report->add_option("runs", report_dirs, "Run directories")->required();
  report->add_option("-o,--output", report_csv, "CSV output path");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(gen_seed, gen_size, gen_bs, gen_features, gen_obstacles, gen_output, out);
    if (*partition) {
      return cmd_partition(part_input, part_scenario, part_clients, part_seed, part_mix, part_test, part_per_bs,
                           part_output, out);
    }
    if (*train) return cmd_train(train_opts, train_mode, print_config, out);
    if (*sweep) return cmd_sweep(sweep_opts, sweep_density, sweep_period, sweep_quant, out, err);
    if (*report) return cmd_report(report_dirs, report_csv, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IngestError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const DegenerateClientError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace fedrem::cli
