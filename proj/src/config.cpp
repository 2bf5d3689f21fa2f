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

#include "fedrem/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "fedrem/io_util.hpp"

namespace fedrem {

namespace {

bool parse_bool(std::string_view v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError("expected a boolean, got '" + std::string(v) + "'");
}

template <typename T>
T parse_value(std::string_view v) {
  auto x = parse_number<T>(v);
  if (!x) throw ConfigError("malformed value '" + std::string(v) + "'");
  return *x;
}

std::string b(bool v) { return v ? "1" : "0"; }

struct Field {
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
Field number(T ExperimentConfig::*m) {
  return {[m](ExperimentConfig& c, std::string_view v) { c.*m = parse_value<T>(v); },
          [m](const ExperimentConfig& c) { return format_number(c.*m); }};
}

template <typename T>
Field run_number(T RunConfig::*m) {
  return {[m](ExperimentConfig& c, std::string_view v) { c.run.*m = parse_value<T>(v); },
          [m](const ExperimentConfig& c) { return format_number(c.run.*m); }};
}

Field run_bool(bool RunConfig::*m) {
  return {[m](ExperimentConfig& c, std::string_view v) { c.run.*m = parse_bool(v); },
          [m](const ExperimentConfig& c) { return b(c.run.*m); }};
}

Field flag(bool FeatureFlags::*m) {
  return {[m](ExperimentConfig& c, std::string_view v) { c.run.features.*m = parse_bool(v); },
          [m](const ExperimentConfig& c) { return b(c.run.features.*m); }};
}

Field text(std::string ExperimentConfig::*m) {
  return {[m](ExperimentConfig& c, std::string_view v) { c.*m = std::string(v); },
          [m](const ExperimentConfig& c) { return c.*m; }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"mode",
       {[](ExperimentConfig& c, std::string_view v) { c.run.mode = parse_mode(v); },
        [](const ExperimentConfig& c) { return to_string(c.run.mode); }}},
      {"scenario",
       {[](ExperimentConfig& c, std::string_view v) { c.scenario = to_string(parse_scenario(v)); },
        [](const ExperimentConfig& c) { return c.scenario; }}},
      {"rounds", run_number(&RunConfig::rounds)},
      {"local_epochs", run_number(&RunConfig::local_epochs)},
      {"sync_period", run_number(&RunConfig::sync_period)},
      {"density", run_number(&RunConfig::density)},
      {"client_fraction", run_number(&RunConfig::client_fraction)},
      {"ema_beta", run_number(&RunConfig::ema_beta)},
      {"split_head", flag(&FeatureFlags::split_head)},
      {"periodic_sync", flag(&FeatureFlags::periodic_sync)},
      {"top_k", flag(&FeatureFlags::top_k)},
      {"quantization", flag(&FeatureFlags::quantization)},
      {"ema", flag(&FeatureFlags::ema)},
      {"seed", run_number(&RunConfig::seed)},
      {"batch_size", run_number(&RunConfig::batch_size)},
      {"learning_rate", run_number(&RunConfig::learning_rate)},
      {"huber_delta", run_number(&RunConfig::huber_delta)},
      {"hidden1", run_number(&RunConfig::hidden1)},
      {"hidden2", run_number(&RunConfig::hidden2)},
      {"head",
       {[](ExperimentConfig& c, std::string_view v) {
          if (v == "single") {
            c.run.head = HeadKind::Single;
          } else if (v == "two-layer") {
            c.run.head = HeadKind::TwoLayer;
          } else {
            throw ConfigError("expected single or two-layer");
          }
        },
        [](const ExperimentConfig& c) { return std::string(c.run.head == HeadKind::Single ? "single" : "two-layer"); }}},
      {"head_hidden", run_number(&RunConfig::head_hidden)},
      {"dropout", run_number(&RunConfig::dropout)},
      {"resync_every_round", run_bool(&RunConfig::resync_every_round)},
      {"weighted_aggregation", run_bool(&RunConfig::weighted_aggregation)},
      {"threads", run_number(&RunConfig::threads)},
      {"record_wall_time", run_bool(&RunConfig::record_wall_time)},
      {"partition", text(&ExperimentConfig::partition_dir)},
      {"output", text(&ExperimentConfig::output_dir)},
      {"map_size", number(&ExperimentConfig::map_size)},
      {"num_bs", number(&ExperimentConfig::num_bs)},
      {"num_features", number(&ExperimentConfig::num_features)},
      {"map_seed", number(&ExperimentConfig::map_seed)},
      {"obstacle_density", number(&ExperimentConfig::obstacle_density)},
      {"client_rows", number(&ExperimentConfig::client_rows)},
      {"client_cols", number(&ExperimentConfig::client_cols)},
      {"neighbor_mix", number(&ExperimentConfig::neighbor_mix)},
      {"partition_seed", number(&ExperimentConfig::partition_seed)},
      {"test_fraction", number(&ExperimentConfig::test_fraction)},
      {"per_bs_stats",
       {[](ExperimentConfig& c, std::string_view v) { c.per_bs_stats = parse_bool(v); },
        [](const ExperimentConfig& c) { return b(c.per_bs_stats); }}},
  };
  return table;
}

}  // namespace

SyntheticMapConfig ExperimentConfig::map_config() const {
  SyntheticMapConfig m;
  m.seed = map_seed;
  m.width = map_size;
  m.height = map_size;
  m.num_bs = num_bs;
  m.num_features = num_features;
  m.obstacle_density = obstacle_density;
  return m;
}

PartitionConfig ExperimentConfig::partition_config() const {
  PartitionConfig p;
  p.rows = client_rows;
  p.cols = client_cols;
  p.neighbor_mix = neighbor_mix;
  p.seed = partition_seed;
  p.test_fraction = test_fraction;
  p.per_bs_stats = per_bs_stats;
  return p;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, f] : fields()) k.push_back(name);
    return k;
  }();
  return keys;
}

void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& [name, f] : fields()) {
    if (name != key) continue;
    try {
      f.set(cfg, trim(value));
    } catch (const ConfigError& e) {
      throw ConfigError("key '" + std::string(key) + "': " + e.what());
    }
    return;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

ExperimentConfig parse_config_text(std::string_view text_in, ExperimentConfig cfg) {
  std::vector<std::string> unknown;
  std::size_t line_no = 0;
  for (std::string_view line : split(text_in, '\n')) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    bool known = false;
    for (const auto& k : config_keys()) known = known || k == key;
    if (!known) {
      unknown.emplace_back(key);
      continue;
    }
    apply_setting(cfg, key, value);
  }
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), std::move(base));
}

std::string config_to_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [name, f] : fields()) out += name + "=" + f.get(cfg) + "\n";
  return out;
}

ExperimentConfig preset(std::string_view name) {
  ExperimentConfig cfg;
  if (name == "default") return cfg;
  if (name == "desk") {
    cfg.map_size = 64;
    cfg.client_rows = 3;
    cfg.client_cols = 4;
    cfg.run.rounds = 40;
    cfg.run.local_epochs = 1;
    cfg.run.batch_size = 16;
    return cfg;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected default or desk)");
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config_to_text(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void apply_ablation(RunConfig& run, std::string_view name) {
  if (name == "no-split-head") {
    run.features.split_head = false;
  } else if (name == "no-periodic-sync") {
    run.features.periodic_sync = false;
  } else if (name == "no-top-k") {
    run.features.top_k = false;
  } else if (name == "no-quantization") {
    run.features.quantization = false;
  } else if (name == "no-ema") {
    run.features.ema = false;
  } else {
    throw ConfigError("unknown ablation '" + std::string(name) + "'");
  }
}

}  // namespace fedrem
