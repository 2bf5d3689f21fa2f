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

// Flat key=value experiment configuration. Every key is listed by
// config_to_text(); unknown keys are rejected.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fedrem/data.hpp"
#include "fedrem/federation.hpp"

namespace fedrem {

struct ExperimentConfig {
  RunConfig run;
  std::string scenario = "heavy";
  std::string partition_dir;
  std::string output_dir;

  // map generation
  int map_size = 256;
  int num_bs = 4;
  int num_features = 100;
  std::uint64_t map_seed = 1;
  double obstacle_density = 0.15;

  // partitioning
  int client_rows = 10;
  int client_cols = 9;
  double neighbor_mix = 0.1;
  std::uint64_t partition_seed = 1;
  double test_fraction = 0.2;
  bool per_bs_stats = false;

  SyntheticMapConfig map_config() const;
  PartitionConfig partition_config() const;
};

// Ordered list of every recognised key.
const std::vector<std::string>& config_keys();

// Sets one key; throws ConfigError for unknown keys or malformed values.
void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value);

// Parses "key=value" lines ('#' comments allowed) on top of `base`. All unknown
// keys are collected and reported together.
ExperimentConfig parse_config_text(std::string_view text, ExperimentConfig base = {});
ExperimentConfig load_config_file(const std::string& path, ExperimentConfig base = {});

std::string config_to_text(const ExperimentConfig& cfg);

// "default" or "desk" (64x64 map, 3x4 clients, 40 rounds, 1 local epoch,
// batch 16).
ExperimentConfig preset(std::string_view name);

// FNV-1a 64-bit hash of the canonical config text.
std::uint64_t config_hash(const ExperimentConfig& cfg);

// Maps an ablation name (no-split-head, no-periodic-sync, no-top-k,
// no-quantization, no-ema) to the matching flag.
void apply_ablation(RunConfig& run, std::string_view name);

}  // namespace fedrem
