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

// Run directory files: round log CSV, model parameters, manifest.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "fedrem/config.hpp"
#include "fedrem/federation.hpp"

namespace fedrem {

inline constexpr const char* kRoundLogFile = "round_log.csv";
inline constexpr const char* kModelFile = "model.bin";
inline constexpr const char* kManifestFile = "manifest.txt";
inline constexpr const char* kConfigFile = "config.txt";

struct LoggedRound {
  int round = 0;
  std::string scenario;
  std::string mode;
  double rmse_micro = 0.0;
  double rmse_macro = 0.0;
  double mae_macro = 0.0;
  std::vector<double> rmse_bs;
  double cum_uplink_mb = 0.0;
  double wall_ms = 0.0;
  std::uint64_t cum_uplink_bytes = 0;
  int payloads = 0;
};

// Header: round,scenario,mode,rmse_micro,rmse_macro,mae_macro,rmse_bs_1..M,
// cum_uplink_mb,wall_ms,cum_uplink_bytes,payloads
std::string round_log_header(int num_bs);
void write_round_log(const std::string& path, const std::vector<RoundRecord>& log);

// Throws MissingColumnError for an absent column and IngestError for
// unparseable rows.
std::vector<LoggedRound> read_round_log(const std::string& path);

// Named flat f64 vectors ("FRMD1" container).
using NamedVectors = std::vector<std::pair<std::string, Eigen::VectorXd>>;
void write_model(const std::string& path, const NamedVectors& sections);
NamedVectors read_model(const std::string& path);
NamedVectors model_sections(const TrainingResult& result);

// Writes config.txt, manifest.txt, round_log.csv and model.bin under dir.
void write_run_dir(const std::string& dir, const ExperimentConfig& cfg, const TrainingResult& result);

}  // namespace fedrem
