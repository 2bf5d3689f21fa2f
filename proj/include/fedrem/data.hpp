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

// Radio-map ingestion and generation, heterogeneity scoring, Non-IID scenario
// carving and per-client partitioning / normalization.
//
// Grid convention: row-major, origin top-left. A sample's raw input vector is
// [col, row, f_1..f_P] and its label is [s_1..s_M] in dB.

#pragma once

#include <Eigen/Dense>

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedrem/errors.hpp"

namespace fedrem {

using GridLayer = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Cell {
  int row = 0;
  int col = 0;
  auto operator<=>(const Cell&) const = default;
};

struct RadioMapGrid {
  int width = 0;
  int height = 0;
  std::vector<GridLayer> signals;   // M layers, dB
  std::vector<GridLayer> features;  // P layers
  float floor_db = -150.0f;         // no-coverage marker

  int num_bs() const { return static_cast<int>(signals.size()); }
  int num_features() const { return static_cast<int>(features.size()); }
  int input_dim() const { return 2 + num_features(); }

  // Throws IngestError on inconsistent layer shapes or non-finite values.
  void validate() const;
  bool operator==(const RadioMapGrid& other) const;
};

struct SyntheticMapConfig {
  std::uint64_t seed = 1;
  int width = 256;
  int height = 256;
  int num_bs = 4;
  int num_features = 100;
  std::vector<Cell> transmitters;  // empty: seeded placement
  double obstacle_density = 0.15;
  double path_loss_exponent = 3.0;
  double shadowing_sigma_db = 6.0;
  double shadowing_corr_cells = 6.0;
  double ref_loss_db = 40.0;  // PL_0 at the reference distance
  double ref_distance_m = 1.0;
  double cell_size_m = 10.0;
  double tx_power_dbm = 20.0;
  double penetration_db = 6.0;  // per obstacle crossed by the BS-to-cell ray
  int noise_channels = 8;
  float floor_db = -150.0f;
};

// Log-distance path loss + correlated log-normal shadowing (clipped to +-2
// sigma, absent at the transmitter cell) + per-obstacle penetration loss.
RadioMapGrid generate_synthetic_map(const SyntheticMapConfig& cfg);

// Transmitter cells actually used by generate_synthetic_map for `cfg`.
std::vector<Cell> transmitter_cells(const SyntheticMapConfig& cfg);

// --- grid files -------------------------------------------------------------

enum class GridFormat { Binary, Csv };

void write_grid(const RadioMapGrid& grid, const std::filesystem::path& path);
void write_grid_csv(const RadioMapGrid& grid, const std::filesystem::path& path);
RadioMapGrid read_grid(const std::filesystem::path& path);
RadioMapGrid read_grid_csv(const std::filesystem::path& path);
RadioMapGrid ingest_grid(const std::filesystem::path& path, GridFormat format);

std::vector<std::uint8_t> encode_grid(const RadioMapGrid& grid);
RadioMapGrid decode_grid(std::span<const std::uint8_t> bytes);

// --- heterogeneity ----------------------------------------------------------

struct HeterogeneityField {
  int width = 0;
  int height = 0;
  Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> values;  // per-cell H
  double q33 = 0.0;
  double q66 = 0.0;

  double at(const Cell& c) const { return values(c.row, c.col); }
};

// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value.
double nearest_rank_percentile(std::vector<double> values, double percent);

// Per-cell population standard deviation across the M signal layers.
HeterogeneityField heterogeneity(const RadioMapGrid& map);

enum class Scenario { Light, Medium, Heavy };

std::string to_string(Scenario s);
Scenario parse_scenario(std::string_view s);

// light: H <= q33, medium: q33 < H <= q66, heavy: H > q66. Row-major order.
std::vector<Cell> scenario_filter(const HeterogeneityField& field, Scenario scenario);

// --- partitioning -----------------------------------------------------------

struct PartitionConfig {
  int rows = 10;
  int cols = 9;
  double neighbor_mix = 0.1;
  std::uint64_t seed = 1;
  double test_fraction = 0.2;
  int min_client_samples = 5;
  bool per_bs_stats = false;
};

// Buckets `cells` into rows x cols spatial tiles over a width x height map and
// moves a neighbor_mix share of samples in from the 8-neighbourhood tiles.
// Under-populated tiles are merged into the nearest adequate tile and their
// slot refilled by splitting the largest tile, so the client count is fixed.
// Each returned list is sorted row-major.
std::vector<std::vector<Cell>> grid_partition(const std::vector<Cell>& cells, int width, int height,
                                              const PartitionConfig& cfg);

struct RawSamples {
  Eigen::MatrixXd inputs;  // (2+P) x n
  Eigen::MatrixXd labels;  // M x n, dB
  std::vector<Cell> cells;
};

RawSamples gather_samples(const RadioMapGrid& map, std::span<const Cell> cells);

struct NormalizationStats {
  std::array<double, 2> coord_min{};  // x (col), y (row)
  std::array<double, 2> coord_max{};
  Eigen::VectorXd label_mean;  // length M; constant when pooled
  Eigen::VectorXd label_std;
};

struct ClientDataset {
  int id = 0;
  int tile_row = 0;
  int tile_col = 0;
  Eigen::MatrixXd train_x;
  Eigen::MatrixXd train_y;
  Eigen::MatrixXd test_x;
  Eigen::MatrixXd test_y;
  std::vector<Cell> train_cells;
  std::vector<Cell> test_cells;
  NormalizationStats stats;

  Eigen::Index train_size() const { return train_x.cols(); }
  Eigen::Index test_size() const { return test_x.cols(); }
};

// Min-max coordinates and z-scored labels using training-split statistics.
// Throws DegenerateClientError for < 2 training samples or zero label spread.
ClientDataset normalize_client(const RawSamples& train, const RawSamples& test, bool per_bs_stats = false);

Eigen::MatrixXd denormalize(const Eigen::MatrixXd& normalized, const NormalizationStats& stats);

struct ScenarioPartition {
  Scenario scenario = Scenario::Light;
  int rows = 0;
  int cols = 0;
  std::uint64_t seed = 0;
  double neighbor_mix = 0.0;
  double test_fraction = 0.0;
  double q33 = 0.0;
  double q66 = 0.0;
  int num_bs = 0;
  int num_features = 0;
  std::vector<ClientDataset> clients;

  int input_dim() const { return 2 + num_features; }
};

ScenarioPartition build_partition(const RadioMapGrid& map, Scenario scenario, const PartitionConfig& cfg);

// One directory per client (client_NNN/{train.csv,test.csv,stats.txt}) plus a
// partition.txt manifest. Numbers use the shortest exact representation.
void export_partition(const ScenarioPartition& partition, const std::filesystem::path& dir);
ScenarioPartition load_partition(const std::filesystem::path& dir);

}  // namespace fedrem
