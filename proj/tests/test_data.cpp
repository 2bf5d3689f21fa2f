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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "fedrem/data.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

namespace fedrem {
namespace {

SyntheticMapConfig small_map(std::uint64_t seed = 3, int size = 32, int features = 6) {
  SyntheticMapConfig cfg;
  cfg.seed = seed;
  cfg.width = size;
  cfg.height = size;
  cfg.num_features = features;
  return cfg;
}

RadioMapGrid uniform_map(int w, int h, int m, float value) {
  RadioMapGrid g;
  g.width = w;
  g.height = h;
  for (int k = 0; k < m; ++k) g.signals.push_back(GridLayer::Constant(h, w, value));
  return g;
}

std::vector<Cell> all_cells(int w, int h) {
  std::vector<Cell> cells;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) cells.push_back({r, c});
  return cells;
}

// --- generation --------------------------------------------------------------

TEST(SyntheticMap, SameSeedIsBitwiseIdentical) {
  const auto a = generate_synthetic_map(small_map(5));
  const auto b = generate_synthetic_map(small_map(5));
  EXPECT_EQ(a, b);
  EXPECT_EQ(encode_grid(a), encode_grid(b));
  EXPECT_FALSE(a == generate_synthetic_map(small_map(6)));
}

TEST(SyntheticMap, TransmitterCellIsStrongest) {
  for (std::uint64_t seed : {1, 2, 3, 4}) {
    const auto cfg = small_map(seed, 40);
    const auto map = generate_synthetic_map(cfg);
    const auto tx = transmitter_cells(cfg);
    for (int b = 0; b < map.num_bs(); ++b) {
      const float at_tx = map.signals[b](tx[b].row, tx[b].col);
      EXPECT_EQ(at_tx, map.signals[b].maxCoeff()) << "seed " << seed << " bs " << b;
    }
  }
}

TEST(SyntheticMap, NoObstaclesNoShadowingDecreasesWithDistance) {
  auto cfg = small_map(2, 16);
  cfg.num_bs = 2;
  cfg.obstacle_density = 0.0;
  cfg.shadowing_sigma_db = 0.0;
  const auto map = generate_synthetic_map(cfg);
  const auto tx = transmitter_cells(cfg);
  const auto cells = all_cells(16, 16);
  for (int b = 0; b < 2; ++b) {
    auto d2 = [&](const Cell& c) {
      return (c.row - tx[b].row) * (c.row - tx[b].row) + (c.col - tx[b].col) * (c.col - tx[b].col);
    };
    for (const Cell& p : cells)
      for (const Cell& q : cells) {
        if (d2(p) < d2(q)) {
          ASSERT_GT(map.signals[b](p.row, p.col), map.signals[b](q.row, q.col));
        }
      }
  }
}

TEST(SyntheticMap, TransmitterOutsideGridIsConfigError) {
  auto cfg = small_map();
  cfg.transmitters = {{0, 0}, {1, 1}, {2, 2}, {40, 3}};
  EXPECT_THROW(generate_synthetic_map(cfg), ConfigError);
  cfg.transmitters = {{0, 0}};
  EXPECT_THROW(generate_synthetic_map(cfg), ConfigError);
}

TEST(SyntheticMap, FeatureLayout) {
  const auto map = generate_synthetic_map(small_map(1, 32, 100));
  EXPECT_EQ(map.num_features(), 100);
  EXPECT_EQ(map.input_dim(), 102);
  // Layer 0 is a 0/1 obstacle indicator; trailing layers are zero padding.
  EXPECT_TRUE(((map.features[0] == 0.0f) || (map.features[0] == 1.0f)).all());
  EXPECT_TRUE((map.features[99] == 0.0f).all());
  const std::vector<Cell> cells = {{0, 0}, {5, 7}};
  const RawSamples s = gather_samples(map, cells);
  EXPECT_EQ(s.inputs.rows(), 102);
  EXPECT_EQ(s.inputs(0, 1), 7.0);
  EXPECT_EQ(s.inputs(1, 1), 5.0);
  EXPECT_EQ(s.labels.rows(), 4);
}

// --- grid files ---------------------------------------------------------------

TEST(GridIo, BinaryAndCsvRoundTrip) {
  testing::TempDir tmp;
  const auto map = generate_synthetic_map(small_map(9, 12, 3));
  write_grid(map, tmp.path() / "m.remg");
  write_grid_csv(map, tmp.path() / "m.csv");
  EXPECT_EQ(ingest_grid(tmp.path() / "m.remg", GridFormat::Binary), map);
  EXPECT_EQ(ingest_grid(tmp.path() / "m.csv", GridFormat::Csv), map);
}

TEST(GridIo, HeaderLayout) {
  const auto map = generate_synthetic_map(small_map(9, 12, 3));
  const auto bytes = encode_grid(map);
  ASSERT_EQ(bytes.size(), 21u + 4u * (4 + 3) * 12 * 12);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 5), "REMG1");
  EXPECT_EQ(bytes[5], 12);
  EXPECT_EQ(bytes[13], 4);
  EXPECT_EQ(bytes[17], 3);
}

TEST(GridIo, TruncationAndTrailingBytesAreIngestErrors) {
  const auto bytes = encode_grid(generate_synthetic_map(small_map(9, 8, 2)));
  for (std::size_t cut : {std::size_t{0}, std::size_t{4}, std::size_t{20}, bytes.size() - 1}) {
    EXPECT_THROW(decode_grid(std::span(bytes).first(cut)), IngestError) << cut;
  }
  auto longer = bytes;
  longer.push_back(0);
  EXPECT_THROW(decode_grid(longer), IngestError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_grid(bad_magic), IngestError);
}

TEST(GridIo, NonFiniteValueReportsLocation) {
  auto map = generate_synthetic_map(small_map(9, 8, 2));
  auto bytes = encode_grid(map);
  // Layer 1 of an 8x8 grid, cell (3, 5), little-endian f32 quiet NaN.
  const std::size_t at = 21 + 4 * (64 + 3 * 8 + 5);
  const std::uint8_t nan_le[4] = {0x00, 0x00, 0xC0, 0x7F};
  std::copy(std::begin(nan_le), std::end(nan_le), bytes.begin() + static_cast<std::ptrdiff_t>(at));
  try {
    decode_grid(bytes);
    FAIL() << "expected IngestError";
  } catch (const IngestError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("col 5"), std::string::npos) << msg;
  }
}

TEST(GridIo, CsvErrorsNameTheLine) {
  testing::TempDir tmp;
  const auto path = tmp.path() / "bad.csv";
  std::ofstream(path) << "row,col,s1,s2,f1\n0,0,-50,-60,1\n0,1,-50,oops,1\n";
  try {
    read_grid_csv(path);
    FAIL() << "expected IngestError";
  } catch (const IngestError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_grid(tmp.path() / "missing.remg"), IngestError);
}

// --- heterogeneity -----------------------------------------------------------

TEST(Heterogeneity, Examples) {
  const auto flat = heterogeneity(uniform_map(4, 3, 4, -70.0f));
  EXPECT_TRUE((flat.values == 0.0).all());

  RadioMapGrid g = uniform_map(1, 1, 4, 0.0f);
  for (int k = 0; k < 4; ++k) g.signals[k](0, 0) = static_cast<float>(k + 1);
  const double expected = testing::population_std({1, 2, 3, 4});
  EXPECT_NEAR(heterogeneity(g).values(0, 0), expected, 1e-12);
  EXPECT_NEAR(expected, 1.1180, 1e-4);

  EXPECT_THROW(heterogeneity(uniform_map(2, 2, 1, 0.0f)), ConfigError);
}

TEST(Heterogeneity, NearestRankPercentile) {
  EXPECT_EQ(nearest_rank_percentile({5, 1, 4, 2, 3}, 40.0), 2.0);
  EXPECT_EQ(nearest_rank_percentile({5, 1, 4, 2, 3}, 100.0), 5.0);
  EXPECT_EQ(nearest_rank_percentile({5, 1, 4, 2, 3}, 1.0), 1.0);
  std::vector<double> hundred(100);
  for (int i = 0; i < 100; ++i) hundred[i] = i + 1;
  EXPECT_EQ(nearest_rank_percentile(hundred, 33.0), 33.0);
  EXPECT_EQ(nearest_rank_percentile(hundred, 66.0), 66.0);
  EXPECT_THROW(nearest_rank_percentile({}, 50.0), ParameterError);
}

TEST(ScenarioFilter, PartitionsAllCellsIntoThirds) {
  const auto map = generate_synthetic_map(small_map(4, 48));
  const auto field = heterogeneity(map);
  std::set<Cell> seen;
  std::size_t total = 0;
  std::map<Scenario, double> mean_h;
  for (Scenario s : {Scenario::Light, Scenario::Medium, Scenario::Heavy}) {
    const auto cells = scenario_filter(field, s);
    total += cells.size();
    seen.insert(cells.begin(), cells.end());
    const double share = static_cast<double>(cells.size()) / (48.0 * 48.0);
    EXPECT_NEAR(share, 1.0 / 3.0, 0.02);
    double sum = 0.0;
    for (const Cell& c : cells) sum += field.at(c);
    mean_h[s] = sum / static_cast<double>(cells.size());
  }
  EXPECT_EQ(total, 48u * 48u);
  EXPECT_EQ(seen.size(), total);
  EXPECT_LT(mean_h[Scenario::Light], mean_h[Scenario::Medium]);
  EXPECT_LT(mean_h[Scenario::Medium], mean_h[Scenario::Heavy]);
}

TEST(ScenarioFilter, UniformFieldIsAllLight) {
  const auto field = heterogeneity(uniform_map(5, 4, 3, -80.0f));
  EXPECT_EQ(scenario_filter(field, Scenario::Light).size(), 20u);
  EXPECT_TRUE(scenario_filter(field, Scenario::Medium).empty());
  EXPECT_TRUE(scenario_filter(field, Scenario::Heavy).empty());
}

TEST(ScenarioFilter, ParseAndPrint) {
  for (Scenario s : {Scenario::Light, Scenario::Medium, Scenario::Heavy}) EXPECT_EQ(parse_scenario(to_string(s)), s);
  EXPECT_THROW(parse_scenario("extreme"), ConfigError);
}

// --- partitioning ------------------------------------------------------------

int tile_of(const Cell& c, int w, int h, const PartitionConfig& cfg) {
  return std::min(cfg.rows - 1, c.row * cfg.rows / h) * cfg.cols + std::min(cfg.cols - 1, c.col * cfg.cols / w);
}

TEST(GridPartition, TenByNineGivesNinetyClients) {
  PartitionConfig cfg;
  const auto groups = grid_partition(all_cells(90, 90), 90, 90, cfg);
  EXPECT_EQ(groups.size(), 90u);
}

TEST(GridPartition, NoMixKeepsSamplesInTheirTile) {
  PartitionConfig cfg;
  cfg.rows = 4;
  cfg.cols = 3;
  cfg.neighbor_mix = 0.0;
  const auto groups = grid_partition(all_cells(30, 40), 30, 40, cfg);
  ASSERT_EQ(groups.size(), 12u);
  for (std::size_t k = 0; k < groups.size(); ++k)
    for (const Cell& c : groups[k]) EXPECT_EQ(tile_of(c, 30, 40, cfg), static_cast<int>(k));
}

TEST(GridPartition, PropertySamplesConservedAndDisjoint) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto map = generate_synthetic_map(small_map(seed, 40));
    const auto cells = scenario_filter(heterogeneity(map), Scenario::Heavy);
    PartitionConfig cfg;
    cfg.rows = 3;
    cfg.cols = 4;
    cfg.seed = seed;
    cfg.neighbor_mix = 0.05 * static_cast<double>(seed);
    const auto groups = grid_partition(cells, 40, 40, cfg);
    ASSERT_EQ(groups.size(), 12u);
    std::set<Cell> seen;
    std::size_t total = 0;
    for (const auto& g : groups) {
      EXPECT_FALSE(g.empty());
      total += g.size();
      seen.insert(g.begin(), g.end());
    }
    EXPECT_EQ(total, cells.size());
    EXPECT_EQ(seen, std::set<Cell>(cells.begin(), cells.end()));
  }
}

TEST(GridPartition, MixedSamplesComeFromNeighbourTiles) {
  PartitionConfig cfg;
  cfg.rows = 3;
  cfg.cols = 3;
  cfg.neighbor_mix = 0.2;
  const auto groups = grid_partition(all_cells(30, 30), 30, 30, cfg);
  int moved = 0;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    for (const Cell& c : groups[k]) {
      const int t = tile_of(c, 30, 30, cfg);
      if (t == static_cast<int>(k)) continue;
      ++moved;
      EXPECT_LE(std::abs(t / 3 - static_cast<int>(k) / 3), 1);
      EXPECT_LE(std::abs(t % 3 - static_cast<int>(k) % 3), 1);
    }
  }
  EXPECT_EQ(moved, 9 * 20);  // each 100-cell tile sends floor(0.2 * 100)
}

TEST(GridPartition, SparseTilesAreMergedAndCountKept) {
  // Everything in the top-left corner except a few stragglers.
  std::vector<Cell> cells;
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 10; ++c) cells.push_back({r, c});
  cells.push_back({35, 35});
  cells.push_back({39, 2});
  PartitionConfig cfg;
  cfg.rows = 2;
  cfg.cols = 2;
  cfg.neighbor_mix = 0.0;
  const auto groups = grid_partition(cells, 40, 40, cfg);
  ASSERT_EQ(groups.size(), 4u);
  std::size_t total = 0;
  for (const auto& g : groups) {
    EXPECT_GE(g.size(), static_cast<std::size_t>(cfg.min_client_samples));
    total += g.size();
  }
  EXPECT_EQ(total, cells.size());
}

TEST(GridPartition, RejectsBadConfigs) {
  PartitionConfig cfg;
  cfg.neighbor_mix = 0.6;
  EXPECT_THROW(grid_partition(all_cells(90, 90), 90, 90, cfg), ConfigError);
  cfg.neighbor_mix = 0.1;
  EXPECT_THROW(grid_partition({}, 90, 90, cfg), ConfigError);
  EXPECT_THROW(grid_partition(all_cells(5, 5), 5, 5, cfg), ConfigError);
}

// --- normalization ------------------------------------------------------------

RawSamples random_samples(int n, int m, std::uint64_t seed, double offset = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(-70.0, 8.0);
  RawSamples s;
  s.inputs.resize(4, n);
  s.labels.resize(m, n);
  for (int i = 0; i < n; ++i) {
    s.inputs(0, i) = i % 7;
    s.inputs(1, i) = i / 7;
    s.inputs(2, i) = normal(rng);
    s.inputs(3, i) = 1.0;
    for (int b = 0; b < m; ++b) s.labels(b, i) = normal(rng) + offset;
    s.cells.push_back({i / 7, i % 7});
  }
  return s;
}

TEST(Normalize, TrainingLabelsAreStandardized) {
  for (bool per_bs : {false, true}) {
    const auto d = normalize_client(random_samples(40, 4, 1), random_samples(10, 4, 2), per_bs);
    EXPECT_NEAR(d.train_y.mean(), 0.0, 1e-12);
    if (per_bs) {
      for (int b = 0; b < 4; ++b) {
        const double sd = std::sqrt(d.train_y.row(b).array().square().mean());
        EXPECT_NEAR(sd, 1.0, 1e-12);
      }
    } else {
      EXPECT_NEAR(std::sqrt(d.train_y.array().square().mean()), 1.0, 1e-12);
    }
    EXPECT_GE(d.train_x.row(0).minCoeff(), 0.0);
    EXPECT_LE(d.train_x.row(0).maxCoeff(), 1.0);
    EXPECT_EQ(d.train_x.row(0).minCoeff(), 0.0);
    EXPECT_EQ(d.train_x.row(0).maxCoeff(), 1.0);
  }
}

TEST(Normalize, ShiftInvariance) {
  const auto a = normalize_client(random_samples(30, 4, 3), random_samples(8, 4, 4));
  const auto b = normalize_client(random_samples(30, 4, 3, 25.0), random_samples(8, 4, 4, 25.0));
  EXPECT_TRUE(a.train_y.isApprox(b.train_y, 1e-9));
  EXPECT_TRUE(a.test_y.isApprox(b.test_y, 1e-9));
}

TEST(Normalize, PropertyRoundTrip) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto train = random_samples(25, 4, seed);
    const auto test = random_samples(9, 4, seed + 100);
    const auto d = normalize_client(train, test, seed % 2 == 0);
    EXPECT_LE((denormalize(d.train_y, d.stats) - train.labels).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((denormalize(d.test_y, d.stats) - test.labels).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Normalize, DenormalizeExamples) {
  NormalizationStats st;
  st.label_mean = Eigen::VectorXd::Constant(2, -50.0);
  st.label_std = Eigen::VectorXd::Constant(2, 2.0);
  EXPECT_EQ(denormalize(Eigen::MatrixXd::Ones(2, 1), st), Eigen::MatrixXd::Constant(2, 1, -48.0));
  EXPECT_EQ(denormalize(Eigen::MatrixXd::Zero(2, 1), st), Eigen::MatrixXd::Constant(2, 1, -50.0));
  st.label_mean.setZero();
  st.label_std.setOnes();
  const Eigen::MatrixXd y = Eigen::MatrixXd::Random(2, 5);
  EXPECT_EQ(denormalize(y, st), y);
}

TEST(Normalize, DegenerateClients) {
  auto train = random_samples(10, 4, 1);
  train.labels.setConstant(-60.0);
  EXPECT_THROW(normalize_client(train, random_samples(3, 4, 2)), DegenerateClientError);
  EXPECT_THROW(normalize_client(random_samples(1, 4, 1), random_samples(3, 4, 2)), DegenerateClientError);
}

// --- scenario partitions ---------------------------------------------------------

TEST(BuildPartition, SplitsAndExportsDeterministically) {
  const auto map = generate_synthetic_map(small_map(7, 48));
  PartitionConfig cfg;
  cfg.rows = 3;
  cfg.cols = 4;
  const auto part = build_partition(map, Scenario::Heavy, cfg);
  ASSERT_EQ(part.clients.size(), 12u);
  for (const auto& c : part.clients) {
    const long n = c.train_size() + c.test_size();
    EXPECT_EQ(c.test_size(), std::max(1L, std::lround(0.2 * static_cast<double>(n))));
    EXPECT_EQ(c.train_x.rows(), 2 + map.num_features());
  }

  testing::TempDir tmp;
  export_partition(part, tmp.path() / "a");
  export_partition(build_partition(map, Scenario::Heavy, cfg), tmp.path() / "b");
  EXPECT_TRUE(testing::directories_identical(tmp.path() / "a", tmp.path() / "b"));

  const auto loaded = load_partition(tmp.path() / "a");
  EXPECT_EQ(loaded.scenario, Scenario::Heavy);
  ASSERT_EQ(loaded.clients.size(), part.clients.size());
  for (std::size_t k = 0; k < part.clients.size(); ++k) {
    EXPECT_EQ(loaded.clients[k].train_x, part.clients[k].train_x);
    EXPECT_EQ(loaded.clients[k].test_y, part.clients[k].test_y);
    EXPECT_EQ(loaded.clients[k].stats.label_std, part.clients[k].stats.label_std);
    EXPECT_EQ(loaded.clients[k].train_cells, part.clients[k].train_cells);
  }
}

TEST(BuildPartition, ScenarioOrderingOfClientHeterogeneity) {
  const auto map = generate_synthetic_map(small_map(8, 64));
  const auto field = heterogeneity(map);
  PartitionConfig cfg;
  cfg.rows = 3;
  cfg.cols = 4;
  std::map<Scenario, double> mean;
  for (Scenario s : {Scenario::Light, Scenario::Medium, Scenario::Heavy}) {
    const auto part = build_partition(map, s, cfg);
    double acc = 0.0;
    for (const auto& c : part.clients) {
      double h = 0.0;
      for (const Cell& cell : c.train_cells) h += field.at(cell);
      for (const Cell& cell : c.test_cells) h += field.at(cell);
      acc += h / static_cast<double>(c.train_cells.size() + c.test_cells.size());
    }
    mean[s] = acc / static_cast<double>(part.clients.size());
  }
  EXPECT_GT(mean[Scenario::Heavy], mean[Scenario::Medium]);
  EXPECT_GT(mean[Scenario::Medium], mean[Scenario::Light]);
}

TEST(LoadPartition, CorruptFilesAreIngestErrors) {
  const auto map = generate_synthetic_map(small_map(7, 32));
  PartitionConfig cfg;
  cfg.rows = 2;
  cfg.cols = 2;
  testing::TempDir tmp;
  export_partition(build_partition(map, Scenario::Light, cfg), tmp.path());
  EXPECT_THROW(load_partition(tmp.path() / "nope"), IngestError);
  {
    std::ofstream f(tmp.path() / "client_001" / "train.csv", std::ios::app);
    f << "1,2,3\n";
  }
  EXPECT_THROW(load_partition(tmp.path()), IngestError);
}

}  // namespace
}  // namespace fedrem
