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

#include "fedrem/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <tuple>

#include "fedrem/random.hpp"

namespace fedrem {

namespace {

using Field = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Separable Gaussian blur with clamp-to-edge borders.
Field gaussian_blur(const Field& in, double sigma) {
  if (sigma <= 0.0) return in;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  const double norm = std::accumulate(kernel.begin(), kernel.end(), 0.0);
  for (double& k : kernel) k /= norm;

  const int h = static_cast<int>(in.rows());
  const int w = static_cast<int>(in.cols());
  Field tmp(h, w);
  Field out(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * in(r, std::clamp(c + k, 0, w - 1));
      tmp(r, c) = acc;
    }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp(std::clamp(r + k, 0, h - 1), c);
      out(r, c) = acc;
    }
  return out;
}

// Smoothed white noise rescaled to zero mean / unit population std.
Field correlated_noise(int h, int w, double corr, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Field white(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) white(r, c) = normal(rng);
  Field f = gaussian_blur(white, corr);
  f -= f.mean();
  const double sd = std::sqrt(f.square().mean());
  if (sd > 0.0) f /= sd;
  return f;
}

int obstacle_entries(const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& occ, Cell from,
                     Cell to) {
  const int dr = to.row - from.row;
  const int dc = to.col - from.col;
  const int steps = 2 * std::max(std::abs(dr), std::abs(dc));
  int entries = 0;
  bool inside = false;
  Cell prev = from;
  for (int i = 1; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    Cell c{static_cast<int>(std::lround(from.row + t * dr)), static_cast<int>(std::lround(from.col + t * dc))};
    if (c == prev) continue;
    prev = c;
    const bool now = occ(c.row, c.col);
    if (now && !inside) ++entries;
    inside = now;
  }
  return entries;
}

}  // namespace

// ---------------------------------------------------------------------------

void RadioMapGrid::validate() const {
  if (width <= 0 || height <= 0) throw IngestError("grid has non-positive dimensions");
  auto check = [&](const std::vector<GridLayer>& layers, const char* kind) {
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const GridLayer& l = layers[k];
      if (l.rows() != height || l.cols() != width) {
        throw IngestError(std::string(kind) + " layer " + std::to_string(k) + " has shape " +
                          std::to_string(l.rows()) + "x" + std::to_string(l.cols()) + ", expected " +
                          std::to_string(height) + "x" + std::to_string(width));
      }
      for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c)
          if (!std::isfinite(l(r, c))) {
            throw IngestError(std::string("non-finite ") + kind + " value in layer " + std::to_string(k) +
                              " at row " + std::to_string(r) + ", col " + std::to_string(c));
          }
    }
  };
  check(signals, "signal");
  check(features, "feature");
}

bool RadioMapGrid::operator==(const RadioMapGrid& o) const {
  if (width != o.width || height != o.height || signals.size() != o.signals.size() ||
      features.size() != o.features.size())
    return false;
  for (std::size_t k = 0; k < signals.size(); ++k)
    if ((signals[k] != o.signals[k]).any()) return false;
  for (std::size_t k = 0; k < features.size(); ++k)
    if ((features[k] != o.features[k]).any()) return false;
  return true;
}

std::vector<Cell> transmitter_cells(const SyntheticMapConfig& cfg) {
  if (!cfg.transmitters.empty()) {
    if (static_cast<int>(cfg.transmitters.size()) != cfg.num_bs) {
      throw ConfigError("transmitter list has " + std::to_string(cfg.transmitters.size()) + " entries for " +
                        std::to_string(cfg.num_bs) + " base stations");
    }
    for (const Cell& t : cfg.transmitters) {
      if (t.row < 0 || t.row >= cfg.height || t.col < 0 || t.col >= cfg.width) {
        throw ConfigError("transmitter (" + std::to_string(t.row) + ", " + std::to_string(t.col) +
                          ") lies outside the grid");
      }
    }
    return cfg.transmitters;
  }
  std::mt19937_64 rng(derive_seed(cfg.seed, {1}));
  std::uniform_int_distribution<int> rows(cfg.height / 8, std::max(cfg.height / 8, cfg.height - 1 - cfg.height / 8));
  std::uniform_int_distribution<int> cols(cfg.width / 8, std::max(cfg.width / 8, cfg.width - 1 - cfg.width / 8));
  std::vector<Cell> tx(cfg.num_bs);
  for (Cell& t : tx) t = Cell{rows(rng), cols(rng)};
  return tx;
}

RadioMapGrid generate_synthetic_map(const SyntheticMapConfig& cfg) {
  if (cfg.num_bs < 1) throw ConfigError("at least one base station is required");
  if (cfg.width < 1 || cfg.height < 1) throw ConfigError("grid size must be positive");
  if (cfg.num_features < 0) throw ConfigError("feature count must be non-negative");
  if (cfg.obstacle_density < 0.0 || cfg.obstacle_density > 0.9) throw ConfigError("obstacle density must be in [0, 0.9]");
  const std::vector<Cell> tx = transmitter_cells(cfg);
  const int h = cfg.height;
  const int w = cfg.width;

  // Obstacles: axis-aligned blocks until the requested coverage is reached.
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> occ(h, w);
  occ.setConstant(false);
  {
    std::mt19937_64 rng(derive_seed(cfg.seed, {2}));
    const int max_side = std::max(2, std::min(w, h) / 10);
    std::uniform_int_distribution<int> side(2, max_side);
    std::uniform_int_distribution<int> r0(0, h - 1);
    std::uniform_int_distribution<int> c0(0, w - 1);
    const long target = std::lround(cfg.obstacle_density * h * w);
    long covered = 0;
    for (int guard = 0; covered < target && guard < 1000000; ++guard) {
      const int bh = side(rng);
      const int bw = side(rng);
      const int r = r0(rng);
      const int c = c0(rng);
      for (int i = r; i < std::min(h, r + bh) && covered < target; ++i)
        for (int j = c; j < std::min(w, c + bw) && covered < target; ++j)
          if (!occ(i, j)) {
            occ(i, j) = true;
            ++covered;
          }
    }
  }

  RadioMapGrid grid;
  grid.width = w;
  grid.height = h;
  grid.floor_db = cfg.floor_db;
  grid.signals.reserve(cfg.num_bs);
  for (int b = 0; b < cfg.num_bs; ++b) {
    Field shadow = Field::Zero(h, w);
    if (cfg.shadowing_sigma_db > 0.0) {
      std::mt19937_64 rng(derive_seed(cfg.seed, {3, static_cast<std::uint64_t>(b)}));
      const double lim = 2.0 * cfg.shadowing_sigma_db;
      shadow = (correlated_noise(h, w, cfg.shadowing_corr_cells, rng) * cfg.shadowing_sigma_db).cwiseMax(-lim).cwiseMin(lim);
    }
    GridLayer layer(h, w);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const Cell here{r, c};
        const bool at_tx = here == tx[b];
        const double d = cfg.cell_size_m * std::hypot(r - tx[b].row, c - tx[b].col);
        const double d_eff = std::max(d, cfg.ref_distance_m);
        const double pl = cfg.ref_loss_db + 10.0 * cfg.path_loss_exponent * std::log10(d_eff / cfg.ref_distance_m);
        double s = cfg.tx_power_dbm - pl;
        if (!at_tx) s += shadow(r, c) - cfg.penetration_db * obstacle_entries(occ, tx[b], here);
        layer(r, c) = static_cast<float>(std::max(s, static_cast<double>(cfg.floor_db)));
      }
    grid.signals.push_back(std::move(layer));
  }

  const int p = cfg.num_features;
  grid.features.assign(p, GridLayer::Zero(h, w));
  if (p > 0) grid.features[0] = occ.cast<float>();
  if (p > 1) {
    const double diag = std::hypot(h - 1, w - 1);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        double best = std::numeric_limits<double>::infinity();
        for (const Cell& t : tx) best = std::min(best, std::hypot(r - t.row, c - t.col));
        grid.features[1](r, c) = static_cast<float>(diag > 0 ? best / diag : 0.0);
      }
  }
  for (int k = 0; k < cfg.noise_channels && 2 + k < p; ++k) {
    std::mt19937_64 rng(derive_seed(cfg.seed, {4, static_cast<std::uint64_t>(k)}));
    grid.features[2 + k] = correlated_noise(h, w, 4.0, rng).cast<float>();
  }
  return grid;
}

// ---------------------------------------------------------------------------

double nearest_rank_percentile(std::vector<double> values, double percent) {
  if (values.empty()) throw ParameterError("percentile of an empty set");
  if (percent <= 0.0 || percent > 100.0) throw ParameterError("percentile must be in (0, 100]");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(percent / 100.0 * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

HeterogeneityField heterogeneity(const RadioMapGrid& map) {
  if (map.num_bs() < 2) throw ConfigError("heterogeneity needs at least two base stations");
  HeterogeneityField f;
  f.width = map.width;
  f.height = map.height;
  f.values.resize(map.height, map.width);
  const double m = map.num_bs();
  for (int r = 0; r < map.height; ++r)
    for (int c = 0; c < map.width; ++c) {
      double mean = 0.0;
      for (const GridLayer& l : map.signals) mean += l(r, c);
      mean /= m;
      double var = 0.0;
      for (const GridLayer& l : map.signals) var += (l(r, c) - mean) * (l(r, c) - mean);
      f.values(r, c) = std::sqrt(var / m);
    }
  std::vector<double> all(f.values.data(), f.values.data() + f.values.size());
  f.q33 = nearest_rank_percentile(all, 33.0);
  f.q66 = nearest_rank_percentile(std::move(all), 66.0);
  return f;
}

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::Light: return "light";
    case Scenario::Medium: return "medium";
    case Scenario::Heavy: return "heavy";
  }
  return "unknown";
}

Scenario parse_scenario(std::string_view s) {
  if (s == "light") return Scenario::Light;
  if (s == "medium") return Scenario::Medium;
  if (s == "heavy") return Scenario::Heavy;
  throw ConfigError("unknown scenario '" + std::string(s) + "' (expected light, medium or heavy)");
}

std::vector<Cell> scenario_filter(const HeterogeneityField& field, Scenario scenario) {
  std::vector<Cell> cells;
  for (int r = 0; r < field.height; ++r)
    for (int c = 0; c < field.width; ++c) {
      const double h = field.values(r, c);
      const bool take = scenario == Scenario::Light    ? h <= field.q33
                        : scenario == Scenario::Medium ? (h > field.q33 && h <= field.q66)
                                                       : h > field.q66;
      if (take) cells.push_back({r, c});
    }
  return cells;
}

// ---------------------------------------------------------------------------

std::vector<std::vector<Cell>> grid_partition(const std::vector<Cell>& cells, int width, int height,
                                              const PartitionConfig& cfg) {
  if (cfg.rows < 1 || cfg.cols < 1) throw ConfigError("client grid must have at least one row and column");
  if (cfg.neighbor_mix < 0.0 || cfg.neighbor_mix > 0.5) throw ConfigError("neighbor mix must be in [0, 0.5]");
  if (cells.empty()) throw ConfigError("cannot partition an empty cell set");
  const int n = cfg.rows * cfg.cols;
  const std::size_t min_size = static_cast<std::size_t>(std::max(1, cfg.min_client_samples));
  if (cells.size() < min_size * n) {
    throw ConfigError("scenario has " + std::to_string(cells.size()) + " cells, fewer than " +
                      std::to_string(min_size * n) + " needed for " + std::to_string(n) + " clients");
  }

  std::vector<std::vector<Cell>> tiles(n);
  for (const Cell& c : cells) {
    const int tr = std::min(cfg.rows - 1, c.row * cfg.rows / height);
    const int tc = std::min(cfg.cols - 1, c.col * cfg.cols / width);
    tiles[tr * cfg.cols + tc].push_back(c);
  }

  auto tile_dist2 = [&](int a, int b) {
    const int dr = a / cfg.cols - b / cfg.cols;
    const int dc = a % cfg.cols - b % cfg.cols;
    return dr * dr + dc * dc;
  };

  // Merge under-populated tiles into the nearest adequate tile.
  for (int k = 0; k < n; ++k) {
    if (tiles[k].empty() || tiles[k].size() >= min_size) continue;
    int best = -1;
    for (int j = 0; j < n; ++j) {
      if (j == k || tiles[j].size() < min_size) continue;
      if (best < 0 || tile_dist2(k, j) < tile_dist2(k, best)) best = j;
    }
    if (best < 0) throw ConfigError("no tile holds enough samples to absorb small tiles");
    tiles[best].insert(tiles[best].end(), tiles[k].begin(), tiles[k].end());
    tiles[k].clear();
  }
  // Refill empty slots by halving the largest tile along its longer extent.
  for (int k = 0; k < n; ++k) {
    if (!tiles[k].empty()) continue;
    int largest = 0;
    for (int j = 1; j < n; ++j)
      if (tiles[j].size() > tiles[largest].size()) largest = j;
    std::vector<Cell>& src = tiles[largest];
    if (src.size() < 2 * min_size) throw ConfigError("not enough samples to keep every client populated");
    auto [rmin, rmax] = std::minmax_element(src.begin(), src.end(), [](auto& a, auto& b) { return a.row < b.row; });
    auto [cmin, cmax] = std::minmax_element(src.begin(), src.end(), [](auto& a, auto& b) { return a.col < b.col; });
    const bool by_row = (rmax->row - rmin->row) >= (cmax->col - cmin->col);
    std::sort(src.begin(), src.end(), [by_row](const Cell& a, const Cell& b) {
      return by_row ? std::tie(a.row, a.col) < std::tie(b.row, b.col) : std::tie(a.col, a.row) < std::tie(b.col, b.row);
    });
    const std::size_t half = src.size() / 2;
    tiles[k].assign(src.begin() + static_cast<std::ptrdiff_t>(half), src.end());
    src.resize(half);
  }

  // Neighbour mixing: each tile sends floor(mix * size) of its samples, chosen
  // uniformly, each to a uniformly chosen tile of its 8-neighbourhood.
  std::vector<std::vector<Cell>> clients = tiles;
  if (cfg.neighbor_mix > 0.0 && n > 1) {
    std::mt19937_64 rng(derive_seed(cfg.seed, {11}));
    std::vector<std::vector<Cell>> received(n);
    for (int j = 0; j < n; ++j) {
      std::vector<int> neighbours;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int r = j / cfg.cols + dr;
          const int c = j % cfg.cols + dc;
          if ((dr != 0 || dc != 0) && r >= 0 && r < cfg.rows && c >= 0 && c < cfg.cols) {
            neighbours.push_back(r * cfg.cols + c);
          }
        }
      std::vector<Cell>& own = clients[j];
      std::shuffle(own.begin(), own.end(), rng);
      const auto give = static_cast<std::size_t>(std::floor(cfg.neighbor_mix * static_cast<double>(own.size())));
      std::uniform_int_distribution<std::size_t> pick(0, neighbours.size() - 1);
      for (std::size_t i = 0; i < give; ++i) received[neighbours[pick(rng)]].push_back(own[own.size() - 1 - i]);
      own.resize(own.size() - give);
    }
    for (int k = 0; k < n; ++k) clients[k].insert(clients[k].end(), received[k].begin(), received[k].end());
  }
  for (auto& c : clients) std::sort(c.begin(), c.end());
  return clients;
}

RawSamples gather_samples(const RadioMapGrid& map, std::span<const Cell> cells) {
  const auto n = static_cast<Eigen::Index>(cells.size());
  RawSamples s;
  s.inputs.resize(map.input_dim(), n);
  s.labels.resize(map.num_bs(), n);
  s.cells.assign(cells.begin(), cells.end());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Cell& c = cells[static_cast<std::size_t>(i)];
    s.inputs(0, i) = c.col;
    s.inputs(1, i) = c.row;
    for (int k = 0; k < map.num_features(); ++k) s.inputs(2 + k, i) = map.features[k](c.row, c.col);
    for (int b = 0; b < map.num_bs(); ++b) s.labels(b, i) = map.signals[b](c.row, c.col);
  }
  return s;
}

ClientDataset normalize_client(const RawSamples& train, const RawSamples& test, bool per_bs_stats) {
  if (train.inputs.cols() < 2) throw DegenerateClientError("client needs at least two training samples");
  if (train.inputs.rows() < 2 || test.inputs.rows() != train.inputs.rows() ||
      test.labels.rows() != train.labels.rows() || train.labels.cols() != train.inputs.cols() ||
      test.labels.cols() != test.inputs.cols()) {
    throw DimensionError("normalize_client: train/test sample shapes disagree");
  }
  ClientDataset d;
  NormalizationStats& st = d.stats;
  for (int a = 0; a < 2; ++a) {
    st.coord_min[a] = train.inputs.row(a).minCoeff();
    st.coord_max[a] = train.inputs.row(a).maxCoeff();
  }
  const Eigen::Index m = train.labels.rows();
  if (per_bs_stats) {
    st.label_mean = train.labels.rowwise().mean();
    st.label_std = ((train.labels.colwise() - st.label_mean).array().square().rowwise().mean()).sqrt().matrix();
  } else {
    const double mu = train.labels.mean();
    const double sd = std::sqrt((train.labels.array() - mu).square().mean());
    st.label_mean = Eigen::VectorXd::Constant(m, mu);
    st.label_std = Eigen::VectorXd::Constant(m, sd);
  }
  if (!(st.label_std.array() > 0.0).all()) throw DegenerateClientError("client labels have zero variance");

  auto scale_inputs = [&st](const Eigen::MatrixXd& raw) {
    Eigen::MatrixXd x = raw;
    for (int a = 0; a < 2; ++a) {
      const double range = st.coord_max[a] - st.coord_min[a];
      if (range > 0.0) {
        x.row(a) = ((raw.row(a).array() - st.coord_min[a]) / range).cwiseMax(0.0).cwiseMin(1.0).matrix();
      } else {
        x.row(a).setConstant(0.5);
      }
    }
    return x;
  };
  auto scale_labels = [&st](const Eigen::MatrixXd& raw) {
    return ((raw.colwise() - st.label_mean).array().colwise() / st.label_std.array()).matrix().eval();
  };
  d.train_x = scale_inputs(train.inputs);
  d.test_x = scale_inputs(test.inputs);
  d.train_y = scale_labels(train.labels);
  d.test_y = scale_labels(test.labels);
  d.train_cells = train.cells;
  d.test_cells = test.cells;
  return d;
}

Eigen::MatrixXd denormalize(const Eigen::MatrixXd& normalized, const NormalizationStats& stats) {
  if (normalized.rows() != stats.label_mean.size()) {
    throw DimensionError("denormalize: prediction has " + std::to_string(normalized.rows()) + " rows, stats " +
                         std::to_string(stats.label_mean.size()));
  }
  return ((normalized.array().colwise() * stats.label_std.array()).colwise() + stats.label_mean.array()).matrix();
}

ScenarioPartition build_partition(const RadioMapGrid& map, Scenario scenario, const PartitionConfig& cfg) {
  if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0)) throw ConfigError("test fraction must be in (0, 1)");
  const HeterogeneityField field = heterogeneity(map);
  const std::vector<Cell> cells = scenario_filter(field, scenario);
  const auto groups = grid_partition(cells, map.width, map.height, cfg);

  ScenarioPartition part;
  part.scenario = scenario;
  part.rows = cfg.rows;
  part.cols = cfg.cols;
  part.seed = cfg.seed;
  part.neighbor_mix = cfg.neighbor_mix;
  part.test_fraction = cfg.test_fraction;
  part.q33 = field.q33;
  part.q66 = field.q66;
  part.num_bs = map.num_bs();
  part.num_features = map.num_features();
  part.clients.reserve(groups.size());
  for (std::size_t k = 0; k < groups.size(); ++k) {
    std::vector<Cell> order = groups[k];
    std::mt19937_64 rng(derive_seed(cfg.seed, {12, k}));
    std::shuffle(order.begin(), order.end(), rng);
    const auto total = static_cast<long>(order.size());
    const long n_test = std::max(1L, std::lround(cfg.test_fraction * static_cast<double>(total)));
    if (total - n_test < 2) {
      throw DegenerateClientError("client " + std::to_string(k) + " has too few samples for a train/test split");
    }
    std::span<const Cell> all(order);
    RawSamples train = gather_samples(map, all.first(static_cast<std::size_t>(total - n_test)));
    RawSamples test = gather_samples(map, all.last(static_cast<std::size_t>(n_test)));
    ClientDataset d;
    try {
      d = normalize_client(train, test, cfg.per_bs_stats);
    } catch (const DegenerateClientError& e) {
      throw DegenerateClientError("client " + std::to_string(k) + ": " + e.what());
    }
    d.id = static_cast<int>(k);
    d.tile_row = static_cast<int>(k) / cfg.cols;
    d.tile_col = static_cast<int>(k) % cfg.cols;
    part.clients.push_back(std::move(d));
  }
  return part;
}

}  // namespace fedrem
