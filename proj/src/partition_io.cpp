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

// Partition directory layout:
//
//   partition.txt            key=value manifest
//   client_NNN/stats.txt     key=value normalization statistics
//   client_NNN/train.csv     row,col,x,y,f1..fP,s1..sM (normalized)
//   client_NNN/test.csv      same columns

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "fedrem/data.hpp"
#include "fedrem/io_util.hpp"

namespace fedrem {

namespace fs = std::filesystem;

namespace {

using KeyValues = std::map<std::string, std::string, std::less<>>;

KeyValues read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path.string());
  KeyValues kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) {
      throw IngestError(path.string() + " line " + std::to_string(line_no) + ": expected key=value");
    }
    kv.emplace(std::string(trim(t.substr(0, eq))), std::string(trim(t.substr(eq + 1))));
  }
  return kv;
}

const std::string& require(const KeyValues& kv, std::string_view key, const fs::path& path) {
  auto it = kv.find(key);
  if (it == kv.end()) throw IngestError(path.string() + ": missing key '" + std::string(key) + "'");
  return it->second;
}

template <typename T>
T require_number(const KeyValues& kv, std::string_view key, const fs::path& path) {
  auto v = parse_number<T>(require(kv, key, path));
  if (!v) throw IngestError(path.string() + ": key '" + std::string(key) + "' is not a number");
  return *v;
}

Eigen::VectorXd require_vector(const KeyValues& kv, std::string_view key, const fs::path& path) {
  const auto parts = split(require(kv, key, path), ',');
  Eigen::VectorXd v(static_cast<Eigen::Index>(parts.size()));
  for (std::size_t i = 0; i < parts.size(); ++i) {
    auto x = parse_number<double>(parts[i]);
    if (!x) throw IngestError(path.string() + ": key '" + std::string(key) + "' has a malformed entry");
    v(static_cast<Eigen::Index>(i)) = *x;
  }
  return v;
}

std::string join(const Eigen::VectorXd& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += format_number(v(i));
  }
  return s;
}

std::string client_dir_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "client_%03d", id);
  return buf;
}

void write_samples(const fs::path& path, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                   const std::vector<Cell>& cells) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IngestError("cannot write " + path.string());
  out << "row,col,x,y";
  for (Eigen::Index k = 1; k <= x.rows() - 2; ++k) out << ",f" << k;
  for (Eigen::Index b = 1; b <= y.rows(); ++b) out << ",s" << b;
  out << '\n';
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    out << cells[static_cast<std::size_t>(i)].row << ',' << cells[static_cast<std::size_t>(i)].col;
    for (Eigen::Index r = 0; r < x.rows(); ++r) out << ',' << format_number(x(r, i));
    for (Eigen::Index r = 0; r < y.rows(); ++r) out << ',' << format_number(y(r, i));
    out << '\n';
  }
}

void read_samples(const fs::path& path, int input_dim, int num_bs, Eigen::MatrixXd& x, Eigen::MatrixXd& y,
                  std::vector<Cell>& cells) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IngestError(path.string() + ": empty file");
  const std::size_t width = 2 + static_cast<std::size_t>(input_dim + num_bs);
  if (split(trim(line), ',').size() != width) throw IngestError(path.string() + ": header column count mismatch");
  std::vector<std::vector<double>> rows;
  cells.clear();
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split(trim(line), ',');
    if (f.size() != width) throw IngestError(path.string() + " line " + std::to_string(line_no) + ": wrong field count");
    auto r = parse_number<int>(f[0]);
    auto c = parse_number<int>(f[1]);
    if (!r || !c) throw IngestError(path.string() + " line " + std::to_string(line_no) + ": bad cell index");
    cells.push_back({*r, *c});
    std::vector<double> vals;
    for (std::size_t i = 2; i < f.size(); ++i) {
      auto v = parse_number<double>(f[i]);
      if (!v) throw IngestError(path.string() + " line " + std::to_string(line_no) + ": malformed number");
      vals.push_back(*v);
    }
    rows.push_back(std::move(vals));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  x.resize(input_dim, n);
  y.resize(num_bs, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& v = rows[static_cast<std::size_t>(i)];
    for (int r = 0; r < input_dim; ++r) x(r, i) = v[static_cast<std::size_t>(r)];
    for (int b = 0; b < num_bs; ++b) y(b, i) = v[static_cast<std::size_t>(input_dim + b)];
  }
}

}  // namespace

void export_partition(const ScenarioPartition& part, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "partition.txt", std::ios::trunc);
    if (!out) throw IngestError("cannot write " + (dir / "partition.txt").string());
    out << "format=fedrem-partition-1\n"
        << "scenario=" << to_string(part.scenario) << '\n'
        << "rows=" << part.rows << '\n'
        << "cols=" << part.cols << '\n'
        << "clients=" << part.clients.size() << '\n'
        << "seed=" << part.seed << '\n'
        << "neighbor_mix=" << format_number(part.neighbor_mix) << '\n'
        << "test_fraction=" << format_number(part.test_fraction) << '\n'
        << "q33=" << format_number(part.q33) << '\n'
        << "q66=" << format_number(part.q66) << '\n'
        << "num_bs=" << part.num_bs << '\n'
        << "num_features=" << part.num_features << '\n';
  }
  for (const ClientDataset& c : part.clients) {
    const fs::path cdir = dir / client_dir_name(c.id);
    fs::create_directories(cdir);
    std::ofstream out(cdir / "stats.txt", std::ios::trunc);
    if (!out) throw IngestError("cannot write " + (cdir / "stats.txt").string());
    out << "client=" << c.id << '\n'
        << "tile_row=" << c.tile_row << '\n'
        << "tile_col=" << c.tile_col << '\n'
        << "train_samples=" << c.train_size() << '\n'
        << "test_samples=" << c.test_size() << '\n'
        << "coord_min_x=" << format_number(c.stats.coord_min[0]) << '\n'
        << "coord_max_x=" << format_number(c.stats.coord_max[0]) << '\n'
        << "coord_min_y=" << format_number(c.stats.coord_min[1]) << '\n'
        << "coord_max_y=" << format_number(c.stats.coord_max[1]) << '\n'
        << "label_mean=" << join(c.stats.label_mean) << '\n'
        << "label_std=" << join(c.stats.label_std) << '\n';
    write_samples(cdir / "train.csv", c.train_x, c.train_y, c.train_cells);
    write_samples(cdir / "test.csv", c.test_x, c.test_y, c.test_cells);
  }
}

ScenarioPartition load_partition(const fs::path& dir) {
  const fs::path manifest = dir / "partition.txt";
  const KeyValues kv = read_key_values(manifest);
  if (require(kv, "format", manifest) != "fedrem-partition-1") throw IngestError(manifest.string() + ": unknown format");
  ScenarioPartition part;
  try {
    part.scenario = parse_scenario(require(kv, "scenario", manifest));
  } catch (const ConfigError& e) {
    throw IngestError(manifest.string() + ": " + e.what());
  }
  part.rows = require_number<int>(kv, "rows", manifest);
  part.cols = require_number<int>(kv, "cols", manifest);
  part.seed = require_number<std::uint64_t>(kv, "seed", manifest);
  part.neighbor_mix = require_number<double>(kv, "neighbor_mix", manifest);
  part.test_fraction = require_number<double>(kv, "test_fraction", manifest);
  part.q33 = require_number<double>(kv, "q33", manifest);
  part.q66 = require_number<double>(kv, "q66", manifest);
  part.num_bs = require_number<int>(kv, "num_bs", manifest);
  part.num_features = require_number<int>(kv, "num_features", manifest);
  const int n = require_number<int>(kv, "clients", manifest);
  if (n != part.rows * part.cols || n <= 0) throw IngestError(manifest.string() + ": client count disagrees with grid");
  for (int id = 0; id < n; ++id) {
    const fs::path cdir = dir / client_dir_name(id);
    const fs::path stats = cdir / "stats.txt";
    const KeyValues s = read_key_values(stats);
    ClientDataset c;
    c.id = id;
    c.tile_row = require_number<int>(s, "tile_row", stats);
    c.tile_col = require_number<int>(s, "tile_col", stats);
    c.stats.coord_min = {require_number<double>(s, "coord_min_x", stats), require_number<double>(s, "coord_min_y", stats)};
    c.stats.coord_max = {require_number<double>(s, "coord_max_x", stats), require_number<double>(s, "coord_max_y", stats)};
    c.stats.label_mean = require_vector(s, "label_mean", stats);
    c.stats.label_std = require_vector(s, "label_std", stats);
    if (c.stats.label_mean.size() != part.num_bs || c.stats.label_std.size() != part.num_bs) {
      throw IngestError(stats.string() + ": label statistics length disagrees with num_bs");
    }
    read_samples(cdir / "train.csv", part.input_dim(), part.num_bs, c.train_x, c.train_y, c.train_cells);
    read_samples(cdir / "test.csv", part.input_dim(), part.num_bs, c.test_x, c.test_y, c.test_cells);
    if (c.train_size() != require_number<long>(s, "train_samples", stats) ||
        c.test_size() != require_number<long>(s, "test_samples", stats)) {
      throw IngestError(stats.string() + ": sample counts disagree with CSV contents");
    }
    part.clients.push_back(std::move(c));
  }
  return part;
}

}  // namespace fedrem
