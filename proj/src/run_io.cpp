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

#include "fedrem/run_io.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <span>
#include <string_view>

#include "fedrem/io_util.hpp"

namespace fedrem {

namespace {

constexpr char kModelMagic[5] = {'F', 'R', 'M', 'D', '1'};

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_all(const std::string& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IngestError("write failed: " + path);
}

}  // namespace

std::string round_log_header(int num_bs) {
  std::string h = "round,scenario,mode,rmse_micro,rmse_macro,mae_macro";
  for (int m = 1; m <= num_bs; ++m) h += ",rmse_bs_" + std::to_string(m);
  h += ",cum_uplink_mb,wall_ms,cum_uplink_bytes,payloads";
  return h;
}

void write_round_log(const std::string& path, const std::vector<RoundRecord>& log) {
  const int num_bs = log.empty() ? 0 : static_cast<int>(log.front().metrics.per_bs_rmse.size());
  std::string out = round_log_header(num_bs) + "\n";
  for (const auto& r : log) {
    out += std::to_string(r.round) + "," + r.scenario + "," + to_string(r.mode) + ",";
    out += format_number(r.metrics.rmse_micro) + "," + format_number(r.metrics.rmse_macro) + "," +
           format_number(r.metrics.mae_macro);
    for (Eigen::Index m = 0; m < r.metrics.per_bs_rmse.size(); ++m) {
      out += "," + format_number(r.metrics.per_bs_rmse(m));
    }
    out += "," + format_number(to_megabytes(r.cum_uplink_bytes)) + "," + format_number(r.wall_ms) + "," +
           std::to_string(r.cum_uplink_bytes) + "," + std::to_string(r.payloads) + "\n";
  }
  write_all(path, out);
}

std::vector<LoggedRound> read_round_log(const std::string& path) {
  const std::string text = read_all(path);
  auto lines = split(text, '\n');
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw IngestError(path + ": empty round log");

  std::map<std::string, std::size_t, std::less<>> col;
  const auto header = split(trim(lines[0]), ',');
  for (std::size_t i = 0; i < header.size(); ++i) col.emplace(std::string(trim(header[i])), i);

  for (const char* name : {"round", "scenario", "mode", "rmse_micro", "rmse_macro", "mae_macro", "rmse_bs_1",
                           "cum_uplink_mb", "wall_ms"}) {
    if (!col.count(name)) throw MissingColumnError(path, name);
  }
  int num_bs = 0;
  while (col.count("rmse_bs_" + std::to_string(num_bs + 1))) ++num_bs;

  std::vector<LoggedRound> rows;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto cells = split(trim(lines[li]), ',');
    const std::string where = path + " line " + std::to_string(li + 1);
    if (cells.size() != header.size()) {
      throw IngestError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                        std::to_string(cells.size()));
    }
    auto cell = [&](const std::string& name) { return trim(cells[col.find(name)->second]); };
    auto num = [&](const std::string& name) {
      auto v = parse_number<double>(cell(name));
      if (!v) throw IngestError(where + ": bad value in column '" + name + "'");
      return *v;
    };
    LoggedRound r;
    auto round = parse_number<int>(cell("round"));
    if (!round) throw IngestError(where + ": bad value in column 'round'");
    r.round = *round;
    r.scenario = std::string(cell("scenario"));
    r.mode = std::string(cell("mode"));
    r.rmse_micro = num("rmse_micro");
    r.rmse_macro = num("rmse_macro");
    r.mae_macro = num("mae_macro");
    for (int m = 1; m <= num_bs; ++m) r.rmse_bs.push_back(num("rmse_bs_" + std::to_string(m)));
    r.cum_uplink_mb = num("cum_uplink_mb");
    r.wall_ms = num("wall_ms");
    if (col.count("cum_uplink_bytes")) {
      auto v = parse_number<std::uint64_t>(cell("cum_uplink_bytes"));
      if (!v) throw IngestError(where + ": bad value in column 'cum_uplink_bytes'");
      r.cum_uplink_bytes = *v;
    }
    if (col.count("payloads")) {
      auto v = parse_number<int>(cell("payloads"));
      if (!v) throw IngestError(where + ": bad value in column 'payloads'");
      r.payloads = *v;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_model(const std::string& path, const NamedVectors& sections) {
  std::vector<std::uint8_t> out(kModelMagic, kModelMagic + sizeof kModelMagic);
  put_u32(out, static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, v] : sections) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const auto bits = std::bit_cast<std::uint64_t>(v(i));
      for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>((bits >> (8 * k)) & 0xff));
    }
  }
  write_all(path, std::string_view(reinterpret_cast<const char*>(out.data()), out.size()));
}

NamedVectors read_model(const std::string& path) {
  const std::string raw = read_all(path);
  const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size());
  const std::string_view data = raw;
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (data.size() - pos < n) throw IngestError(path + ": truncated model file");
  };
  need(sizeof kModelMagic);
  if (data.compare(0, sizeof kModelMagic, kModelMagic, sizeof kModelMagic) != 0) {
    throw IngestError(path + ": not a model file");
  }
  pos = sizeof kModelMagic;
  auto u32 = [&] {
    need(4);
    const auto v = get_u32(bytes, pos);
    pos += 4;
    return v;
  };
  NamedVectors sections;
  const std::uint32_t count = u32();
  for (std::uint32_t s = 0; s < count; ++s) {
    const std::uint32_t name_len = u32();
    need(name_len);
    std::string name(data.substr(pos, name_len));
    pos += name_len;
    const std::uint32_t n = u32();
    need(std::size_t{n} * 8);
    Eigen::VectorXd v(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      std::uint64_t bits = 0;
      for (int k = 0; k < 8; ++k) bits |= std::uint64_t{static_cast<unsigned char>(data[pos + k])} << (8 * k);
      v(i) = std::bit_cast<double>(bits);
      pos += 8;
    }
    sections.emplace_back(std::move(name), std::move(v));
  }
  if (pos != data.size()) throw IngestError(path + ": trailing bytes in model file");
  return sections;
}

NamedVectors model_sections(const TrainingResult& result) {
  NamedVectors s;
  s.emplace_back("backbone", result.backbone.flat());
  if (result.ema_backbone) s.emplace_back("ema_backbone", result.ema_backbone->flat());
  if (result.shared_head) s.emplace_back("shared_head", result.shared_head->flat());
  for (std::size_t i = 0; i < result.heads.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "head_%03zu", i);
    s.emplace_back(name, result.heads[i].flat());
  }
  return s;
}

void write_run_dir(const std::string& dir, const ExperimentConfig& cfg, const TrainingResult& result) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path root(dir);
  write_all((root / kConfigFile).string(), config_to_text(cfg));
  write_round_log((root / kRoundLogFile).string(), result.log);
  write_model((root / kModelFile).string(), model_sections(result));

  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
  std::string manifest = "format=fedrem-run-1\n";
  manifest += std::string("config_hash=") + hash + "\n";
  manifest += "seed=" + std::to_string(cfg.run.seed) + "\n";
  manifest += "map_seed=" + std::to_string(cfg.map_seed) + "\n";
  manifest += "partition_seed=" + std::to_string(cfg.partition_seed) + "\n";
  manifest += "mode=" + to_string(cfg.run.mode) + "\n";
  manifest += "scenario=" + cfg.scenario + "\n";
  manifest += "rounds=" + std::to_string(cfg.run.rounds) + "\n";
  if (!result.log.empty()) {
    const auto& last = result.log.back();
    manifest += "final_rmse_macro=" + format_number(last.metrics.rmse_macro) + "\n";
    manifest += "cum_uplink_bytes=" + std::to_string(last.cum_uplink_bytes) + "\n";
  }
  write_all((root / kManifestFile).string(), manifest);
}

}  // namespace fedrem
