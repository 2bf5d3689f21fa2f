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

// REMG1 grid file: "REMG1", u32 width, u32 height, u32 M, u32 P (little
// endian), then M signal layers followed by P feature layers, each float32
// row-major.

#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "fedrem/data.hpp"
#include "fedrem/io_util.hpp"

namespace fedrem {

namespace {

constexpr char kGridMagic[5] = {'R', 'E', 'M', 'G', '1'};
constexpr std::size_t kGridHeader = 5 + 4 * 4;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> encode_grid(const RadioMapGrid& grid) {
  grid.validate();
  std::vector<std::uint8_t> out;
  const std::size_t cells = static_cast<std::size_t>(grid.width) * grid.height;
  out.reserve(kGridHeader + 4 * cells * (grid.signals.size() + grid.features.size()));
  out.insert(out.end(), std::begin(kGridMagic), std::end(kGridMagic));
  put_u32(out, static_cast<std::uint32_t>(grid.width));
  put_u32(out, static_cast<std::uint32_t>(grid.height));
  put_u32(out, static_cast<std::uint32_t>(grid.num_bs()));
  put_u32(out, static_cast<std::uint32_t>(grid.num_features()));
  auto emit = [&](const GridLayer& l) {
    for (int r = 0; r < grid.height; ++r)
      for (int c = 0; c < grid.width; ++c) put_f32(out, l(r, c));
  };
  for (const auto& l : grid.signals) emit(l);
  for (const auto& l : grid.features) emit(l);
  return out;
}

RadioMapGrid decode_grid(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kGridHeader) throw IngestError("grid file truncated: header needs 21 bytes");
  if (!std::equal(std::begin(kGridMagic), std::end(kGridMagic), bytes.begin())) {
    throw IngestError("bad grid magic (expected REMG1)");
  }
  const std::uint64_t w = get_u32(bytes, 5);
  const std::uint64_t h = get_u32(bytes, 9);
  const std::uint64_t m = get_u32(bytes, 13);
  const std::uint64_t p = get_u32(bytes, 17);
  if (w == 0 || h == 0) throw IngestError("grid header declares an empty grid");
  const std::uint64_t expected = kGridHeader + 4 * w * h * (m + p);
  if (bytes.size() != expected) {
    throw IngestError("grid size mismatch: header implies " + std::to_string(expected) + " bytes, file has " +
                      std::to_string(bytes.size()));
  }
  RadioMapGrid grid;
  grid.width = static_cast<int>(w);
  grid.height = static_cast<int>(h);
  std::size_t pos = kGridHeader;
  auto take = [&](const char* kind, std::uint64_t k) {
    GridLayer l(grid.height, grid.width);
    for (int r = 0; r < grid.height; ++r)
      for (int c = 0; c < grid.width; ++c, pos += 4) {
        const float v = get_f32(bytes, pos);
        if (!std::isfinite(v)) {
          throw IngestError(std::string("non-finite ") + kind + " value in layer " + std::to_string(k) + " at row " +
                            std::to_string(r) + ", col " + std::to_string(c));
        }
        l(r, c) = v;
      }
    return l;
  };
  for (std::uint64_t k = 0; k < m; ++k) grid.signals.push_back(take("signal", k));
  for (std::uint64_t k = 0; k < p; ++k) grid.features.push_back(take("feature", k));
  return grid;
}

void write_grid(const RadioMapGrid& grid, const std::filesystem::path& path) {
  const auto bytes = encode_grid(grid);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

RadioMapGrid read_grid(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_grid(bytes);
}

// CSV form: header "row,col,s1..sM,f1..fP", one line per cell in row-major order.
void write_grid_csv(const RadioMapGrid& grid, const std::filesystem::path& path) {
  grid.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IngestError("cannot write " + path.string());
  out << "row,col";
  for (int b = 1; b <= grid.num_bs(); ++b) out << ",s" << b;
  for (int k = 1; k <= grid.num_features(); ++k) out << ",f" << k;
  out << '\n';
  for (int r = 0; r < grid.height; ++r)
    for (int c = 0; c < grid.width; ++c) {
      out << r << ',' << c;
      for (const auto& l : grid.signals) out << ',' << format_number(l(r, c));
      for (const auto& l : grid.features) out << ',' << format_number(l(r, c));
      out << '\n';
    }
}

RadioMapGrid read_grid_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IngestError(path.string() + ": empty CSV grid");
  const auto header = split(trim(line), ',');
  if (header.size() < 2 || header[0] != "row" || header[1] != "col") {
    throw IngestError(path.string() + ": CSV header must start with row,col");
  }
  int m = 0;
  int p = 0;
  for (std::size_t i = 2; i < header.size(); ++i) {
    const std::string_view h = header[i];
    const std::string want_s = "s" + std::to_string(m + 1);
    const std::string want_f = "f" + std::to_string(p + 1);
    if (p == 0 && h == want_s) {
      ++m;
    } else if (h == want_f) {
      ++p;
    } else {
      throw IngestError(path.string() + ": unexpected header column '" + std::string(h) + "'");
    }
  }
  std::map<Cell, std::vector<float>> rows;
  int max_r = -1;
  int max_c = -1;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(trim(line), ',');
    if (fields.size() != header.size()) {
      throw IngestError(path.string() + " line " + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    }
    const auto r = parse_number<int>(fields[0]);
    const auto c = parse_number<int>(fields[1]);
    if (!r || !c || *r < 0 || *c < 0) throw IngestError(path.string() + " line " + std::to_string(line_no) + ": bad cell index");
    std::vector<float> vals;
    for (std::size_t i = 2; i < fields.size(); ++i) {
      const auto v = parse_number<float>(fields[i]);
      if (!v || !std::isfinite(*v)) {
        throw IngestError(path.string() + " line " + std::to_string(line_no) + ": non-finite or malformed value in column " +
                          std::string(header[i]) + " at row " + std::to_string(*r) + ", col " + std::to_string(*c));
      }
      vals.push_back(*v);
    }
    if (!rows.emplace(Cell{*r, *c}, std::move(vals)).second) {
      throw IngestError(path.string() + " line " + std::to_string(line_no) + ": duplicate cell");
    }
    max_r = std::max(max_r, *r);
    max_c = std::max(max_c, *c);
  }
  if (rows.empty()) throw IngestError(path.string() + ": CSV grid has no cells");
  RadioMapGrid grid;
  grid.width = max_c + 1;
  grid.height = max_r + 1;
  if (rows.size() != static_cast<std::size_t>(grid.width) * grid.height) {
    throw IngestError(path.string() + ": dimension mismatch, " + std::to_string(rows.size()) + " cells for a " +
                      std::to_string(grid.height) + "x" + std::to_string(grid.width) + " grid");
  }
  grid.signals.assign(m, GridLayer(grid.height, grid.width));
  grid.features.assign(p, GridLayer(grid.height, grid.width));
  for (const auto& [cell, vals] : rows) {
    for (int b = 0; b < m; ++b) grid.signals[b](cell.row, cell.col) = vals[b];
    for (int k = 0; k < p; ++k) grid.features[k](cell.row, cell.col) = vals[m + k];
  }
  return grid;
}

RadioMapGrid ingest_grid(const std::filesystem::path& path, GridFormat format) {
  RadioMapGrid g = format == GridFormat::Binary ? read_grid(path) : read_grid_csv(path);
  g.validate();
  return g;
}

}  // namespace fedrem
