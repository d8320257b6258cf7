#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfield/io/image.hpp"
#include "mfield/metrics/metrics.hpp"

namespace mfield {

inline constexpr const char* kCsvHeader = "scene,manipulated,direction,finetuned,psnr,ssim,mae,epsnr";

/// One matrix cell. The baseline row uses manipulated = "none"; the
/// no-fine-tune column uses finetuned = "none".
struct MatrixCell {
  std::string scene;
  std::string manipulated;
  std::string direction;
  std::string finetuned;
  MetricBundle metrics;

  bool operator==(const MatrixCell&) const = default;
};

struct ExperimentMatrix {
  std::vector<MatrixCell> cells;

  bool operator==(const ExperimentMatrix&) const = default;

  const MatrixCell* find(const std::string& manipulated, const std::string& direction,
                         const std::string& finetuned) const {
    for (const auto& c : cells) {
      if (c.manipulated == manipulated && c.direction == direction && c.finetuned == finetuned) return &c;
    }
    return nullptr;
  }
};

/// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  if (!std::isfinite(v)) throw IoError("refusing to write non-finite value");
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw IoError(where + ": bad number '" + s + "'");
  if (!std::isfinite(v)) throw IoError(where + ": non-finite value");
  return v;
}

namespace detail {

inline void check_csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") != std::string::npos) throw IoError("CSV field contains a separator: '" + s + "'");
}

}  // namespace detail

inline std::string matrix_csv(const ExperimentMatrix& m) {
  std::ostringstream os;
  os << kCsvHeader << "\n";
  for (const auto& c : m.cells) {
    for (const auto* f : {&c.scene, &c.manipulated, &c.direction, &c.finetuned}) detail::check_csv_field(*f);
    os << c.scene << "," << c.manipulated << "," << c.direction << "," << c.finetuned << ","
       << format_double(c.metrics.psnr) << "," << format_double(c.metrics.ssim) << "," << format_double(c.metrics.mae)
       << "," << format_double(c.metrics.epsnr) << "\n";
  }
  return os.str();
}

inline ExperimentMatrix parse_matrix_csv(const std::string& text, const std::string& where = "csv") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw IoError(where + ": unexpected CSV header");
  ExperimentMatrix m;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    const std::string at = where + ":" + std::to_string(row);
    if (f.size() != 8) throw IoError(at + ": expected 8 fields");
    MatrixCell c{f[0], f[1], f[2], f[3], {}};
    c.metrics.psnr = parse_double(f[4], at);
    c.metrics.ssim = parse_double(f[5], at);
    c.metrics.mae = parse_double(f[6], at);
    c.metrics.epsnr = parse_double(f[7], at);
    m.cells.push_back(std::move(c));
  }
  return m;
}

inline nlohmann::json matrix_json(const ExperimentMatrix& m) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : m.cells) {
    for (double v : {c.metrics.psnr, c.metrics.ssim, c.metrics.mae, c.metrics.epsnr}) {
      if (!std::isfinite(v)) throw IoError("refusing to write non-finite value");
    }
    cells.push_back({{"scene", c.scene},
                     {"manipulated", c.manipulated},
                     {"direction", c.direction},
                     {"finetuned", c.finetuned},
                     {"psnr", c.metrics.psnr},
                     {"ssim", c.metrics.ssim},
                     {"mae", c.metrics.mae},
                     {"epsnr", c.metrics.epsnr},
                     {"pixels", c.metrics.pixels},
                     {"normal_pixels", c.metrics.normal_pixels}});
  }
  return {{"cells", cells}};
}

inline ExperimentMatrix parse_matrix_json(const nlohmann::json& j) {
  ExperimentMatrix m;
  for (const auto& e : j.at("cells")) {
    MatrixCell c;
    c.scene = e.at("scene").get<std::string>();
    c.manipulated = e.at("manipulated").get<std::string>();
    c.direction = e.at("direction").get<std::string>();
    c.finetuned = e.at("finetuned").get<std::string>();
    for (auto [key, field] : {std::pair{"psnr", &c.metrics.psnr}, {"ssim", &c.metrics.ssim}, {"mae", &c.metrics.mae},
                              {"epsnr", &c.metrics.epsnr}}) {
      if (!e.at(key).is_number()) throw IoError(std::string("matrix json: non-numeric ") + key);
      *field = e.at(key).get<double>();
      if (!std::isfinite(*field)) throw IoError(std::string("matrix json: non-finite ") + key);
    }
    c.metrics.pixels = e.value("pixels", std::size_t{0});
    c.metrics.normal_pixels = e.value("normal_pixels", std::size_t{0});
    m.cells.push_back(std::move(c));
  }
  return m;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw IoError(path.string() + ": write failed");
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace mfield
