#pragma once

// File helpers: CSV tables, binary PGM/PPM images, raw little-endian f64
// arrays. All failures raise IoError.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "hamflow/core.hpp"

namespace hamflow::io {

namespace fs = std::filesystem;

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

/// Streams rows to a CSV file. Reals are written with 17 significant digits
/// so values round-trip exactly. Lines starting with '#' are comments.
class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header, const std::vector<std::string>& comments = {})
      : path_(path), os_(path, std::ios::trunc) {
    if (!os_) throw IoError("cannot open " + path.string() + " for writing");
    os_ << std::setprecision(17);
    for (const auto& c : comments) os_ << "# " << c << '\n';
    write_fields(header);
  }

  template <class... Fields>
  void row(const Fields&... fields) {
    bool first = true;
    ((emit(fields, first)), ...);
    os_ << '\n';
    check();
  }

  void row_values(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) os_ << (i ? "," : "") << values[i];
    os_ << '\n';
    check();
  }

  void close() {
    os_.close();
    if (os_.fail()) throw IoError("write failed: " + path_.string());
  }

 private:
  template <class T>
  void emit(const T& v, bool& first) {
    if (!first) os_ << ',';
    first = false;
    os_ << v;
  }
  void write_fields(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) os_ << (i ? "," : "") << fields[i];
    os_ << '\n';
    check();
  }
  void check() {
    if (!os_) throw IoError("write failed: " + path_.string());
  }

  fs::path path_;
  std::ofstream os_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw IoError("CSV has no column '" + name + "'");
  }
  double number(std::size_t row, const std::string& name) const { return std::stod(rows.at(row).at(column(name))); }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

/// Reads a CSV written by CsvWriter (comment lines skipped).
inline CsvTable read_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  bool have_header = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!have_header) {
      t.header = split_csv_line(line);
      have_header = true;
    } else {
      t.rows.push_back(split_csv_line(line));
    }
  }
  if (!have_header) throw IoError("empty CSV: " + path.string());
  return t;
}

struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved channels

  Image() = default;
  Image(int w, int h, int c = 3)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, 0) {}
  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

/// Binary PPM (P6) for 3 channels, PGM (P5) for 1.
inline void write_pnm(const fs::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("write_pnm: channels must be 1 or 3");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

inline Image read_pnm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if ((magic != "P6" && magic != "P5") || w <= 0 || h <= 0 || maxval != 255)
    throw IoError("unsupported PNM file: " + path.string());
  is.get();
  Image img(w, h, magic == "P6" ? 3 : 1);
  if (!is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size())))
    throw IoError("truncated PNM file: " + path.string());
  return img;
}

/// Grayscale heatmap of a row-major grid (row 0 at the top), linearly
/// mapped from [min, max] to [0, 255].
inline Image heatmap(const std::vector<double>& values, int nx, int ny) {
  if (values.size() != static_cast<std::size_t>(nx) * ny) throw ShapeError("heatmap: size mismatch");
  double lo = INFINITY, hi = -INFINITY;
  for (double v : values)
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  Image img(nx, ny, 1);
  const double span = hi > lo ? hi - lo : 1.0;
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x) {
      const double v = values[static_cast<std::size_t>(y) * nx + x];
      const double u = std::isfinite(v) ? (v - lo) / span : 0.0;
      img.at(x, ny - 1 - y, 0) = static_cast<std::uint8_t>(std::lround(std::clamp(u, 0.0, 1.0) * 255.0));
    }
  return img;
}

inline void append_f64_le(std::vector<std::uint8_t>& out, double x) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

inline double load_f64_le(const std::uint8_t* b) {
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= std::uint64_t{b[i]} << (8 * i);
  return std::bit_cast<double>(x);
}

inline void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

inline std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw IoError("cannot open " + path.string());
  const auto size = static_cast<std::size_t>(is.tellg());
  std::vector<std::uint8_t> out(size);
  is.seekg(0);
  if (size && !is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(size)))
    throw IoError("read failed: " + path.string());
  return out;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace hamflow::io
