#pragma once

// CSV tables and small self-contained PNG line charts (zlib for the IDAT
// stream, nothing else). Charts have axes, a light grid and one colored
// polyline per numeric column; there is deliberately no text rendering.

#include <glosmo/common.hpp>
#include <glosmo/serialize.hpp>

#include <zlib.h>

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace glosmo {

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream out;
  for (std::size_t i = 0; i < header.size(); ++i)
    out << header[i] << (i + 1 < header.size() ? "," : "");
  out << "\n";
  for (const auto& row : rows) {
    if (row.size() != header.size())
      throw std::invalid_argument("write_csv: row width does not match the header");
    for (std::size_t i = 0; i < row.size(); ++i)
      out << row[i] << (i + 1 < row.size() ? "," : "");
    out << "\n";
  }
  std::string s = out.str();
  write_file_bytes(path, s.data(), s.size());
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int cols() const { return static_cast<int>(header.size()); }
};

inline CsvTable read_numeric_csv(const std::string& path) {
  auto bytes = read_file_bytes(path);
  std::string text(bytes.begin(), bytes.end());
  std::istringstream in(text);
  std::string line;
  CsvTable table;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    if (first) {
      table.header = cells;
      first = false;
      continue;
    }
    if (cells.size() != table.header.size())
      throw format_error("csv row width mismatch in " + path);
    std::vector<double> row;
    for (const auto& c : cells) {
      try {
        row.push_back(std::stod(c));
      } catch (const std::exception&) {
        throw format_error("non-numeric csv cell \"" + c + "\" in " + path);
      }
    }
    table.rows.push_back(std::move(row));
  }
  if (table.header.empty()) throw format_error("empty csv: " + path);
  return table;
}

// Plot-friendly load: non-numeric columns are dropped, and when the first
// column is one of them (sample ids, variant names) the row index becomes x.
inline CsvTable load_plot_table(const std::string& path) {
  auto bytes = read_file_bytes(path);
  std::string text(bytes.begin(), bytes.end());
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> raw;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (header.empty())
      header = cells;
    else
      raw.push_back(cells);
  }
  if (header.empty() || raw.empty()) throw format_error("nothing to plot in " + path);

  std::vector<int> numeric_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    bool ok = true;
    for (const auto& row : raw) {
      if (c >= row.size()) {
        ok = false;
        break;
      }
      try {
        std::size_t used = 0;
        (void)std::stod(row[c], &used);
        if (used != row[c].size()) ok = false;
      } catch (const std::exception&) {
        ok = false;
      }
      if (!ok) break;
    }
    if (ok) numeric_cols.push_back(static_cast<int>(c));
  }
  if (numeric_cols.empty()) throw format_error("no numeric columns in " + path);

  bool synth_x = numeric_cols.front() != 0;
  CsvTable table;
  if (synth_x) table.header.push_back("index");
  for (int c : numeric_cols) table.header.push_back(header[static_cast<std::size_t>(c)]);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    std::vector<double> row;
    if (synth_x) row.push_back(static_cast<double>(i));
    for (int c : numeric_cols) row.push_back(std::stod(raw[i][static_cast<std::size_t>(c)]));
    table.rows.push_back(std::move(row));
  }
  return table;
}

namespace detail {

inline void png_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::vector<std::uint8_t>& data) {
  auto be32 = [&](std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
  };
  be32(static_cast<std::uint32_t>(data.size()));
  std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
  be32(crc);
}

}  // namespace detail

// 8-bit RGB, one deflate-compressed IDAT, filter 0 on every scanline.
inline void write_png_rgb(const std::string& path, const std::vector<std::uint8_t>& rgb, int width,
                          int height) {
  if (width < 1 || height < 1 ||
      rgb.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3)
    throw std::invalid_argument("write_png_rgb: buffer size does not match dimensions");

  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(height) * (1 + static_cast<std::size_t>(width) * 3));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    const std::uint8_t* row = rgb.data() + static_cast<std::size_t>(y) * width * 3;
    raw.insert(raw.end(), row, row + static_cast<std::size_t>(width) * 3);
  }

  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw numeric_error("png deflate failed");
  compressed.resize(bound);

  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  auto be32 = [&](std::uint32_t v) {
    ihdr.push_back(static_cast<std::uint8_t>(v >> 24));
    ihdr.push_back(static_cast<std::uint8_t>(v >> 16));
    ihdr.push_back(static_cast<std::uint8_t>(v >> 8));
    ihdr.push_back(static_cast<std::uint8_t>(v));
  };
  be32(static_cast<std::uint32_t>(width));
  be32(static_cast<std::uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: truecolor
  ihdr.push_back(0);  // deflate
  ihdr.push_back(0);  // filter method
  ihdr.push_back(0);  // no interlace
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", compressed);
  detail::png_chunk(out, "IEND", {});
  write_file_bytes(path, out.data(), out.size());
}

struct Canvas {
  int width, height;
  std::vector<std::uint8_t> rgb;

  Canvas(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 255) {}

  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    std::size_t at = (static_cast<std::size_t>(y) * width + x) * 3;
    rgb[at] = r;
    rgb[at + 1] = g;
    rgb[at + 2] = b;
  }

  void line(int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(x0, y0, r, g, b);
      if (x0 == x1 && y0 == y1) break;
      int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void fill_rect(int x0, int y0, int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x) set(x, y, r, g, b);
  }
};

// First column is x; every other column becomes a polyline. A colored square
// in the top-left corner identifies each series, in column order.
inline void write_line_plot_png(const std::string& path, const CsvTable& table, int width = 720,
                                int height = 440) {
  if (table.cols() < 2) throw std::invalid_argument("line plot needs an x column and a series");
  if (table.rows.empty()) throw std::invalid_argument("line plot needs at least one row");

  static const std::uint8_t palette[8][3] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},
                                             {214, 39, 40},  {148, 103, 189}, {140, 86, 75},
                                             {227, 119, 194}, {127, 127, 127}};

  double xmin = table.rows.front()[0], xmax = xmin;
  double ymin = table.rows.front()[1], ymax = ymin;
  for (const auto& row : table.rows) {
    xmin = std::min(xmin, row[0]);
    xmax = std::max(xmax, row[0]);
    for (int c = 1; c < table.cols(); ++c) {
      ymin = std::min(ymin, row[static_cast<std::size_t>(c)]);
      ymax = std::max(ymax, row[static_cast<std::size_t>(c)]);
    }
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  Canvas cv(width, height);
  int ml = 50, mr = 15, mt = 15, mb = 35;
  int px0 = ml, px1 = width - mr, py0 = mt, py1 = height - mb;
  auto to_x = [&](double x) {
    return px0 + static_cast<int>(std::lround((x - xmin) / (xmax - xmin) * (px1 - px0)));
  };
  auto to_y = [&](double y) {
    return py1 - static_cast<int>(std::lround((y - ymin) / (ymax - ymin) * (py1 - py0)));
  };

  for (int gl = 0; gl <= 4; ++gl) {  // light horizontal grid
    int y = py0 + gl * (py1 - py0) / 4;
    cv.line(px0, y, px1, y, 225, 225, 225);
  }
  cv.line(px0, py1, px1, py1, 60, 60, 60);  // x axis
  cv.line(px0, py0, px0, py1, 60, 60, 60);  // y axis

  for (int c = 1; c < table.cols(); ++c) {
    const std::uint8_t* col = palette[(c - 1) % 8];
    for (std::size_t i = 1; i < table.rows.size(); ++i) {
      const auto& a = table.rows[i - 1];
      const auto& b = table.rows[i];
      cv.line(to_x(a[0]), to_y(a[static_cast<std::size_t>(c)]), to_x(b[0]),
              to_y(b[static_cast<std::size_t>(c)]), col[0], col[1], col[2]);
    }
    for (const auto& row : table.rows) {  // emphasize samples
      int x = to_x(row[0]), y = to_y(row[static_cast<std::size_t>(c)]);
      cv.fill_rect(x - 1, y - 1, 3, 3, col[0], col[1], col[2]);
    }
    cv.fill_rect(px0 + 8 + (c - 1) * 18, py0 + 6, 12, 12, col[0], col[1], col[2]);
  }

  write_png_rgb(path, cv.rgb, width, height);
}

}  // namespace glosmo
