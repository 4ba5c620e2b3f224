// image_io.cpp — binary PPM/PGM readers and writers.

#include "vseg/image_io.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

namespace vseg {

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw DataError(path.string() + ": " + what);
}

// Next whitespace-delimited header token, honouring '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

int parse_positive(std::istream& in, const std::filesystem::path& path, const char* name) {
  const std::string tok = next_token(in);
  if (tok.empty()) fail(path, std::string("truncated header, missing ") + name);
  int value = 0;
  for (char ch : tok) {
    if (ch < '0' || ch > '9') fail(path, std::string("malformed ") + name + " '" + tok + "'");
    value = value * 10 + (ch - '0');
    if (value > 1 << 20) fail(path, std::string(name) + " out of range");
  }
  if (value <= 0) fail(path, std::string(name) + " must be positive");
  return value;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Field& image) {
  require(image.channels() == 3, "write_ppm: image must have 3 channels");
  require(image.height > 0 && image.width > 0, "write_ppm: empty image");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for writing");
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(image.width) * 3);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = image(x, y, c);
        const double scaled = v * 255.0;
        const long k = std::lround(scaled);
        if (k < 0 || k > 255 || std::abs(scaled - static_cast<double>(k)) > 1e-9)
          fail(path, "pixel value " + std::to_string(v) + " is not on the k/255 grid");
        row[static_cast<size_t>(x) * 3 + c] = static_cast<unsigned char>(k);
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) fail(path, "short write");
}

Field read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  if (next_token(in) != "P6") fail(path, "not a binary PPM (expected P6)");
  const int width = parse_positive(in, path, "width");
  const int height = parse_positive(in, path, "height");
  const int maxval = parse_positive(in, path, "maxval");
  if (maxval != 255) fail(path, "unsupported maxval " + std::to_string(maxval));
  // Header ends with exactly one whitespace byte before the raster.
  Field image(height, width, 3);
  std::vector<unsigned char> row(static_cast<size_t>(width) * 3);
  for (int y = 0; y < height; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (in.gcount() != static_cast<std::streamsize>(row.size())) fail(path, "truncated raster");
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        image(x, y, c) = static_cast<double>(row[static_cast<size_t>(x) * 3 + c]) / 255.0;
  }
  return image;
}

void write_pgm(const std::filesystem::path& path, const LabelMap& labels, int max_value) {
  require(max_value >= 1 && max_value <= 65535, "write_pgm: max_value out of range");
  require(labels.rows() > 0 && labels.cols() > 0, "write_pgm: empty label map");
  const int height = static_cast<int>(labels.rows());
  const int width = static_cast<int>(labels.cols());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for writing");
  out << "P5\n" << width << " " << height << "\n" << max_value << "\n";
  const bool wide = max_value > 255;
  std::vector<unsigned char> row(static_cast<size_t>(width) * (wide ? 2 : 1));
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int v = labels(y, x);
      if (v < 0 || v > max_value)
        fail(path, "label " + std::to_string(v) + " outside [0, " + std::to_string(max_value) + "]");
      if (wide) {
        row[static_cast<size_t>(x) * 2] = static_cast<unsigned char>(v >> 8);
        row[static_cast<size_t>(x) * 2 + 1] = static_cast<unsigned char>(v & 0xff);
      } else {
        row[static_cast<size_t>(x)] = static_cast<unsigned char>(v);
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) fail(path, "short write");
}

LabelMap read_pgm(const std::filesystem::path& path, int* max_value_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  if (next_token(in) != "P5") fail(path, "not a binary PGM (expected P5)");
  const int width = parse_positive(in, path, "width");
  const int height = parse_positive(in, path, "height");
  const int maxval = parse_positive(in, path, "maxval");
  if (maxval > 65535) fail(path, "unsupported maxval " + std::to_string(maxval));
  if (max_value_out) *max_value_out = maxval;
  const bool wide = maxval > 255;
  LabelMap labels(height, width);
  std::vector<unsigned char> row(static_cast<size_t>(width) * (wide ? 2 : 1));
  for (int y = 0; y < height; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (in.gcount() != static_cast<std::streamsize>(row.size())) fail(path, "truncated raster");
    for (int x = 0; x < width; ++x) {
      const int v = wide ? (row[static_cast<size_t>(x) * 2] << 8) | row[static_cast<size_t>(x) * 2 + 1]
                         : row[static_cast<size_t>(x)];
      if (v > maxval) fail(path, "sample " + std::to_string(v) + " exceeds declared maxval");
      labels(y, x) = v;
    }
  }
  return labels;
}

}  // namespace vseg
