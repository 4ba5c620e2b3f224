// image_io.hpp
//
// Binary PPM (P6) and PGM (P5) rasters. Both are lossless for our data:
// frame values live on the k/255 grid, labels are small nonnegative ints,
// so write-then-read reproduces arrays bit-exactly.

#pragma once

#include "vseg/types.hpp"

#include <filesystem>

namespace vseg {

// image must have 3 channels with every value on the k/255 grid, k in
// [0, 255]. Values off the grid indicate a bug upstream and are rejected.
void write_ppm(const std::filesystem::path& path, const Field& image);
Field read_ppm(const std::filesystem::path& path);

// Labels are written 1 byte/sample when max_value <= 255, else 2 bytes
// big-endian (PNM convention). max_value bounds the legal range; entries
// outside [0, max_value] are rejected on write and on read.
void write_pgm(const std::filesystem::path& path, const LabelMap& labels, int max_value);
LabelMap read_pgm(const std::filesystem::path& path, int* max_value_out = nullptr);

}  // namespace vseg
