// types.hpp
//
// Core dense types shared across the library: multi-channel pixel fields
// (logits, features, images) stored as Eigen matrices with pixels along
// rows, plus label/mask planes and the error hierarchy.

#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace vseg {

using Mat = Eigen::MatrixXd;
using ArrayXXd = Eigen::ArrayXXd;
using LabelMap = Eigen::ArrayXXi;                                // (H, W) class or instance ids
using BoolMap = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;  // (H, W)

// Data/problem errors map to exit code 2 in the CLI; numerical failures to 3.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense H x W x C field. Pixels are flattened row-major (p = y*W + x) along
// matrix rows; channels along columns. This keeps per-pixel channel vectors
// contiguous as matrix rows, so softmax/attention/projection are plain
// matrix expressions.
template <typename T>
struct PixelField {
  int height = 0;
  int width = 0;
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> values;  // (height*width, channels)

  PixelField() = default;
  PixelField(int h, int w, int channels)
      : height(h), width(w), values(Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>::Zero(
                                 static_cast<Eigen::Index>(h) * w, channels)) {}

  int channels() const { return static_cast<int>(values.cols()); }
  Eigen::Index pixels() const { return static_cast<Eigen::Index>(height) * width; }

  Eigen::Index index(int x, int y) const { return static_cast<Eigen::Index>(y) * width + x; }

  T operator()(int x, int y, int c) const { return values(index(x, y), c); }
  T& operator()(int x, int y, int c) { return values(index(x, y), c); }

  bool same_shape(const PixelField& other) const {
    return height == other.height && width == other.width && channels() == other.channels();
  }
};

using Field = PixelField<double>;

inline void require(bool cond, const std::string& message) {
  if (!cond) throw DataError(message);
}

// Per-pixel argmax over channels; ties resolve to the lowest channel index.
template <typename T>
LabelMap argmax_field(const PixelField<T>& field) {
  LabelMap out(field.height, field.width);
  for (int y = 0; y < field.height; ++y) {
    for (int x = 0; x < field.width; ++x) {
      Eigen::Index best = 0;
      field.values.row(field.index(x, y)).maxCoeff(&best);
      out(y, x) = static_cast<int>(best);
    }
  }
  return out;
}

// Extract one channel as an (H, W) plane.
template <typename T>
ArrayXXd field_plane(const PixelField<T>& field, int channel) {
  ArrayXXd out(field.height, field.width);
  for (int y = 0; y < field.height; ++y)
    for (int x = 0; x < field.width; ++x) out(y, x) = field(x, y, channel);
  return out;
}

// Nearest-neighbour downsample of a binary mask by an integer factor
// (sample point at the block centre).
inline BoolMap downsample_mask_nearest(const BoolMap& mask, int factor) {
  const int h = static_cast<int>(mask.rows()) / factor;
  const int w = static_cast<int>(mask.cols()) / factor;
  BoolMap out(h, w);
  const int off = factor / 2;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out(y, x) = mask(y * factor + off, x * factor + off);
  return out;
}

// Row indices (into a PixelField at the mask's resolution) of the true pixels.
inline std::vector<int> mask_pixel_rows(const BoolMap& mask) {
  std::vector<int> rows;
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (mask(y, x)) rows.push_back(y * w + x);
  return rows;
}

}  // namespace vseg
