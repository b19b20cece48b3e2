#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace flowfactor {

/// Dense row-major H x W grid of values, indexed as (x, y) with x along the
/// image u-axis and y along the v-axis. Row 0 is the top image row.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, const T& fill = T{})
      : width_(width), height_(height) {
    if (width <= 0 || height <= 0)
      throw std::invalid_argument("Grid: dimensions must be positive");
    cells_.assign(static_cast<std::size_t>(width) * height, fill);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return cells_.size(); }
  bool empty() const { return cells_.empty(); }

  T& operator()(int x, int y) { return cells_[index(x, y)]; }
  const T& operator()(int x, int y) const { return cells_[index(x, y)]; }

  T* data() { return cells_.data(); }
  const T* data() const { return cells_.data(); }

  bool same_size(int width, int height) const {
    return width_ == width && height_ == height;
  }
  template <typename U>
  bool same_size(const Grid<U>& other) const {
    return same_size(other.width(), other.height());
  }

  bool in_bounds(int x, int y) const {
    return x >= 0 && x < width_ && y >= 0 && y < height_;
  }

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> cells_;
};

/// Per-pixel validity mask; nonzero means valid.
using Mask = Grid<std::uint8_t>;

inline long count_valid(const Mask& mask) {
  long n = 0;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask(x, y)) ++n;
  return n;
}

/// Element-wise logical AND of two masks of equal size.
inline Mask mask_and(const Mask& a, const Mask& b) {
  if (!a.same_size(b)) throw std::invalid_argument("mask_and: size mismatch");
  Mask out(a.width(), a.height(), 0);
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x)
      out(x, y) = (a(x, y) && b(x, y)) ? 1 : 0;
  return out;
}

/// True if every valid pixel of `subset` is also valid in `superset`.
inline bool mask_subset_of(const Mask& subset, const Mask& superset) {
  if (!subset.same_size(superset)) return false;
  for (int y = 0; y < subset.height(); ++y)
    for (int x = 0; x < subset.width(); ++x)
      if (subset(x, y) && !superset(x, y)) return false;
  return true;
}

}  // namespace flowfactor
