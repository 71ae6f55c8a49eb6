#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "umcf/common.hpp"

namespace umcf {

// Dense 3-D scalar field with optional channels. Storage order: x fastest,
// then y, then z, then channel; the channel stride equals the voxel count.
struct VoxelGrid {
  std::size_t h = 0, w = 0, d = 0, c = 1;
  std::vector<double> data;

  VoxelGrid() = default;
  VoxelGrid(std::size_t h_, std::size_t w_, std::size_t d_, std::size_t c_ = 1,
            double fill = 0.0);

  std::size_t voxels() const { return h * w * d; }
  std::size_t size() const { return h * w * d * c; }

  std::size_t voxel_index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + h * (y + w * z);
  }

  double& at(std::size_t x, std::size_t y, std::size_t z, std::size_t ch = 0) {
    return data[voxel_index(x, y, z) + voxels() * ch];
  }
  double at(std::size_t x, std::size_t y, std::size_t z, std::size_t ch = 0) const {
    return data[voxel_index(x, y, z) + voxels() * ch];
  }

  bool same_shape(const VoxelGrid& o) const {
    return h == o.h && w == o.w && d == o.d && c == o.c;
  }
  bool same_volume(const VoxelGrid& o) const {
    return h == o.h && w == o.w && d == o.d;
  }

  // Gathers the per-voxel channel row into `out` (size c).
  void channel_row(std::size_t voxel, double* out) const;
  void set_channel_row(std::size_t voxel, const double* row);

  // Throws ValidationError on NaN/Inf.
  void ensure_finite(const char* what) const;
};

// Unit-norm vector, or the flagged all-zero fallback for degenerate input.
struct UnitVector {
  std::vector<double> values;
  bool degenerate = false;

  UnitVector() = default;
  explicit UnitVector(std::vector<double> v) : values(std::move(v)) {}

  std::size_t dim() const { return values.size(); }

  static UnitVector zero_fallback(std::size_t dim) {
    UnitVector u;
    u.values.assign(dim, 0.0);
    u.degenerate = true;
    return u;
  }
};

// Strictly positive softmax temperature.
struct Temperature {
  double tau;
  explicit Temperature(double t);
};

// v / ||v||; inputs with norm below kNormEps give the flagged zero-fallback.
UnitVector l2_normalize(const std::vector<double>& v);

// a.b clamped to [-1, 1]; similarity against a degenerate vector is 0.
double cosine_sim(const UnitVector& a, const UnitVector& b);

// softmax(scores / tau) with max subtraction.
std::vector<double> tempered_softmax(const std::vector<double>& scores,
                                     Temperature tau);

namespace detail {
// In-place kernel for already validated score buffers.
void tempered_softmax_inplace(double* scores, std::size_t n, double tau);
}  // namespace detail

double logistic(double x);

inline std::size_t ceil_div(std::size_t a, std::size_t b) {
  return (a + b - 1) / b;
}

struct BlockMean {
  std::array<std::size_t, 3> block;  // (bx, by, bz)
  std::vector<double> mean;          // per-channel block average
};

// Partitions the volume into cubes of side `block` (edge blocks truncated)
// and returns per-block channel means in lexicographic block order.
std::vector<BlockMean> block_pool(const VoxelGrid& grid, std::size_t block);

}  // namespace umcf
