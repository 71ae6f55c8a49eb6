#include "umcf/field_core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>

namespace umcf {

std::size_t thread_count() {
  if (const char* env = std::getenv("UMCF_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) {
      return std::min<std::size_t>(static_cast<std::size_t>(v), 256);
    }
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : hc;
}

VoxelGrid::VoxelGrid(std::size_t h_, std::size_t w_, std::size_t d_,
                     std::size_t c_, double fill)
    : h(h_), w(w_), d(d_), c(c_) {
  if (h == 0 || w == 0 || d == 0 || c == 0) {
    throw ValidationError("VoxelGrid: dims and channel count must be positive");
  }
  data.assign(h * w * d * c, fill);
}

void VoxelGrid::channel_row(std::size_t voxel, double* out) const {
  const std::size_t n = voxels();
  for (std::size_t ch = 0; ch < c; ++ch) out[ch] = data[voxel + n * ch];
}

void VoxelGrid::set_channel_row(std::size_t voxel, const double* row) {
  const std::size_t n = voxels();
  for (std::size_t ch = 0; ch < c; ++ch) data[voxel + n * ch] = row[ch];
}

void VoxelGrid::ensure_finite(const char* what) const {
  for (const double v : data) {
    if (!std::isfinite(v)) {
      throw ValidationError(std::string(what) + ": non-finite value in grid");
    }
  }
}

Temperature::Temperature(double t) : tau(t) {
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw ValidationError("temperature must be a finite positive number");
  }
}

UnitVector l2_normalize(const std::vector<double>& v) {
  if (v.empty()) throw ValidationError("l2_normalize: empty vector");
  for (const double x : v) {
    if (!std::isfinite(x)) throw ValidationError("l2_normalize: non-finite input");
  }
  const double sq = pairwise_sum_of(0, v.size(), [&](std::size_t i) { return v[i] * v[i]; });
  const double norm = std::sqrt(sq);
  if (norm < kNormEps) return UnitVector::zero_fallback(v.size());
  UnitVector u;
  u.values.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) u.values[i] = v[i] / norm;
  return u;
}

double cosine_sim(const UnitVector& a, const UnitVector& b) {
  if (a.dim() != b.dim()) {
    throw ValidationError("cosine_sim: dimension mismatch (" +
                          std::to_string(a.dim()) + " vs " + std::to_string(b.dim()) + ")");
  }
  if (a.degenerate || b.degenerate) return 0.0;
  const double dot = pairwise_sum_of(
      0, a.dim(), [&](std::size_t i) { return a.values[i] * b.values[i]; });
  return std::clamp(dot, -1.0, 1.0);
}

namespace detail {

void tempered_softmax_inplace(double* scores, std::size_t n, double tau) {
  double mx = scores[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, scores[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = std::exp((scores[i] - mx) / tau);
    sum += scores[i];
  }
  const double inv = 1.0 / sum;
  for (std::size_t i = 0; i < n; ++i) scores[i] *= inv;
}

}  // namespace detail

std::vector<double> tempered_softmax(const std::vector<double>& scores,
                                     Temperature tau) {
  if (scores.empty()) throw ValidationError("tempered_softmax: empty scores");
  for (const double s : scores) {
    if (!std::isfinite(s)) throw ValidationError("tempered_softmax: non-finite score");
  }
  std::vector<double> w = scores;
  detail::tempered_softmax_inplace(w.data(), w.size(), tau.tau);
  return w;
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<BlockMean> block_pool(const VoxelGrid& grid, std::size_t block) {
  if (block == 0) throw ValidationError("block_pool: block size must be >= 1");
  grid.ensure_finite("block_pool");

  const std::size_t nbx = ceil_div(grid.h, block);
  const std::size_t nby = ceil_div(grid.w, block);
  const std::size_t nbz = ceil_div(grid.d, block);

  std::vector<BlockMean> out;
  out.reserve(nbx * nby * nbz);
  std::vector<double> scratch;
  scratch.reserve(block * block * block);

  for (std::size_t bz = 0; bz < nbz; ++bz) {
    for (std::size_t by = 0; by < nby; ++by) {
      for (std::size_t bx = 0; bx < nbx; ++bx) {
        const std::size_t x0 = bx * block, x1 = std::min(grid.h, x0 + block);
        const std::size_t y0 = by * block, y1 = std::min(grid.w, y0 + block);
        const std::size_t z0 = bz * block, z1 = std::min(grid.d, z0 + block);
        const std::size_t count = (x1 - x0) * (y1 - y0) * (z1 - z0);

        BlockMean bm;
        bm.block = {bx, by, bz};
        bm.mean.resize(grid.c);
        for (std::size_t ch = 0; ch < grid.c; ++ch) {
          scratch.clear();
          for (std::size_t z = z0; z < z1; ++z) {
            for (std::size_t y = y0; y < y1; ++y) {
              for (std::size_t x = x0; x < x1; ++x) {
                scratch.push_back(grid.at(x, y, z, ch));
              }
            }
          }
          bm.mean[ch] = pairwise_sum(scratch) / static_cast<double>(count);
        }
        out.push_back(std::move(bm));
      }
    }
  }
  return out;
}

}  // namespace umcf
