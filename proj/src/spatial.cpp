#include "umcf/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace umcf {

const char* to_string(TumorClass c) {
  switch (c) {
    case TumorClass::et: return "ET";
    case TumorClass::tc: return "TC";
    case TumorClass::wt: return "WT";
  }
  return "?";
}

ProbMaps::ProbMaps(std::size_t h_, std::size_t w_, std::size_t d_, double fill)
    : h(h_), w(w_), d(d_) {
  if (h == 0 || w == 0 || d == 0) {
    throw ValidationError("ProbMaps: dims must be positive");
  }
  for (auto& m : maps) m.assign(h * w * d, fill);
}

void ProbMaps::validate() const {
  const std::size_t n = voxels();
  if (n == 0) throw ValidationError("ProbMaps: empty volume");
  for (const auto& m : maps) {
    if (m.size() != n) throw ValidationError("ProbMaps: map size mismatch");
    for (const double v : m) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ValidationError("ProbMaps: probability outside [0, 1]");
      }
    }
  }
}

namespace {

std::array<double, 3> volume_center(const ProbMaps& p) {
  return {(static_cast<double>(p.h) - 1.0) / 2.0,
          (static_cast<double>(p.w) - 1.0) / 2.0,
          (static_cast<double>(p.d) - 1.0) / 2.0};
}

struct Coord {
  std::size_t x, y, z;
};

inline Coord unravel(std::size_t idx, std::size_t h, std::size_t w) {
  const std::size_t x = idx % h;
  const std::size_t y = (idx / h) % w;
  const std::size_t z = idx / (h * w);
  return {x, y, z};
}

}  // namespace

CentroidResult weighted_centroid(const ProbMaps& p, TumorClass c) {
  p.validate();
  const auto& m = p.map(c);
  const std::size_t n = p.voxels();
  CentroidResult r;
  r.mass = pairwise_sum(m);
  if (r.mass < kMassEps) {
    r.centroid = volume_center(p);
    r.degenerate = true;
    return r;
  }
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const double s = pairwise_sum_of(0, n, [&](std::size_t i) {
      const Coord co = unravel(i, p.h, p.w);
      const std::size_t coord = axis == 0 ? co.x : axis == 1 ? co.y : co.z;
      return m[i] * static_cast<double>(coord);
    });
    r.centroid[axis] = s / r.mass;
  }
  return r;
}

CovarianceResult weighted_covariance(const ProbMaps& p, TumorClass c,
                                     const std::array<double, 3>& mu) {
  p.validate();
  const auto& m = p.map(c);
  const std::size_t n = p.voxels();
  CovarianceResult r;
  const double mass = pairwise_sum(m);
  if (mass < kMassEps) {
    r.degenerate = true;
    return r;
  }
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = a; b < 3; ++b) {
      const double s = pairwise_sum_of(0, n, [&](std::size_t i) {
        const Coord co = unravel(i, p.h, p.w);
        const double coord[3] = {static_cast<double>(co.x),
                                 static_cast<double>(co.y),
                                 static_cast<double>(co.z)};
        return m[i] * (coord[a] - mu[a]) * (coord[b] - mu[b]);
      });
      r.cov[a][b] = s / mass;
      r.cov[b][a] = r.cov[a][b];
    }
  }
  return r;
}

std::array<double, 3> sym3_eigenvalues(const Mat3& m) {
  double maxabs = 0.0;
  for (const auto& row : m) {
    for (const double v : row) {
      if (!std::isfinite(v)) throw ValidationError("sym3_eigenvalues: non-finite entry");
      maxabs = std::max(maxabs, std::abs(v));
    }
  }
  const double sym_tol = 1e-9 * std::max(1.0, maxabs);
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = a + 1; b < 3; ++b) {
      if (std::abs(m[a][b] - m[b][a]) > sym_tol) {
        throw ValidationError("sym3_eigenvalues: matrix is not symmetric");
      }
    }
  }

  const double p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
  std::array<double, 3> eig;
  if (p1 <= maxabs * maxabs * 1e-30) {
    eig = {m[0][0], m[1][1], m[2][2]};
  } else {
    const double q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    const double p2 = (m[0][0] - q) * (m[0][0] - q) + (m[1][1] - q) * (m[1][1] - q) +
                      (m[2][2] - q) * (m[2][2] - q) + 2.0 * p1;
    const double p = std::sqrt(p2 / 6.0);
    Mat3 b{};
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        b[i][j] = (m[i][j] - (i == j ? q : 0.0)) / p;
      }
    }
    const double detb = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) -
                        b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0]) +
                        b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    const double r = std::clamp(detb / 2.0, -1.0, 1.0);
    const double phi = std::acos(r) / 3.0;
    const double two_pi_3 = 2.0 * std::numbers::pi / 3.0;
    eig[0] = q + 2.0 * p * std::cos(phi);
    eig[2] = q + 2.0 * p * std::cos(phi + two_pi_3);
    eig[1] = 3.0 * q - eig[0] - eig[2];
  }
  std::sort(eig.begin(), eig.end(), std::greater<>());
  return eig;
}

// ---------------------------------------------------------------------------
// Exact Euclidean distance transform (squared), separable lower envelope.
// ---------------------------------------------------------------------------

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Finite stand-in for "no seed on this line": keeps the envelope
// intersections finite (inf - inf would be NaN) while dominating any
// realizable squared distance.
constexpr double kFar = 1e20;

// 1-D squared distance transform of sampled function f.
void dt1d(const double* f, std::size_t n, double* out, int* v, double* z) {
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < static_cast<int>(n); ++q) {
    double s;
    while (true) {
      const int p = v[k];
      s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * q - 2.0 * p);
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < static_cast<int>(n); ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    out[q] = dq * dq + f[v[k]];
  }
}

// Squared distance from every voxel to the nearest seed voxel.
std::vector<double> edt_squared(const std::vector<char>& seed, std::size_t h,
                                std::size_t w, std::size_t d) {
  const std::size_t n = h * w * d;
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) dist[i] = seed[i] ? 0.0 : kFar;

  const std::size_t max_len = std::max({h, w, d});

  // x pass: lines are contiguous.
  parallel_for(w * d, [&](std::size_t begin, std::size_t end) {
    std::vector<double> f(max_len), g(max_len);
    std::vector<int> v(max_len);
    std::vector<double> z(max_len + 1);
    for (std::size_t line = begin; line < end; ++line) {
      double* row = dist.data() + line * h;
      std::copy(row, row + h, f.data());
      dt1d(f.data(), h, g.data(), v.data(), z.data());
      std::copy(g.data(), g.data() + h, row);
    }
  });

  // y pass: stride h within each z-slab.
  parallel_for(h * d, [&](std::size_t begin, std::size_t end) {
    std::vector<double> f(max_len), g(max_len);
    std::vector<int> v(max_len);
    std::vector<double> z(max_len + 1);
    for (std::size_t line = begin; line < end; ++line) {
      const std::size_t x = line % h;
      const std::size_t zz = line / h;
      double* base = dist.data() + x + zz * h * w;
      for (std::size_t y = 0; y < w; ++y) f[y] = base[y * h];
      dt1d(f.data(), w, g.data(), v.data(), z.data());
      for (std::size_t y = 0; y < w; ++y) base[y * h] = g[y];
    }
  });

  // z pass: stride h*w.
  parallel_for(h * w, [&](std::size_t begin, std::size_t end) {
    std::vector<double> f(max_len), g(max_len);
    std::vector<int> v(max_len);
    std::vector<double> z(max_len + 1);
    for (std::size_t line = begin; line < end; ++line) {
      double* base = dist.data() + line;
      for (std::size_t zz = 0; zz < d; ++zz) f[zz] = base[zz * h * w];
      dt1d(f.data(), d, g.data(), v.data(), z.data());
      for (std::size_t zz = 0; zz < d; ++zz) base[zz * h * w] = g[zz];
    }
  });

  return dist;
}

std::vector<char> binarize(const VoxelGrid& mask) {
  if (mask.c != 1) throw ValidationError("mask must have a single channel");
  mask.ensure_finite("mask");
  std::vector<char> b(mask.voxels());
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = mask.data[i] >= 0.5 ? 1 : 0;
  return b;
}

}  // namespace

SdtResult signed_distance_transform(const VoxelGrid& mask) {
  const auto inside = binarize(mask);
  const std::size_t n = inside.size();

  std::size_t inside_count = 0;
  for (const char v : inside) inside_count += v;

  SdtResult r;
  r.sdt = VoxelGrid(mask.h, mask.w, mask.d, 1, 0.0);
  if (inside_count == 0 || inside_count == n) {
    r.degenerate = true;
    return r;
  }

  std::vector<char> outside(n);
  for (std::size_t i = 0; i < n; ++i) outside[i] = inside[i] ? 0 : 1;

  const auto d_to_outside = edt_squared(outside, mask.h, mask.w, mask.d);
  const auto d_to_inside = edt_squared(inside, mask.h, mask.w, mask.d);
  for (std::size_t i = 0; i < n; ++i) {
    r.sdt.data[i] = inside[i] ? std::sqrt(d_to_outside[i]) : -std::sqrt(d_to_inside[i]);
  }
  return r;
}

double mean_sdt(const VoxelGrid& sdt) {
  sdt.ensure_finite("mean_sdt");
  return pairwise_sum(sdt.data) / static_cast<double>(sdt.data.size());
}

SpatialStats compute_spatial_stats(const ProbMaps& p, TumorClass c,
                                   double hard_threshold) {
  SpatialStats s;
  const auto cen = weighted_centroid(p, c);
  s.centroid = cen.centroid;
  if (cen.degenerate) {
    s.degenerate = true;
    return s;
  }
  const auto cov = weighted_covariance(p, c, cen.centroid);
  s.covariance = cov.cov;
  s.eigenvalues = sym3_eigenvalues(cov.cov);

  const auto mask = harden_mask(p, c, hard_threshold);
  const auto sdt = signed_distance_transform(mask);
  s.mean_sdt = sdt.degenerate ? 0.0 : mean_sdt(sdt.sdt);
  return s;
}

UnitVector hier_token(const SpatialStats& stats) {
  std::vector<double> v = {stats.centroid[0],    stats.centroid[1],
                           stats.centroid[2],    stats.eigenvalues[0],
                           stats.eigenvalues[1], stats.eigenvalues[2],
                           stats.mean_sdt};
  return l2_normalize(v);
}

VoxelGrid harden_mask(const ProbMaps& p, TumorClass c, double threshold) {
  VoxelGrid mask(p.h, p.w, p.d, 1, 0.0);
  const auto& m = p.map(c);
  for (std::size_t i = 0; i < m.size(); ++i) mask.data[i] = m[i] >= threshold ? 1.0 : 0.0;
  return mask;
}

VoxelGrid local_tv_class(const ProbMaps& p, TumorClass c) {
  p.validate();
  const auto& m = p.map(c);
  VoxelGrid out(p.h, p.w, p.d, 1, 0.0);
  const std::size_t h = p.h, w = p.w, d = p.d;
  parallel_for(p.voxels(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Coord co = unravel(i, h, w);
      double acc = 0.0;
      int count = 0;
      const double v = m[i];
      if (co.x > 0) { acc += std::abs(v - m[i - 1]); ++count; }
      if (co.x + 1 < h) { acc += std::abs(v - m[i + 1]); ++count; }
      if (co.y > 0) { acc += std::abs(v - m[i - h]); ++count; }
      if (co.y + 1 < w) { acc += std::abs(v - m[i + h]); ++count; }
      if (co.z > 0) { acc += std::abs(v - m[i - h * w]); ++count; }
      if (co.z + 1 < d) { acc += std::abs(v - m[i + h * w]); ++count; }
      out.data[i] = count > 0 ? acc / count : 0.0;
    }
  });
  return out;
}

VoxelGrid local_tv(const ProbMaps& p) {
  VoxelGrid out(p.h, p.w, p.d, 1, 0.0);
  for (const TumorClass c : kTumorClasses) {
    const auto per_class = local_tv_class(p, c);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += per_class.data[i];
  }
  for (auto& v : out.data) v /= 3.0;
  return out;
}

TopoFeatures topo_features(const ProbMaps& p, TumorClass c, double hard_threshold) {
  TopoFeatures t;
  const auto tv = local_tv_class(p, c);
  t.smoothness = pairwise_sum(tv.data) / static_cast<double>(tv.data.size());

  const auto mask = harden_mask(p, c, hard_threshold);
  const auto sdt = signed_distance_transform(mask);

  // Gradient magnitude over the |SDT| <= 2 band, central differences with
  // clamped indices at the volume border.
  const auto& m = p.map(c);
  const std::size_t h = p.h, w = p.w, d = p.d;
  std::vector<double> band_values;
  for (std::size_t z = 0; z < d; ++z) {
    for (std::size_t y = 0; y < w; ++y) {
      for (std::size_t x = 0; x < h; ++x) {
        const std::size_t i = x + h * (y + w * z);
        if (std::abs(sdt.sdt.data[i]) > 2.0) continue;
        const auto sample = [&](std::size_t xx, std::size_t yy, std::size_t zz) {
          return m[xx + h * (yy + w * zz)];
        };
        const double gx = (sample(std::min(x + 1, h - 1), y, z) -
                           sample(x > 0 ? x - 1 : 0, y, z)) / 2.0;
        const double gy = (sample(x, std::min(y + 1, w - 1), z) -
                           sample(x, y > 0 ? y - 1 : 0, z)) / 2.0;
        const double gz = (sample(x, y, std::min(z + 1, d - 1)) -
                           sample(x, y, z > 0 ? z - 1 : 0)) / 2.0;
        band_values.push_back(std::sqrt(gx * gx + gy * gy + gz * gz));
      }
    }
  }
  t.boundary_gradient = band_values.empty()
                            ? 0.0
                            : pairwise_sum(band_values) /
                                  static_cast<double>(band_values.size());

  std::size_t mask_count = 0, boundary_count = 0;
  for (std::size_t z = 0; z < d; ++z) {
    for (std::size_t y = 0; y < w; ++y) {
      for (std::size_t x = 0; x < h; ++x) {
        const std::size_t i = x + h * (y + w * z);
        if (mask.data[i] < 0.5) continue;
        ++mask_count;
        bool exposed = false;
        if (x > 0 && mask.data[i - 1] < 0.5) exposed = true;
        if (!exposed && x + 1 < h && mask.data[i + 1] < 0.5) exposed = true;
        if (!exposed && y > 0 && mask.data[i - h] < 0.5) exposed = true;
        if (!exposed && y + 1 < w && mask.data[i + h] < 0.5) exposed = true;
        if (!exposed && z > 0 && mask.data[i - h * w] < 0.5) exposed = true;
        if (!exposed && z + 1 < d && mask.data[i + h * w] < 0.5) exposed = true;
        if (exposed) ++boundary_count;
      }
    }
  }
  if (mask_count == 0) {
    t.degenerate = true;
    t.surface_to_volume = 0.0;
  } else {
    t.surface_to_volume =
        static_cast<double>(boundary_count) / static_cast<double>(mask_count);
  }
  return t;
}

TokenSet build_spatial_tokens(const ProbMaps& p, std::size_t dim,
                              std::uint64_t seed) {
  std::vector<std::vector<double>> hier_raw, topo_raw;
  std::array<bool, 3> hier_degenerate{}, topo_degenerate{};

  for (std::size_t ci = 0; ci < 3; ++ci) {
    const TumorClass c = kTumorClasses[ci];
    const auto stats = compute_spatial_stats(p, c);
    if (stats.degenerate) {
      hier_degenerate[ci] = true;
      hier_raw.push_back(std::vector<double>(7, 0.0));
    } else {
      const auto tok = hier_token(stats);
      hier_degenerate[ci] = tok.degenerate;
      hier_raw.push_back(tok.values);
    }

    const auto topo = topo_features(p, c);
    const auto tok = l2_normalize({topo.smoothness, topo.boundary_gradient,
                                   topo.degenerate ? 0.0 : topo.surface_to_volume});
    topo_degenerate[ci] = tok.degenerate;
    topo_raw.push_back(tok.values);
  }

  const auto hier_proj = project_embeddings(hier_raw, dim, seed);
  const auto topo_proj = project_embeddings(topo_raw, dim, seed);

  std::vector<UnitVector> tokens;
  tokens.reserve(6);
  for (std::size_t ci = 0; ci < 3; ++ci) {
    tokens.push_back(hier_degenerate[ci] ? UnitVector::zero_fallback(dim)
                                         : l2_normalize(hier_proj.vectors[ci]));
  }
  for (std::size_t ci = 0; ci < 3; ++ci) {
    tokens.push_back(topo_degenerate[ci] ? UnitVector::zero_fallback(dim)
                                         : l2_normalize(topo_proj.vectors[ci]));
  }
  return make_token_set(Modality::spatial, dim, std::move(tokens));
}

}  // namespace umcf
