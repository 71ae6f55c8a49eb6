#pragma once

#include <array>
#include <cstdint>

#include "umcf/tokens.hpp"

namespace umcf {

enum class TumorClass { et = 0, tc = 1, wt = 2 };

inline constexpr std::array<TumorClass, 3> kTumorClasses = {
    TumorClass::et, TumorClass::tc, TumorClass::wt};

const char* to_string(TumorClass c);

// Per-class probability volumes, ordered ET, TC, WT, sharing one voxel grid.
struct ProbMaps {
  std::size_t h = 0, w = 0, d = 0;
  std::array<std::vector<double>, 3> maps;

  ProbMaps() = default;
  ProbMaps(std::size_t h_, std::size_t w_, std::size_t d_, double fill = 0.0);

  std::size_t voxels() const { return h * w * d; }
  std::vector<double>& map(TumorClass c) { return maps[static_cast<std::size_t>(c)]; }
  const std::vector<double>& map(TumorClass c) const {
    return maps[static_cast<std::size_t>(c)];
  }
  bool same_volume(const ProbMaps& o) const {
    return h == o.h && w == o.w && d == o.d;
  }

  // Checks sizes and the [0, 1] range.
  void validate() const;
};

using Mat3 = std::array<std::array<double, 3>, 3>;

struct CentroidResult {
  std::array<double, 3> centroid;
  double mass = 0.0;
  bool degenerate = false;  // mass below kMassEps; centroid is the volume center
};

CentroidResult weighted_centroid(const ProbMaps& p, TumorClass c);

struct CovarianceResult {
  Mat3 cov{};
  bool degenerate = false;
};

CovarianceResult weighted_covariance(const ProbMaps& p, TumorClass c,
                                     const std::array<double, 3>& mu);

// Closed-form (trigonometric) eigenvalues of a real symmetric 3x3,
// sorted descending. Asymmetric input is rejected.
std::array<double, 3> sym3_eigenvalues(const Mat3& m);

struct SdtResult {
  VoxelGrid sdt;
  bool degenerate = false;  // mask was all-inside or all-outside
};

// Exact signed Euclidean distance transform, center-to-center metric:
// positive inside the mask, negative outside, |SDT| = 1 across a face.
// Separable lower-envelope passes, O(N) per axis.
SdtResult signed_distance_transform(const VoxelGrid& mask);

double mean_sdt(const VoxelGrid& sdt);

struct SpatialStats {
  std::array<double, 3> centroid{};
  Mat3 covariance{};
  std::array<double, 3> eigenvalues{};
  double mean_sdt = 0.0;
  bool degenerate = false;
};

SpatialStats compute_spatial_stats(const ProbMaps& p, TumorClass c,
                                   double hard_threshold = 0.5);

// normalize([centroid, eig1, eig2, eig3, mean_sdt]) — dim 7.
UnitVector hier_token(const SpatialStats& stats);

struct TopoFeatures {
  double smoothness = 0.0;
  double boundary_gradient = 0.0;
  double surface_to_volume = 0.0;
  bool degenerate = false;  // hardened mask was empty
};

TopoFeatures topo_features(const ProbMaps& p, TumorClass c,
                           double hard_threshold = 0.5);

// P_c >= threshold as a 0/1 grid.
VoxelGrid harden_mask(const ProbMaps& p, TumorClass c, double threshold = 0.5);

// Per-voxel mean over existing 6-neighbors of |P(x) - P(n)| for one class.
VoxelGrid local_tv_class(const ProbMaps& p, TumorClass c);

// Mean of local_tv_class over the three classes.
VoxelGrid local_tv(const ProbMaps& p);

// Six tokens in fixed order (ET/TC/WT hierarchy, then ET/TC/WT topology),
// embedded into dim `dim` with the shared projection seed. Degenerate
// classes contribute zero-fallback tokens.
TokenSet build_spatial_tokens(const ProbMaps& p, std::size_t dim,
                              std::uint64_t seed = kDefaultProjectionSeed);

}  // namespace umcf
