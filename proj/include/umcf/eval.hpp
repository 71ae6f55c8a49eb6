#pragma once

#include <filesystem>

#include "umcf/io.hpp"
#include "umcf/spatial.hpp"

namespace umcf {

struct Ellipsoid {
  std::array<double, 3> center{};
  std::array<double, 3> semi_axes{};
};

// Synthetic nested-ellipsoid case. The three ellipsoids must produce
// voxel masks satisfying ET ⊆ TC ⊆ WT; generation rejects specs that don't.
struct PhantomSpec {
  std::size_t h = 32, w = 32, d = 32;
  Ellipsoid wt{{15.5, 15.5, 15.5}, {12.0, 11.0, 10.0}};
  Ellipsoid tc{{16.0, 15.5, 15.0}, {8.0, 7.0, 6.5}};
  Ellipsoid et{{16.0, 15.0, 15.0}, {4.0, 3.5, 3.0}};
  std::size_t feature_dim = 8;
  std::uint64_t anchor_seed = 101;
  double feature_noise = 0.5;      // sigma of the per-channel gaussian
  std::size_t blur_radius = 1;     // box-blur radius applied to the indicators
  double violation_rate = 0.0;     // fraction of voxels with ET/TC swapped
  std::uint64_t seed = 42;

  void validate() const;
};

PhantomSpec default_phantom_spec();

// Anchor order used for feature synthesis and the exported token file.
enum class PhantomRegion { background = 0, wt = 1, tc = 2, et = 3 };

struct Phantom {
  std::array<VoxelGrid, 3> masks;  // ET, TC, WT ground truth (0/1)
  VoxelGrid features;              // normalized anchor-plus-noise rows, C = feature_dim
  ProbMaps probmaps;               // blurred indicators with injected violations
  TokenDoc semantic_tokens;        // the three tumor anchors as phrases
  std::array<std::vector<double>, 4> anchors;  // background, WT, TC, ET
};

Phantom generate_phantom(const PhantomSpec& spec);

// 2|a∩b| / (|a|+|b|); both masks empty gives 1.
double dice(const VoxelGrid& a, const VoxelGrid& b);

// Fraction of voxels whose hardened labels break ET <= TC or TC <= WT.
double hierarchy_violation_rate(const ProbMaps& p, double threshold = 0.5);

PhantomSpec read_phantom_spec(const std::filesystem::path& path);
void write_phantom_spec(const std::filesystem::path& path, const PhantomSpec& spec);

}  // namespace umcf
