#pragma once

#include "umcf/spatial.hpp"

namespace umcf {

// Per-voxel gate uncertainties, each valued in [0, 1].
struct UncertaintyFields {
  VoxelGrid u_v, u_t, u_s, u_ts;
};

// Mean per-class binary entropy of the probability maps, normalized by log 2.
VoxelGrid u_visual(const ProbMaps& p);

// 1 - phi_T: disagreement between the field and the semantic prototype.
VoxelGrid u_text(const VoxelGrid& phi_t);

// Local 6-neighbor discontinuity of the probability maps, clamped to [0, 1].
VoxelGrid u_spatial(const ProbMaps& p);

// (u_T + u_S) / 2.
VoxelGrid u_joint(const VoxelGrid& u_t, const VoxelGrid& u_s);

UncertaintyFields compute_uncertainties(const ProbMaps& p, const VoxelGrid& phi_t);

}  // namespace umcf
