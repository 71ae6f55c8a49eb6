#include "umcf/uncertainty.hpp"

#include <algorithm>
#include <cmath>

namespace umcf {

namespace {

inline double binary_entropy(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -p * std::log(p) - (1.0 - p) * std::log(1.0 - p);
}

const double kLog2 = std::log(2.0);

}  // namespace

VoxelGrid u_visual(const ProbMaps& p) {
  p.validate();
  VoxelGrid out(p.h, p.w, p.d, 1, 0.0);
  parallel_for(p.voxels(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      double acc = 0.0;
      for (const auto& m : p.maps) acc += binary_entropy(m[i]);
      out.data[i] = std::clamp(acc / (3.0 * kLog2), 0.0, 1.0);
    }
  });
  return out;
}

VoxelGrid u_text(const VoxelGrid& phi_t) {
  if (phi_t.c != 1) throw ValidationError("u_text: phi_T must be scalar");
  phi_t.ensure_finite("u_text");
  VoxelGrid out = phi_t;
  for (auto& v : out.data) v = std::clamp(1.0 - v, 0.0, 1.0);
  return out;
}

VoxelGrid u_spatial(const ProbMaps& p) {
  VoxelGrid out = local_tv(p);
  for (auto& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

VoxelGrid u_joint(const VoxelGrid& u_t, const VoxelGrid& u_s) {
  if (!u_t.same_shape(u_s)) throw ValidationError("u_joint: shape mismatch");
  VoxelGrid out = u_t;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = (u_t.data[i] + u_s.data[i]) / 2.0;
  }
  return out;
}

UncertaintyFields compute_uncertainties(const ProbMaps& p, const VoxelGrid& phi_t) {
  UncertaintyFields u;
  u.u_v = u_visual(p);
  u.u_t = u_text(phi_t);
  u.u_s = u_spatial(p);
  u.u_ts = u_joint(u.u_t, u.u_s);
  return u;
}

}  // namespace umcf
