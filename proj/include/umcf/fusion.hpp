#pragma once

#include <optional>

#include "umcf/uncertainty.hpp"

namespace umcf {

// All free parameters of the fusion pass. Defaults are the shipped
// configuration; everything is overridable from the config file and CLI.
struct FusionConfig {
  double tau = 0.1;
  double lambda = 0.5;
  std::size_t iterations = 3;
  std::size_t block = 8;
  double w_hier = 1.0;
  double w_topo = 0.5;
  bool refresh_probmaps = true;
  bool renormalize_each_iter = true;
  bool disable_mV = false;
  bool disable_mT = false;
  bool disable_mS = false;
  bool disable_mTS = false;
  bool disable_pfug = false;   // replace uncertainty gating with equal weights
  bool pairwise_mode = false;  // fuse streams two at a time, then average
  bool disable_bias = false;   // drop the medical-prior bias from visual attention

  void validate() const;
  std::array<bool, 4> enabled_streams() const;  // order: V, T, S, TS
};

inline constexpr std::array<const char*, 4> kStreamNames = {"mV", "mT", "mS", "mTS"};

// A message stream; degenerate means the producing token set or prototype
// collapsed and the gate should treat the stream as maximally uncertain.
struct Stream {
  VoxelGrid grid;
  bool degenerate = false;
};

struct MessageStreams {
  Stream m_v, m_t, m_s, m_ts;
  const Stream& get(std::size_t q) const;
};

struct SemanticField {
  VoxelGrid phi;  // logistic(sim(F(x), T_bar) / tau), in (0, 1)
  bool degenerate = false;
};

SemanticField semantic_field(const VoxelGrid& field, const UnitVector& t_bar,
                             Temperature tau);

// w_hier * (hinge(P_ET - P_TC) + hinge(P_TC - P_WT)) per voxel.
VoxelGrid hier_penalty(const ProbMaps& p, double w_hier);

// w_topo * mean-class local 6-neighbor absolute difference per voxel.
VoxelGrid topo_penalty(const ProbMaps& p, double w_topo);

// Visual attention with the per-block medical-prior bias
// log(1 + phi_T(b_i)) - r_hier(b_i) - r_topo(b_i) added to the similarity
// scores; block means are taken over each token's source block.
Stream varw(const VoxelGrid& field, const TokenSet& visual_tokens,
            const VoxelGrid& phi_t, const VoxelGrid& r_hier,
            const VoxelGrid& r_topo, Temperature tau, std::size_t block);

// Similarity-softmax aggregation of a token set into a per-voxel message.
Stream ssam(const VoxelGrid& field, const TokenSet& tokens, Temperature tau);

// Channel gate: (T_bar ⊙ S_bar) ⊙ F(x).
Stream zscm(const UnitVector& t_bar, const UnitVector& s_bar,
            const VoxelGrid& field);

struct PfugResult {
  VoxelGrid fused;
  std::array<VoxelGrid, 4> weights;  // zero grids for disabled streams
};

// exp(-u_q) softmax over the enabled streams; `uniform` drops the
// uncertainty weighting (equal weights over enabled streams).
PfugResult pfug(const MessageStreams& streams, const UncertaintyFields& u,
                std::array<bool, 4> enabled, bool uniform = false);

// Ablation baseline: every unordered pair of enabled streams is gated on
// its own, then the pair results are averaged with equal weight.
PfugResult pfug_pairwise(const MessageStreams& streams, const UncertaintyFields& u,
                         std::array<bool, 4> enabled, bool uniform = false);

// (1 - lambda) * f + lambda * m, voxel-wise.
VoxelGrid convex_update(const VoxelGrid& f, const VoxelGrid& m, double lambda);

// Per-voxel L2 normalization of the channel rows; zero rows stay zero.
void renormalize_channel_rows(VoxelGrid& f);

// Mass-weighted mean of the field over each class's soft support, normalized.
std::array<UnitVector, 3> class_anchors(const VoxelGrid& field, const ProbMaps& p);

// Nesting projection via cumulative max: P_ET <= P_TC <= P_WT afterwards.
ProbMaps project_hierarchy(const ProbMaps& p);

struct RefreshResult {
  ProbMaps maps;            // projected output
  ProbMaps pre_projection;  // linear-probe maps before the nesting projection
  std::array<bool, 3> retained{};  // classes kept from the previous maps
};

// Parameter-free linear probe P_c = logistic(sim(F, anchor_c) / tau) with
// the nesting projection applied; classes with degenerate anchors retain
// their previous maps.
RefreshResult refresh_probmaps(const VoxelGrid& field,
                               const std::array<UnitVector, 3>& anchors,
                               Temperature tau, const ProbMaps& previous);

struct IterationDiag {
  double residual = 0.0;                 // ||F_next - F|| / ||F||
  std::array<double, 4> mean_gate{};     // V, T, S, TS
  double mean_phi_t = 0.0;
  double violation_before = 0.0;         // hardened nesting violations entering the iteration
  double violation_after = 0.0;          // after refresh + projection
  double mean_r_hier_preproj = 0.0;      // unit-weight hinge penalty of the pre-projection maps
};

struct FusionDiagnostics {
  std::vector<IterationDiag> iterations;
};

class FusionAbortError : public Error {
 public:
  FusionAbortError(const std::string& what, FusionDiagnostics diag)
      : Error(what), diagnostics(std::move(diag)) {}
  FusionDiagnostics diagnostics;
};

struct FusionResult {
  VoxelGrid field;
  ProbMaps probmaps;
  FusionDiagnostics diagnostics;
};

// Full fusion pass: iterates spatial-token rebuild, semantic field and
// penalties, the enabled message streams, uncertainty gating, the convex
// update and optional renormalization, then the probability-map refresh.
// Aborts when the residual exceeds 10x the first iteration's.
FusionResult run_fusion(const VoxelGrid& field0, const TokenSet& semantic,
                        const ProbMaps& probmaps, const FusionConfig& cfg);

}  // namespace umcf
