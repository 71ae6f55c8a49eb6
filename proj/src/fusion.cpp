#include "umcf/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "umcf/eval.hpp"

namespace umcf {

void FusionConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ValidationError("config: tau must be > 0");
  }
  if (!(lambda > 0.0 && lambda < 1.0)) {
    throw ValidationError("config: lambda must lie in (0, 1)");
  }
  if (iterations < 1 || iterations > 64) {
    throw ValidationError("config: iterations must be in [1, 64]");
  }
  if (block < 1) throw ValidationError("config: block must be >= 1");
  if (!(w_hier >= 0.0) || !(w_topo >= 0.0)) {
    throw ValidationError("config: penalty weights must be >= 0");
  }
  if (disable_mV && disable_mT && disable_mS && disable_mTS) {
    throw ValidationError("all streams disabled");
  }
}

std::array<bool, 4> FusionConfig::enabled_streams() const {
  return {!disable_mV, !disable_mT, !disable_mS, !disable_mTS};
}

const Stream& MessageStreams::get(std::size_t q) const {
  switch (q) {
    case 0: return m_v;
    case 1: return m_t;
    case 2: return m_s;
    default: return m_ts;
  }
}

namespace {

// Flattens a token set into a row-major (tokens x dim) matrix for the hot
// loops. Degenerate tokens are zero rows and score 0 against everything.
std::vector<double> flatten_tokens(const TokenSet& set) {
  std::vector<double> flat(set.tokens.size() * set.dim);
  for (std::size_t t = 0; t < set.tokens.size(); ++t) {
    std::copy(set.tokens[t].values.begin(), set.tokens[t].values.end(),
              flat.begin() + t * set.dim);
  }
  return flat;
}

void require_matching_dim(const VoxelGrid& field, const TokenSet& tokens,
                          const char* what) {
  if (field.c != tokens.dim) {
    throw ValidationError(std::string(what) + ": field has " +
                          std::to_string(field.c) + " channels but tokens have dim " +
                          std::to_string(tokens.dim));
  }
}

double grid_mean(const VoxelGrid& g) {
  return pairwise_sum(g.data) / static_cast<double>(g.data.size());
}

}  // namespace

SemanticField semantic_field(const VoxelGrid& field, const UnitVector& t_bar,
                             Temperature tau) {
  if (field.c != t_bar.dim()) {
    throw ValidationError("semantic_field: field channels != prototype dim");
  }
  SemanticField out;
  out.phi = VoxelGrid(field.h, field.w, field.d, 1, 0.5);
  if (t_bar.degenerate) {
    out.degenerate = true;
    return out;
  }
  const std::size_t n = field.voxels();
  const std::size_t dim = field.c;
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      double dot = 0.0;
      for (std::size_t ch = 0; ch < dim; ++ch) {
        dot += field.data[i + n * ch] * t_bar.values[ch];
      }
      dot = std::clamp(dot, -1.0, 1.0);
      out.phi.data[i] = logistic(dot / tau.tau);
    }
  });
  return out;
}

VoxelGrid hier_penalty(const ProbMaps& p, double w_hier) {
  p.validate();
  if (!(w_hier >= 0.0)) throw ValidationError("hier_penalty: weight must be >= 0");
  VoxelGrid out(p.h, p.w, p.d, 1, 0.0);
  const auto& et = p.map(TumorClass::et);
  const auto& tc = p.map(TumorClass::tc);
  const auto& wt = p.map(TumorClass::wt);
  parallel_for(p.voxels(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      out.data[i] = w_hier * (std::max(0.0, et[i] - tc[i]) +
                              std::max(0.0, tc[i] - wt[i]));
    }
  });
  return out;
}

VoxelGrid topo_penalty(const ProbMaps& p, double w_topo) {
  if (!(w_topo >= 0.0)) throw ValidationError("topo_penalty: weight must be >= 0");
  VoxelGrid out = local_tv(p);
  for (auto& v : out.data) v *= w_topo;
  return out;
}

Stream varw(const VoxelGrid& field, const TokenSet& visual_tokens,
            const VoxelGrid& phi_t, const VoxelGrid& r_hier,
            const VoxelGrid& r_topo, Temperature tau, std::size_t block) {
  require_matching_dim(field, visual_tokens, "varw");
  if (visual_tokens.tokens.empty()) throw ValidationError("varw: empty token set");
  if (!field.same_volume(phi_t) || !field.same_volume(r_hier) ||
      !field.same_volume(r_topo)) {
    throw ValidationError("varw: bias field shape mismatch");
  }

  const std::size_t ntok = visual_tokens.tokens.size();
  const std::size_t expected = ceil_div(field.h, block) * ceil_div(field.w, block) *
                               ceil_div(field.d, block);
  if (ntok != expected) {
    throw ValidationError("varw: token count " + std::to_string(ntok) +
                          " does not match block partition (" +
                          std::to_string(expected) + ")");
  }

  // Per-token bias from the token's source block.
  const auto phi_means = block_pool(phi_t, block);
  const auto rh_means = block_pool(r_hier, block);
  const auto rt_means = block_pool(r_topo, block);
  std::vector<double> bias(ntok);
  for (std::size_t t = 0; t < ntok; ++t) {
    bias[t] = std::log1p(phi_means[t].mean[0]) - rh_means[t].mean[0] -
              rt_means[t].mean[0];
  }

  const auto flat = flatten_tokens(visual_tokens);
  const std::size_t n = field.voxels();
  const std::size_t dim = field.c;

  Stream out;
  out.grid = VoxelGrid(field.h, field.w, field.d, dim, 0.0);
  bool all_degenerate = true;
  for (const auto& t : visual_tokens.tokens) all_degenerate &= t.degenerate;
  out.degenerate = all_degenerate;

  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    std::vector<double> row(dim), scores(ntok), msg(dim);
    for (std::size_t i = begin; i < end; ++i) {
      field.channel_row(i, row.data());
      for (std::size_t t = 0; t < ntok; ++t) {
        const double* tok = flat.data() + t * dim;
        double dot = 0.0;
        for (std::size_t ch = 0; ch < dim; ++ch) dot += row[ch] * tok[ch];
        scores[t] = std::clamp(dot, -1.0, 1.0) + bias[t];
      }
      detail::tempered_softmax_inplace(scores.data(), ntok, tau.tau);
      std::fill(msg.begin(), msg.end(), 0.0);
      for (std::size_t t = 0; t < ntok; ++t) {
        const double* tok = flat.data() + t * dim;
        const double a = scores[t];
        for (std::size_t ch = 0; ch < dim; ++ch) msg[ch] += a * tok[ch];
      }
      out.grid.set_channel_row(i, msg.data());
    }
  });
  return out;
}

Stream ssam(const VoxelGrid& field, const TokenSet& tokens, Temperature tau) {
  if (tokens.modality == Modality::visual) {
    throw ValidationError("ssam: expects semantic or spatial tokens");
  }
  require_matching_dim(field, tokens, "ssam");

  Stream out;
  out.grid = VoxelGrid(field.h, field.w, field.d, field.c, 0.0);

  bool all_degenerate = true;
  for (const auto& t : tokens.tokens) all_degenerate &= t.degenerate;
  if (tokens.tokens.empty() || all_degenerate) {
    out.degenerate = true;
    return out;
  }

  const auto flat = flatten_tokens(tokens);
  const std::size_t ntok = tokens.tokens.size();
  const std::size_t n = field.voxels();
  const std::size_t dim = field.c;

  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    std::vector<double> row(dim), scores(ntok), msg(dim);
    for (std::size_t i = begin; i < end; ++i) {
      field.channel_row(i, row.data());
      for (std::size_t t = 0; t < ntok; ++t) {
        const double* tok = flat.data() + t * dim;
        double dot = 0.0;
        for (std::size_t ch = 0; ch < dim; ++ch) dot += row[ch] * tok[ch];
        scores[t] = std::clamp(dot, -1.0, 1.0);
      }
      detail::tempered_softmax_inplace(scores.data(), ntok, tau.tau);
      std::fill(msg.begin(), msg.end(), 0.0);
      for (std::size_t t = 0; t < ntok; ++t) {
        const double* tok = flat.data() + t * dim;
        const double a = scores[t];
        for (std::size_t ch = 0; ch < dim; ++ch) msg[ch] += a * tok[ch];
      }
      out.grid.set_channel_row(i, msg.data());
    }
  });
  return out;
}

Stream zscm(const UnitVector& t_bar, const UnitVector& s_bar,
            const VoxelGrid& field) {
  if (t_bar.dim() != s_bar.dim() || t_bar.dim() != field.c) {
    throw ValidationError("zscm: dimension mismatch");
  }
  Stream out;
  out.grid = VoxelGrid(field.h, field.w, field.d, field.c, 0.0);
  out.degenerate = t_bar.degenerate || s_bar.degenerate;

  std::vector<double> gate(field.c);
  for (std::size_t ch = 0; ch < field.c; ++ch) {
    gate[ch] = t_bar.values[ch] * s_bar.values[ch];
  }
  const std::size_t n = field.voxels();
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t ch = 0; ch < field.c; ++ch) {
      const double g = gate[ch];
      const double* src = field.data.data() + n * ch;
      double* dst = out.grid.data.data() + n * ch;
      for (std::size_t i = begin; i < end; ++i) dst[i] = g * src[i];
    }
  });
  return out;
}

namespace {

void check_gate_inputs(const MessageStreams& streams, const UncertaintyFields& u,
                       std::array<bool, 4> enabled) {
  const std::array<const VoxelGrid*, 4> us = {&u.u_v, &u.u_t, &u.u_s, &u.u_ts};
  const VoxelGrid* ref = nullptr;
  int n_enabled = 0;
  for (std::size_t q = 0; q < 4; ++q) {
    if (!enabled[q]) continue;
    ++n_enabled;
    const VoxelGrid& g = streams.get(q).grid;
    if (ref == nullptr) ref = &g;
    if (!g.same_shape(*ref)) throw ValidationError("pfug: stream shape mismatch");
    if (!g.same_volume(*us[q])) throw ValidationError("pfug: uncertainty shape mismatch");
    for (const double v : us[q]->data) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ValidationError("pfug: uncertainty outside [0, 1]");
      }
    }
  }
  if (n_enabled == 0) throw ValidationError("all streams disabled");
}

}  // namespace

PfugResult pfug(const MessageStreams& streams, const UncertaintyFields& u,
                std::array<bool, 4> enabled, bool uniform) {
  check_gate_inputs(streams, u, enabled);

  const VoxelGrid* ref = nullptr;
  for (std::size_t q = 0; q < 4; ++q) {
    if (enabled[q]) { ref = &streams.get(q).grid; break; }
  }
  const std::size_t n = ref->voxels();
  const std::size_t dim = ref->c;

  PfugResult out;
  out.fused = VoxelGrid(ref->h, ref->w, ref->d, dim, 0.0);
  for (auto& wgrid : out.weights) wgrid = VoxelGrid(ref->h, ref->w, ref->d, 1, 0.0);

  const std::array<const VoxelGrid*, 4> us = {&u.u_v, &u.u_t, &u.u_s, &u.u_ts};

  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      double wsum = 0.0;
      std::array<double, 4> wq{};
      for (std::size_t q = 0; q < 4; ++q) {
        if (!enabled[q]) continue;
        wq[q] = uniform ? 1.0 : std::exp(-us[q]->data[i]);
        wsum += wq[q];
      }
      for (std::size_t q = 0; q < 4; ++q) {
        if (!enabled[q]) continue;
        wq[q] /= wsum;
        out.weights[q].data[i] = wq[q];
      }
      for (std::size_t ch = 0; ch < dim; ++ch) {
        double acc = 0.0;
        for (std::size_t q = 0; q < 4; ++q) {
          if (enabled[q]) acc += wq[q] * streams.get(q).grid.data[i + n * ch];
        }
        out.fused.data[i + n * ch] = acc;
      }
    }
  });
  return out;
}

PfugResult pfug_pairwise(const MessageStreams& streams, const UncertaintyFields& u,
                         std::array<bool, 4> enabled, bool uniform) {
  check_gate_inputs(streams, u, enabled);

  std::vector<std::size_t> on;
  for (std::size_t q = 0; q < 4; ++q) {
    if (enabled[q]) on.push_back(q);
  }

  const VoxelGrid* ref = &streams.get(on.front()).grid;
  const std::size_t n = ref->voxels();
  const std::size_t dim = ref->c;

  PfugResult out;
  out.fused = VoxelGrid(ref->h, ref->w, ref->d, dim, 0.0);
  for (auto& wgrid : out.weights) wgrid = VoxelGrid(ref->h, ref->w, ref->d, 1, 0.0);

  // A single enabled stream passes through unchanged.
  if (on.size() == 1) {
    out.fused = streams.get(on.front()).grid;
    for (auto& v : out.weights[on.front()].data) v = 1.0;
    return out;
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < on.size(); ++a) {
    for (std::size_t b = a + 1; b < on.size(); ++b) pairs.emplace_back(on[a], on[b]);
  }
  const double inv_pairs = 1.0 / static_cast<double>(pairs.size());
  const std::array<const VoxelGrid*, 4> us = {&u.u_v, &u.u_t, &u.u_s, &u.u_ts};

  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      std::array<double, 4> eff{};
      for (const auto& [a, b] : pairs) {
        const double ea = uniform ? 1.0 : std::exp(-us[a]->data[i]);
        const double eb = uniform ? 1.0 : std::exp(-us[b]->data[i]);
        const double inv = 1.0 / (ea + eb);
        eff[a] += ea * inv * inv_pairs;
        eff[b] += eb * inv * inv_pairs;
      }
      for (const std::size_t q : on) out.weights[q].data[i] = eff[q];
      for (std::size_t ch = 0; ch < dim; ++ch) {
        double acc = 0.0;
        for (const std::size_t q : on) {
          acc += eff[q] * streams.get(q).grid.data[i + n * ch];
        }
        out.fused.data[i + n * ch] = acc;
      }
    }
  });
  return out;
}

VoxelGrid convex_update(const VoxelGrid& f, const VoxelGrid& m, double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0)) {
    throw ValidationError("convex_update: lambda must lie in (0, 1)");
  }
  if (!f.same_shape(m)) throw ValidationError("convex_update: shape mismatch");
  VoxelGrid out = f;
  parallel_for(f.data.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      out.data[i] = (1.0 - lambda) * f.data[i] + lambda * m.data[i];
    }
  });
  return out;
}

void renormalize_channel_rows(VoxelGrid& f) {
  const std::size_t n = f.voxels();
  const std::size_t dim = f.c;
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      double sq = 0.0;
      for (std::size_t ch = 0; ch < dim; ++ch) {
        const double v = f.data[i + n * ch];
        sq += v * v;
      }
      const double norm = std::sqrt(sq);
      if (norm < kNormEps) {
        for (std::size_t ch = 0; ch < dim; ++ch) f.data[i + n * ch] = 0.0;
      } else {
        for (std::size_t ch = 0; ch < dim; ++ch) f.data[i + n * ch] /= norm;
      }
    }
  });
}

std::array<UnitVector, 3> class_anchors(const VoxelGrid& field, const ProbMaps& p) {
  if (field.h != p.h || field.w != p.w || field.d != p.d) {
    throw ValidationError("class_anchors: field and probmaps dims differ");
  }
  const std::size_t n = field.voxels();
  std::array<UnitVector, 3> anchors;
  for (std::size_t ci = 0; ci < 3; ++ci) {
    const auto& m = p.maps[ci];
    const double mass = pairwise_sum(m);
    if (mass < kMassEps) {
      anchors[ci] = UnitVector::zero_fallback(field.c);
      continue;
    }
    std::vector<double> mean(field.c);
    for (std::size_t ch = 0; ch < field.c; ++ch) {
      mean[ch] = pairwise_sum_of(0, n, [&](std::size_t i) {
                   return m[i] * field.data[i + n * ch];
                 }) /
                 mass;
    }
    anchors[ci] = l2_normalize(mean);
  }
  return anchors;
}

ProbMaps project_hierarchy(const ProbMaps& p) {
  ProbMaps out = p;
  auto& et = out.map(TumorClass::et);
  auto& tc = out.map(TumorClass::tc);
  auto& wt = out.map(TumorClass::wt);
  for (std::size_t i = 0; i < et.size(); ++i) {
    tc[i] = std::max(tc[i], et[i]);
    wt[i] = std::max(wt[i], tc[i]);
  }
  return out;
}

RefreshResult refresh_probmaps(const VoxelGrid& field,
                               const std::array<UnitVector, 3>& anchors,
                               Temperature tau, const ProbMaps& previous) {
  if (field.h != previous.h || field.w != previous.w || field.d != previous.d) {
    throw ValidationError("refresh_probmaps: field and probmaps dims differ");
  }
  RefreshResult r;
  r.pre_projection = previous;
  const std::size_t n = field.voxels();
  const std::size_t dim = field.c;

  for (std::size_t ci = 0; ci < 3; ++ci) {
    if (anchors[ci].degenerate) {
      r.retained[ci] = true;
      continue;
    }
    if (anchors[ci].dim() != dim) {
      throw ValidationError("refresh_probmaps: anchor dim mismatch");
    }
    auto& dst = r.pre_projection.maps[ci];
    const auto& a = anchors[ci].values;
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        double dot = 0.0;
        for (std::size_t ch = 0; ch < dim; ++ch) dot += field.data[i + n * ch] * a[ch];
        dst[i] = logistic(std::clamp(dot, -1.0, 1.0) / tau.tau);
      }
    });
  }
  r.maps = project_hierarchy(r.pre_projection);
  return r;
}

FusionResult run_fusion(const VoxelGrid& field0, const TokenSet& semantic,
                        const ProbMaps& probmaps, const FusionConfig& cfg) {
  cfg.validate();
  field0.ensure_finite("run_fusion: field");
  probmaps.validate();
  if (field0.h != probmaps.h || field0.w != probmaps.w || field0.d != probmaps.d) {
    throw ValidationError(
        "features and probmaps dims differ: field (" + std::to_string(field0.h) +
        "," + std::to_string(field0.w) + "," + std::to_string(field0.d) +
        ") vs probmaps (" + std::to_string(probmaps.h) + "," +
        std::to_string(probmaps.w) + "," + std::to_string(probmaps.d) + ")");
  }
  if (semantic.dim != field0.c) {
    throw ValidationError("semantic token dim " + std::to_string(semantic.dim) +
                          " does not match field channels " +
                          std::to_string(field0.c));
  }

  const Temperature tau(cfg.tau);
  const auto enabled = cfg.enabled_streams();

  VoxelGrid field = field0;
  ProbMaps p = probmaps;
  const TokenSet visual = build_visual_tokens(field0, cfg.block);

  const VoxelGrid zero_scalar(field.h, field.w, field.d, 1, 0.0);
  const VoxelGrid unit_scalar(field.h, field.w, field.d, 1, 1.0);

  FusionResult result;
  TokenSet spatial_tokens;
  bool have_spatial = false;

  for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
    IterationDiag diag;
    diag.violation_before = hierarchy_violation_rate(p);

    const bool need_spatial = enabled[2] || enabled[3];
    if (need_spatial && (!have_spatial || cfg.refresh_probmaps)) {
      spatial_tokens = build_spatial_tokens(p, field.c, kDefaultProjectionSeed);
      have_spatial = true;
    }

    const SemanticField phi = semantic_field(field, semantic.prototype, tau);
    diag.mean_phi_t = grid_mean(phi.phi);
    const VoxelGrid rh = hier_penalty(p, cfg.w_hier);
    const VoxelGrid rt = topo_penalty(p, cfg.w_topo);

    MessageStreams streams;
    if (enabled[0]) {
      streams.m_v = cfg.disable_bias
                        ? varw(field, visual, zero_scalar, zero_scalar, zero_scalar,
                               tau, cfg.block)
                        : varw(field, visual, phi.phi, rh, rt, tau, cfg.block);
    }
    if (enabled[1]) streams.m_t = ssam(field, semantic, tau);
    if (enabled[2]) streams.m_s = ssam(field, spatial_tokens, tau);
    if (enabled[3]) {
      streams.m_ts = zscm(semantic.prototype, spatial_tokens.prototype, field);
    }

    UncertaintyFields u = compute_uncertainties(p, phi.phi);
    // Degenerate streams gate at maximal uncertainty.
    if (enabled[0] && streams.m_v.degenerate) u.u_v = unit_scalar;
    if (enabled[1] && streams.m_t.degenerate) u.u_t = unit_scalar;
    if (enabled[2] && streams.m_s.degenerate) u.u_s = unit_scalar;
    if (enabled[3] && streams.m_ts.degenerate) u.u_ts = unit_scalar;

    const PfugResult fused = cfg.pairwise_mode
                                 ? pfug_pairwise(streams, u, enabled, cfg.disable_pfug)
                                 : pfug(streams, u, enabled, cfg.disable_pfug);
    for (std::size_t q = 0; q < 4; ++q) {
      diag.mean_gate[q] = enabled[q] ? grid_mean(fused.weights[q]) : 0.0;
    }

    VoxelGrid next = convex_update(field, fused.fused, cfg.lambda);
    if (cfg.renormalize_each_iter) renormalize_channel_rows(next);

    const double num = std::sqrt(pairwise_sum_of(0, next.data.size(), [&](std::size_t i) {
      const double dv = next.data[i] - field.data[i];
      return dv * dv;
    }));
    const double den = std::sqrt(pairwise_sum_of(0, field.data.size(), [&](std::size_t i) {
      return field.data[i] * field.data[i];
    }));
    diag.residual = den > 0.0 ? num / den : num;

    field = std::move(next);

    if (cfg.refresh_probmaps) {
      const auto anchors = class_anchors(field, p);
      auto refreshed = refresh_probmaps(field, anchors, tau, p);
      diag.mean_r_hier_preproj = grid_mean(hier_penalty(refreshed.pre_projection, 1.0));
      p = std::move(refreshed.maps);
    } else {
      diag.mean_r_hier_preproj = grid_mean(hier_penalty(p, 1.0));
    }
    diag.violation_after = hierarchy_violation_rate(p);

    result.diagnostics.iterations.push_back(diag);

    const double first = result.diagnostics.iterations.front().residual;
    if (iter > 0 && diag.residual > 10.0 * first && first > 0.0) {
      throw FusionAbortError("fusion aborted: residual " + std::to_string(diag.residual) +
                                 " exceeds 10x the initial " + std::to_string(first),
                             result.diagnostics);
    }
  }

  result.field = std::move(field);
  result.probmaps = std::move(p);
  return result;
}

}  // namespace umcf
