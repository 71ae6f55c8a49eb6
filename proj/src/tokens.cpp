#include "umcf/tokens.hpp"

#include <cmath>
#include <string>

#include "umcf/rng.hpp"

namespace umcf {

const char* to_string(Modality m) {
  switch (m) {
    case Modality::visual: return "visual";
    case Modality::semantic: return "semantic";
    case Modality::spatial: return "spatial";
  }
  return "?";
}

Modality modality_from_string(const std::string& s) {
  if (s == "visual") return Modality::visual;
  if (s == "semantic") return Modality::semantic;
  if (s == "spatial") return Modality::spatial;
  throw ValidationError("unknown modality \"" + s + "\"");
}

TokenSet make_token_set(Modality modality, std::size_t dim,
                        std::vector<UnitVector> tokens) {
  TokenSet set;
  set.modality = modality;
  set.dim = dim;
  for (const auto& t : tokens) {
    if (t.dim() != dim) {
      throw ValidationError("token set: token dim " + std::to_string(t.dim()) +
                            " does not match set dim " + std::to_string(dim));
    }
  }
  set.tokens = std::move(tokens);

  std::vector<const UnitVector*> live;
  live.reserve(set.tokens.size());
  for (const auto& t : set.tokens) {
    if (!t.degenerate) live.push_back(&t);
  }
  if (live.empty()) {
    set.prototype = UnitVector::zero_fallback(dim);
    return set;
  }
  std::vector<double> mean(dim, 0.0);
  for (std::size_t ch = 0; ch < dim; ++ch) {
    mean[ch] = pairwise_sum_of(0, live.size(), [&](std::size_t i) {
                 return live[i]->values[ch];
               }) /
               static_cast<double>(live.size());
  }
  set.prototype = l2_normalize(mean);
  return set;
}

TokenSet build_visual_tokens(const VoxelGrid& features, std::size_t block,
                             std::size_t expected_dim) {
  if (expected_dim != 0 && features.c != expected_dim) {
    throw ValidationError("build_visual_tokens: grid has " +
                          std::to_string(features.c) + " channels, expected " +
                          std::to_string(expected_dim));
  }
  const auto pooled = block_pool(features, block);
  std::vector<UnitVector> tokens;
  tokens.reserve(pooled.size());
  for (const auto& bm : pooled) tokens.push_back(l2_normalize(bm.mean));
  return make_token_set(Modality::visual, features.c, std::move(tokens));
}

TokenSet build_semantic_tokens(const std::vector<PhraseEmbedding>& phrases) {
  if (phrases.empty()) {
    throw ValidationError(
        "build_semantic_tokens: empty phrase list (ablate the semantic stream "
        "explicitly instead)");
  }
  std::size_t dim = 0;
  for (const auto& p : phrases) {
    if (p.word_vectors.empty()) {
      throw ValidationError("phrase \"" + p.phrase + "\" has no word vectors");
    }
    for (const auto& wv : p.word_vectors) {
      if (dim == 0) dim = wv.size();
      if (wv.size() != dim || dim == 0) {
        throw ValidationError("phrase \"" + p.phrase +
                              "\": inconsistent word vector dimension");
      }
    }
  }

  std::vector<UnitVector> tokens;
  tokens.reserve(phrases.size());
  for (const auto& p : phrases) {
    std::vector<double> mean(dim, 0.0);
    const std::size_t n = p.word_vectors.size();
    for (std::size_t ch = 0; ch < dim; ++ch) {
      mean[ch] = pairwise_sum_of(0, n, [&](std::size_t i) {
                   return p.word_vectors[i][ch];
                 }) /
                 static_cast<double>(n);
    }
    tokens.push_back(l2_normalize(mean));
  }
  return make_token_set(Modality::semantic, dim, std::move(tokens));
}

namespace {

// Gram-Schmidt rows drawn from the seeded generator; rows that collapse
// numerically are redrawn so the result always has full row rank.
std::vector<std::vector<double>> orthonormal_rows(std::size_t rows,
                                                  std::size_t cols,
                                                  std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> basis;
  basis.reserve(rows);
  while (basis.size() < rows) {
    std::vector<double> row(cols);
    for (auto& v : row) v = rng.uniform_sym();
    for (const auto& b : basis) {
      const double dot = pairwise_sum_of(
          0, cols, [&](std::size_t i) { return row[i] * b[i]; });
      for (std::size_t i = 0; i < cols; ++i) row[i] -= dot * b[i];
    }
    const double norm = std::sqrt(pairwise_sum_of(
        0, cols, [&](std::size_t i) { return row[i] * row[i]; }));
    if (norm < 1e-8) continue;
    for (auto& v : row) v /= norm;
    basis.push_back(std::move(row));
  }
  return basis;
}

}  // namespace

ProjectedVectors project_embeddings(const std::vector<std::vector<double>>& raw,
                                    std::size_t target_dim, std::uint64_t seed) {
  if (target_dim == 0) throw ValidationError("project_embeddings: target dim must be >= 1");
  ProjectedVectors out;
  if (raw.empty()) return out;

  const std::size_t d_text = raw.front().size();
  if (d_text == 0) throw ValidationError("project_embeddings: source dim must be >= 1");
  for (const auto& v : raw) {
    if (v.size() != d_text) {
      throw ValidationError("project_embeddings: inconsistent source dimensions");
    }
  }

  if (d_text == target_dim) {
    out.vectors = raw;
    return out;
  }

  if (target_dim > d_text) {
    out.padded = true;
    out.vectors.reserve(raw.size());
    for (const auto& v : raw) {
      std::vector<double> padded(target_dim, 0.0);
      std::copy(v.begin(), v.end(), padded.begin());
      out.vectors.push_back(l2_normalize(padded).values);
    }
    return out;
  }

  const auto rows = orthonormal_rows(target_dim, d_text, seed);
  const double scale = std::sqrt(static_cast<double>(d_text) /
                                 static_cast<double>(target_dim));
  out.vectors.reserve(raw.size());
  for (const auto& v : raw) {
    std::vector<double> proj(target_dim);
    for (std::size_t r = 0; r < target_dim; ++r) {
      proj[r] = scale * pairwise_sum_of(0, d_text, [&](std::size_t i) {
                  return rows[r][i] * v[i];
                });
    }
    out.vectors.push_back(std::move(proj));
  }
  return out;
}

}  // namespace umcf
