#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "umcf/field_core.hpp"

namespace umcf {

enum class Modality { visual, semantic, spatial };

const char* to_string(Modality m);
Modality modality_from_string(const std::string& s);

// Ordered unit-norm tokens of one modality plus their normalized mean.
// Degenerate tokens are kept in place but excluded from the prototype.
struct TokenSet {
  Modality modality = Modality::visual;
  std::size_t dim = 0;
  std::vector<UnitVector> tokens;
  UnitVector prototype;
};

TokenSet make_token_set(Modality modality, std::size_t dim,
                        std::vector<UnitVector> tokens);

// A clinical phrase with its pre-encoded word vectors.
struct PhraseEmbedding {
  std::string phrase;
  std::vector<std::vector<double>> word_vectors;
};

// One token per cubic block: normalized block mean of the channel rows.
// expected_dim = 0 accepts whatever channel count the grid carries.
TokenSet build_visual_tokens(const VoxelGrid& features, std::size_t block,
                             std::size_t expected_dim = 0);

// One token per phrase: normalized average of its word vectors.
TokenSet build_semantic_tokens(const std::vector<PhraseEmbedding>& phrases);

struct ProjectedVectors {
  std::vector<std::vector<double>> vectors;
  bool padded = false;  // target dim exceeded the source dim
};

// Maps vectors of dim d_text into dim target via a seeded projection with
// orthonormal rows, scaled by sqrt(d_text/target) so inner products are
// preserved in expectation. Identity when dims already match; zero-padding
// (then renormalization) when target > d_text.
ProjectedVectors project_embeddings(const std::vector<std::vector<double>>& raw,
                                    std::size_t target_dim, std::uint64_t seed);

}  // namespace umcf
