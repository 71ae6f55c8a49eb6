#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "umcf/fusion.hpp"
#include "umcf/spatial.hpp"
#include "umcf/tokens.hpp"

namespace umcf {

// ---------------------------------------------------------------------------
// Volume container ("UMCFVOL1"): little-endian binary, float32 payload in
// x-fastest / y / z / channel order. Header: magic(8) | version u32 |
// ndim u32 (3|4) | dims ndim x u64 (H, W, D[, C]) | dtype u32 (1 = f32).
// ---------------------------------------------------------------------------

VoxelGrid read_volume(const std::filesystem::path& path);
void write_volume(const std::filesystem::path& path, const VoxelGrid& grid);

// Probability maps travel as a 4-D volume with C = 3, channel order ET, TC, WT.
ProbMaps probmaps_from_grid(const VoxelGrid& grid);
VoxelGrid grid_from_probmaps(const ProbMaps& p);

ProbMaps read_probmaps(const std::filesystem::path& path);
void write_probmaps(const std::filesystem::path& path, const ProbMaps& p);

// ---------------------------------------------------------------------------
// Token file: JSON document { "dim", "modality", "tokens": [...] } where each
// entry carries a unique "label" and either "values" (one vector) or "words"
// (per-word vectors pooled into the phrase vector).
// ---------------------------------------------------------------------------

struct TokenEntry {
  std::string label;
  std::vector<double> values;               // used when words is empty
  std::vector<std::vector<double>> words;   // phrase form
};

struct TokenDoc {
  std::size_t dim = 0;
  std::string modality = "semantic";
  std::vector<TokenEntry> entries;
};

TokenDoc read_token_doc(const std::filesystem::path& path);
void write_token_doc(const std::filesystem::path& path, const TokenDoc& doc);

// Pools phrase words, projects to expected_dim on mismatch (seeded),
// normalizes and computes the prototype.
TokenSet read_tokens(const std::filesystem::path& path, std::size_t expected_dim,
                     std::uint64_t seed = kDefaultProjectionSeed);

std::vector<PhraseEmbedding> phrases_from_doc(const TokenDoc& doc);
TokenSet tokens_from_doc(const TokenDoc& doc, std::size_t expected_dim,
                         std::uint64_t seed = kDefaultProjectionSeed);

// ---------------------------------------------------------------------------
// Config file: JSON mirroring FusionConfig field-for-field; unknown keys
// are rejected, absent keys fall back to defaults.
// ---------------------------------------------------------------------------

FusionConfig read_config(const std::filesystem::path& path);
void write_config(const std::filesystem::path& path, const FusionConfig& cfg);

}  // namespace umcf
