#include "umcf/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

namespace umcf {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'U', 'M', 'C', 'F', 'V', 'O', 'L', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF32 = 1;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  std::string bytes;
  std::size_t pos = 0;
  std::string name;

  void need(std::size_t n, const char* what) const {
    if (pos + n > bytes.size()) {
      throw IoError(name + ": truncated " + what + " at byte offset " +
                    std::to_string(pos));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    }
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    }
    pos += 8;
    return v;
  }
};

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

void spill(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

VoxelGrid read_volume(const std::filesystem::path& path) {
  Reader r{slurp(path), 0, path.string()};

  r.need(8, "magic");
  if (std::memcmp(r.bytes.data(), kMagic, 8) != 0) {
    throw IoError(r.name + ": bad magic at byte offset 0");
  }
  r.pos = 8;
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) {
    throw IoError(r.name + ": unsupported version " + std::to_string(version) +
                  " at byte offset 8");
  }
  const std::size_t ndim_off = r.pos;
  const std::uint32_t ndim = r.u32("ndim");
  if (ndim != 3 && ndim != 4) {
    throw IoError(r.name + ": ndim must be 3 or 4 at byte offset " +
                  std::to_string(ndim_off));
  }
  std::uint64_t dims[4] = {0, 0, 0, 1};
  for (std::uint32_t i = 0; i < ndim; ++i) {
    const std::size_t off = r.pos;
    dims[i] = r.u64("dims");
    if (dims[i] == 0) {
      throw IoError(r.name + ": zero dimension at byte offset " + std::to_string(off));
    }
  }
  const std::size_t dtype_off = r.pos;
  const std::uint32_t dtype = r.u32("dtype");
  if (dtype != kDtypeF32) {
    throw IoError(r.name + ": unsupported dtype " + std::to_string(dtype) +
                  " at byte offset " + std::to_string(dtype_off));
  }

  std::uint64_t total = 1;
  for (int i = 0; i < 4; ++i) {
    if (dims[i] != 0 && total > kMaxElements / dims[i]) {
      throw IoError(r.name + ": dims overflow");
    }
    total *= dims[i];
  }
  if (total > kMaxElements) throw IoError(r.name + ": dims overflow");

  const std::size_t payload = r.bytes.size() - r.pos;
  if (payload != total * 4) {
    throw IoError(r.name + ": payload is " + std::to_string(payload) +
                  " bytes, expected " + std::to_string(total * 4) +
                  " at byte offset " + std::to_string(r.pos));
  }

  VoxelGrid g(static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]),
              static_cast<std::size_t>(dims[2]), static_cast<std::size_t>(dims[3]));
  for (std::uint64_t i = 0; i < total; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(
                  static_cast<unsigned char>(r.bytes[r.pos + i * 4 + b]))
              << (8 * b);
    }
    g.data[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  g.ensure_finite("read_volume");
  return g;
}

void write_volume(const std::filesystem::path& path, const VoxelGrid& grid) {
  if (grid.size() == 0) throw ValidationError("write_volume: empty grid");
  grid.ensure_finite("write_volume");

  std::string out;
  out.reserve(40 + grid.size() * 4);
  out.append(kMagic, 8);
  put_u32(out, kVersion);
  const bool scalar = grid.c == 1;
  put_u32(out, scalar ? 3 : 4);
  put_u64(out, grid.h);
  put_u64(out, grid.w);
  put_u64(out, grid.d);
  if (!scalar) put_u64(out, grid.c);
  put_u32(out, kDtypeF32);
  for (const double v : grid.data) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  spill(path, out);
}

ProbMaps probmaps_from_grid(const VoxelGrid& grid) {
  if (grid.c != 3) {
    throw ValidationError("probmaps volume must have 3 channels (ET, TC, WT), got " +
                          std::to_string(grid.c));
  }
  ProbMaps p(grid.h, grid.w, grid.d);
  const std::size_t n = grid.voxels();
  for (std::size_t ci = 0; ci < 3; ++ci) {
    std::copy(grid.data.begin() + ci * n, grid.data.begin() + (ci + 1) * n,
              p.maps[ci].begin());
  }
  p.validate();
  return p;
}

VoxelGrid grid_from_probmaps(const ProbMaps& p) {
  p.validate();
  VoxelGrid g(p.h, p.w, p.d, 3);
  const std::size_t n = p.voxels();
  for (std::size_t ci = 0; ci < 3; ++ci) {
    std::copy(p.maps[ci].begin(), p.maps[ci].end(), g.data.begin() + ci * n);
  }
  return g;
}

ProbMaps read_probmaps(const std::filesystem::path& path) {
  return probmaps_from_grid(read_volume(path));
}

void write_probmaps(const std::filesystem::path& path, const ProbMaps& p) {
  write_volume(path, grid_from_probmaps(p));
}

// ---------------------------------------------------------------------------
// Token files
// ---------------------------------------------------------------------------

namespace {

json parse_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return j;
}

std::vector<double> number_array(const json& j, const std::string& ctx) {
  if (!j.is_array()) throw ValidationError(ctx + " must be an array of numbers");
  std::vector<double> v;
  v.reserve(j.size());
  for (const auto& e : j) {
    if (!e.is_number()) throw ValidationError(ctx + " must contain only numbers");
    const double x = e.get<double>();
    if (!std::isfinite(x)) throw ValidationError(ctx + " contains a non-finite value");
    v.push_back(x);
  }
  return v;
}

}  // namespace

TokenDoc read_token_doc(const std::filesystem::path& path) {
  const json j = parse_json_file(path);
  if (!j.is_object()) throw ValidationError(path.string() + ": token file must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "dim" && key != "modality" && key != "tokens") {
      throw ValidationError("token file: unknown key \"" + key + "\"");
    }
  }
  TokenDoc doc;
  if (!j.contains("dim") || !j["dim"].is_number_unsigned()) {
    throw ValidationError("token file: \"dim\" must be a positive integer");
  }
  doc.dim = j["dim"].get<std::size_t>();
  if (doc.dim == 0) throw ValidationError("token file: \"dim\" must be >= 1");
  doc.modality = j.value("modality", std::string("semantic"));
  modality_from_string(doc.modality);  // validates

  if (!j.contains("tokens") || !j["tokens"].is_array() || j["tokens"].empty()) {
    throw ValidationError("token file: \"tokens\" must be a non-empty array");
  }
  std::set<std::string> labels;
  for (const auto& entry : j["tokens"]) {
    if (!entry.is_object()) throw ValidationError("token file: entries must be objects");
    TokenEntry te;
    for (const auto& [key, _] : entry.items()) {
      if (key != "label" && key != "values" && key != "words") {
        throw ValidationError("token file: unknown entry key \"" + key + "\"");
      }
    }
    if (!entry.contains("label") || !entry["label"].is_string()) {
      throw ValidationError("token file: every entry needs a string \"label\"");
    }
    te.label = entry["label"].get<std::string>();
    if (!labels.insert(te.label).second) {
      throw ValidationError("token file: duplicate label \"" + te.label + "\"");
    }
    const bool has_values = entry.contains("values");
    const bool has_words = entry.contains("words");
    if (has_values == has_words) {
      throw ValidationError("token \"" + te.label +
                            "\": exactly one of \"values\" or \"words\" is required");
    }
    if (has_values) {
      te.values = number_array(entry["values"], "token \"" + te.label + "\" values");
      if (te.values.size() != doc.dim) {
        throw ValidationError("token \"" + te.label + "\": vector length " +
                              std::to_string(te.values.size()) + " != dim " +
                              std::to_string(doc.dim));
      }
    } else {
      if (!entry["words"].is_array() || entry["words"].empty()) {
        throw ValidationError("token \"" + te.label + "\": \"words\" must be non-empty");
      }
      for (const auto& wv : entry["words"]) {
        auto v = number_array(wv, "token \"" + te.label + "\" word vector");
        if (v.size() != doc.dim) {
          throw ValidationError("token \"" + te.label + "\": word vector length " +
                                std::to_string(v.size()) + " != dim " +
                                std::to_string(doc.dim));
        }
        te.words.push_back(std::move(v));
      }
    }
    doc.entries.push_back(std::move(te));
  }
  return doc;
}

void write_token_doc(const std::filesystem::path& path, const TokenDoc& doc) {
  json j;
  j["dim"] = doc.dim;
  j["modality"] = doc.modality;
  json tokens = json::array();
  for (const auto& te : doc.entries) {
    json entry;
    entry["label"] = te.label;
    if (!te.words.empty()) {
      entry["words"] = te.words;
    } else {
      entry["values"] = te.values;
    }
    tokens.push_back(std::move(entry));
  }
  j["tokens"] = std::move(tokens);
  spill(path, j.dump(2) + "\n");
}

std::vector<PhraseEmbedding> phrases_from_doc(const TokenDoc& doc) {
  std::vector<PhraseEmbedding> phrases;
  phrases.reserve(doc.entries.size());
  for (const auto& te : doc.entries) {
    PhraseEmbedding p;
    p.phrase = te.label;
    if (!te.words.empty()) {
      p.word_vectors = te.words;
    } else {
      p.word_vectors = {te.values};
    }
    phrases.push_back(std::move(p));
  }
  return phrases;
}

TokenSet tokens_from_doc(const TokenDoc& doc, std::size_t expected_dim,
                         std::uint64_t seed) {
  const auto phrases = phrases_from_doc(doc);

  // Phrase-level mean pooling in the file's native dimension.
  std::vector<std::vector<double>> pooled;
  pooled.reserve(phrases.size());
  for (const auto& p : phrases) {
    std::vector<double> mean(doc.dim, 0.0);
    for (std::size_t ch = 0; ch < doc.dim; ++ch) {
      mean[ch] = pairwise_sum_of(0, p.word_vectors.size(), [&](std::size_t i) {
                   return p.word_vectors[i][ch];
                 }) /
                 static_cast<double>(p.word_vectors.size());
    }
    pooled.push_back(std::move(mean));
  }

  if (doc.dim != expected_dim) {
    pooled = project_embeddings(pooled, expected_dim, seed).vectors;
  }

  std::vector<UnitVector> tokens;
  tokens.reserve(pooled.size());
  for (const auto& v : pooled) tokens.push_back(l2_normalize(v));
  return make_token_set(modality_from_string(doc.modality), expected_dim,
                        std::move(tokens));
}

TokenSet read_tokens(const std::filesystem::path& path, std::size_t expected_dim,
                     std::uint64_t seed) {
  return tokens_from_doc(read_token_doc(path), expected_dim, seed);
}

// ---------------------------------------------------------------------------
// Config files
// ---------------------------------------------------------------------------

FusionConfig read_config(const std::filesystem::path& path) {
  const json j = parse_json_file(path);
  if (!j.is_object()) throw ValidationError(path.string() + ": config must be a JSON object");

  FusionConfig cfg;
  const auto num = [&](const char* key, double& dst) {
    if (!j.contains(key)) return;
    if (!j[key].is_number()) throw ValidationError(std::string("config: \"") + key + "\" must be a number");
    dst = j[key].get<double>();
  };
  const auto uns = [&](const char* key, std::size_t& dst) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_unsigned()) {
      throw ValidationError(std::string("config: \"") + key + "\" must be a non-negative integer");
    }
    dst = j[key].get<std::size_t>();
  };
  const auto boolean = [&](const char* key, bool& dst) {
    if (!j.contains(key)) return;
    if (!j[key].is_boolean()) throw ValidationError(std::string("config: \"") + key + "\" must be a boolean");
    dst = j[key].get<bool>();
  };

  static const std::set<std::string> known = {
      "tau",         "lambda",       "iterations",      "block",
      "w_hier",      "w_topo",       "refresh_probmaps", "renormalize_each_iter",
      "disable_mV",  "disable_mT",   "disable_mS",      "disable_mTS",
      "disable_pfug", "pairwise_mode", "disable_bias"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ValidationError("config: unknown key \"" + key + "\"");
  }

  num("tau", cfg.tau);
  num("lambda", cfg.lambda);
  uns("iterations", cfg.iterations);
  uns("block", cfg.block);
  num("w_hier", cfg.w_hier);
  num("w_topo", cfg.w_topo);
  boolean("refresh_probmaps", cfg.refresh_probmaps);
  boolean("renormalize_each_iter", cfg.renormalize_each_iter);
  boolean("disable_mV", cfg.disable_mV);
  boolean("disable_mT", cfg.disable_mT);
  boolean("disable_mS", cfg.disable_mS);
  boolean("disable_mTS", cfg.disable_mTS);
  boolean("disable_pfug", cfg.disable_pfug);
  boolean("pairwise_mode", cfg.pairwise_mode);
  boolean("disable_bias", cfg.disable_bias);

  cfg.validate();
  return cfg;
}

void write_config(const std::filesystem::path& path, const FusionConfig& cfg) {
  json j;
  j["tau"] = cfg.tau;
  j["lambda"] = cfg.lambda;
  j["iterations"] = cfg.iterations;
  j["block"] = cfg.block;
  j["w_hier"] = cfg.w_hier;
  j["w_topo"] = cfg.w_topo;
  j["refresh_probmaps"] = cfg.refresh_probmaps;
  j["renormalize_each_iter"] = cfg.renormalize_each_iter;
  j["disable_mV"] = cfg.disable_mV;
  j["disable_mT"] = cfg.disable_mT;
  j["disable_mS"] = cfg.disable_mS;
  j["disable_mTS"] = cfg.disable_mTS;
  j["disable_pfug"] = cfg.disable_pfug;
  j["pairwise_mode"] = cfg.pairwise_mode;
  j["disable_bias"] = cfg.disable_bias;
  spill(path, j.dump(2) + "\n");
}

}  // namespace umcf
