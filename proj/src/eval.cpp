#include "umcf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "umcf/rng.hpp"

namespace umcf {

namespace {

using nlohmann::json;

// Separate corruption stream so feature noise and violation injection stay
// independently reproducible.
constexpr std::uint64_t kCorruptSalt = 0x517cc1b727220a95ull;

}  // namespace

void PhantomSpec::validate() const {
  if (h == 0 || w == 0 || d == 0) throw ValidationError("phantom: dims must be positive");
  if (feature_dim == 0) throw ValidationError("phantom: feature_dim must be >= 1");
  if (!(feature_noise >= 0.0)) throw ValidationError("phantom: feature_noise must be >= 0");
  if (!(violation_rate >= 0.0 && violation_rate <= 1.0)) {
    throw ValidationError("phantom: violation_rate must lie in [0, 1]");
  }
  for (const Ellipsoid* e : {&et, &tc, &wt}) {
    for (const double a : e->semi_axes) {
      if (!(a > 0.0)) throw ValidationError("phantom: semi-axes must be positive");
    }
  }
}

PhantomSpec default_phantom_spec() { return PhantomSpec{}; }

namespace {

VoxelGrid ellipsoid_mask(const PhantomSpec& spec, const Ellipsoid& e) {
  VoxelGrid mask(spec.h, spec.w, spec.d, 1, 0.0);
  for (std::size_t z = 0; z < spec.d; ++z) {
    for (std::size_t y = 0; y < spec.w; ++y) {
      for (std::size_t x = 0; x < spec.h; ++x) {
        const double dx = (static_cast<double>(x) - e.center[0]) / e.semi_axes[0];
        const double dy = (static_cast<double>(y) - e.center[1]) / e.semi_axes[1];
        const double dz = (static_cast<double>(z) - e.center[2]) / e.semi_axes[2];
        if (dx * dx + dy * dy + dz * dz <= 1.0) mask.at(x, y, z) = 1.0;
      }
    }
  }
  return mask;
}

// Border-aware separable box blur; identical weights per position for every
// map, so pointwise ordering (nesting) is preserved.
void box_blur(std::vector<double>& m, std::size_t h, std::size_t w, std::size_t d,
              std::size_t radius) {
  if (radius == 0) return;
  const auto pass = [&](std::size_t len, std::size_t stride, std::size_t lines,
                        const auto& line_base) {
    std::vector<double> tmp(len);
    for (std::size_t line = 0; line < lines; ++line) {
      const std::size_t base = line_base(line);
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t lo = i > radius ? i - radius : 0;
        const std::size_t hi = std::min(len - 1, i + radius);
        double acc = 0.0;
        for (std::size_t k = lo; k <= hi; ++k) acc += m[base + k * stride];
        tmp[i] = acc / static_cast<double>(hi - lo + 1);
      }
      for (std::size_t i = 0; i < len; ++i) m[base + i * stride] = tmp[i];
    }
  };
  pass(h, 1, w * d, [&](std::size_t line) { return line * h; });
  pass(w, h, h * d, [&](std::size_t line) {
    return (line % h) + (line / h) * h * w;
  });
  pass(d, h * w, h * w, [&](std::size_t line) { return line; });
}

}  // namespace

Phantom generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  Phantom ph;

  ph.masks[0] = ellipsoid_mask(spec, spec.et);
  ph.masks[1] = ellipsoid_mask(spec, spec.tc);
  ph.masks[2] = ellipsoid_mask(spec, spec.wt);

  const std::size_t n = spec.h * spec.w * spec.d;
  for (std::size_t i = 0; i < n; ++i) {
    if (ph.masks[0].data[i] > ph.masks[1].data[i] ||
        ph.masks[1].data[i] > ph.masks[2].data[i]) {
      throw ValidationError("phantom: ellipsoids do not produce nested masks");
    }
  }

  // Region anchors: random unit directions, well separated for d >= 8.
  Rng anchor_rng(spec.anchor_seed);
  for (auto& a : ph.anchors) {
    std::vector<double> v(spec.feature_dim);
    for (auto& x : v) x = anchor_rng.gaussian();
    a = l2_normalize(v).values;
  }

  // Features: innermost-region anchor plus isotropic noise, renormalized.
  Rng feature_rng(spec.seed);
  ph.features = VoxelGrid(spec.h, spec.w, spec.d, spec.feature_dim, 0.0);
  std::vector<double> row(spec.feature_dim);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t region = 0;  // background
    if (ph.masks[0].data[i] > 0.5) region = 3;
    else if (ph.masks[1].data[i] > 0.5) region = 2;
    else if (ph.masks[2].data[i] > 0.5) region = 1;
    const auto& anchor = ph.anchors[region];
    for (std::size_t ch = 0; ch < spec.feature_dim; ++ch) {
      row[ch] = anchor[ch] + spec.feature_noise * feature_rng.gaussian();
    }
    const auto u = l2_normalize(row);
    ph.features.set_channel_row(i, u.values.data());
  }

  // Probability maps: blurred indicators, then ET/TC swaps at a seeded
  // fraction of voxels to inject nesting violations.
  ph.probmaps = ProbMaps(spec.h, spec.w, spec.d);
  for (std::size_t ci = 0; ci < 3; ++ci) {
    ph.probmaps.maps[ci] = ph.masks[ci].data;
    box_blur(ph.probmaps.maps[ci], spec.h, spec.w, spec.d, spec.blur_radius);
  }
  if (spec.violation_rate > 0.0) {
    Rng corrupt_rng(spec.seed ^ kCorruptSalt);
    auto& et = ph.probmaps.map(TumorClass::et);
    auto& tc = ph.probmaps.map(TumorClass::tc);
    for (std::size_t i = 0; i < n; ++i) {
      if (corrupt_rng.uniform() < spec.violation_rate) std::swap(et[i], tc[i]);
    }
  }

  // The tumor anchors double as the case's semantic phrases.
  ph.semantic_tokens.dim = spec.feature_dim;
  ph.semantic_tokens.modality = "semantic";
  const std::array<std::pair<const char*, std::size_t>, 3> phrase_order = {
      std::pair{"whole-tumor", std::size_t{1}},
      std::pair{"tumor-core", std::size_t{2}},
      std::pair{"enhancing-tumor", std::size_t{3}}};
  for (const auto& [label, region] : phrase_order) {
    TokenEntry te;
    te.label = label;
    te.values = ph.anchors[region];
    ph.semantic_tokens.entries.push_back(std::move(te));
  }
  return ph;
}

double dice(const VoxelGrid& a, const VoxelGrid& b) {
  if (!a.same_volume(b) || a.c != 1 || b.c != 1) {
    throw ValidationError("dice: masks must be scalar grids of identical dims");
  }
  std::size_t na = 0, nb = 0, inter = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool ia = a.data[i] >= 0.5;
    const bool ib = b.data[i] >= 0.5;
    na += ia;
    nb += ib;
    inter += ia && ib;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

double hierarchy_violation_rate(const ProbMaps& p, double threshold) {
  p.validate();
  const auto& et = p.map(TumorClass::et);
  const auto& tc = p.map(TumorClass::tc);
  const auto& wt = p.map(TumorClass::wt);
  std::size_t bad = 0;
  for (std::size_t i = 0; i < et.size(); ++i) {
    const bool e = et[i] >= threshold;
    const bool t = tc[i] >= threshold;
    const bool w = wt[i] >= threshold;
    if ((e && !t) || (t && !w)) ++bad;
  }
  return static_cast<double>(bad) / static_cast<double>(et.size());
}

// ---------------------------------------------------------------------------
// Spec (de)serialization
// ---------------------------------------------------------------------------

namespace {

Ellipsoid ellipsoid_from_json(const json& j, const std::string& name) {
  if (!j.is_object()) throw ValidationError("phantom spec: \"" + name + "\" must be an object");
  for (const auto& [key, _] : j.items()) {
    if (key != "center" && key != "semi_axes") {
      throw ValidationError("phantom spec: unknown key \"" + name + "." + key + "\"");
    }
  }
  Ellipsoid e;
  const auto triple = [&](const char* key, std::array<double, 3>& dst) {
    if (!j.contains(key)) throw ValidationError("phantom spec: \"" + name + "\" needs \"" + key + "\"");
    const auto& arr = j[key];
    if (!arr.is_array() || arr.size() != 3) {
      throw ValidationError("phantom spec: \"" + name + "." + key + "\" must be 3 numbers");
    }
    for (std::size_t i = 0; i < 3; ++i) dst[i] = arr[i].get<double>();
  };
  triple("center", e.center);
  triple("semi_axes", e.semi_axes);
  return e;
}

json ellipsoid_to_json(const Ellipsoid& e) {
  return json{{"center", e.center}, {"semi_axes", e.semi_axes}};
}

}  // namespace

PhantomSpec read_phantom_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError("phantom spec must be a JSON object");

  static const std::set<std::string> known = {
      "dims",        "wt",          "tc",   "et",   "feature_dim", "anchor_seed",
      "feature_noise", "blur_radius", "violation_rate", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ValidationError("phantom spec: unknown key \"" + key + "\"");
  }

  PhantomSpec spec;
  if (j.contains("dims")) {
    const auto& dims = j["dims"];
    if (!dims.is_array() || dims.size() != 3) {
      throw ValidationError("phantom spec: \"dims\" must be 3 positive integers");
    }
    spec.h = dims[0].get<std::size_t>();
    spec.w = dims[1].get<std::size_t>();
    spec.d = dims[2].get<std::size_t>();
  }
  if (j.contains("wt")) spec.wt = ellipsoid_from_json(j["wt"], "wt");
  if (j.contains("tc")) spec.tc = ellipsoid_from_json(j["tc"], "tc");
  if (j.contains("et")) spec.et = ellipsoid_from_json(j["et"], "et");
  if (j.contains("feature_dim")) spec.feature_dim = j["feature_dim"].get<std::size_t>();
  if (j.contains("anchor_seed")) spec.anchor_seed = j["anchor_seed"].get<std::uint64_t>();
  if (j.contains("feature_noise")) spec.feature_noise = j["feature_noise"].get<double>();
  if (j.contains("blur_radius")) spec.blur_radius = j["blur_radius"].get<std::size_t>();
  if (j.contains("violation_rate")) spec.violation_rate = j["violation_rate"].get<double>();
  if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();

  spec.validate();
  return spec;
}

void write_phantom_spec(const std::filesystem::path& path, const PhantomSpec& spec) {
  json j;
  j["dims"] = {spec.h, spec.w, spec.d};
  j["wt"] = ellipsoid_to_json(spec.wt);
  j["tc"] = ellipsoid_to_json(spec.tc);
  j["et"] = ellipsoid_to_json(spec.et);
  j["feature_dim"] = spec.feature_dim;
  j["anchor_seed"] = spec.anchor_seed;
  j["feature_noise"] = spec.feature_noise;
  j["blur_radius"] = spec.blur_radius;
  j["violation_rate"] = spec.violation_rate;
  j["seed"] = spec.seed;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace umcf
