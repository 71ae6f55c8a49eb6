#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "umcf/eval.hpp"
#include "umcf/fusion.hpp"
#include "umcf/io.hpp"
#include "umcf/uncertainty.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json diag_to_json(const umcf::IterationDiag& it, std::size_t index) {
  json j;
  j["iteration"] = index + 1;
  j["residual"] = it.residual;
  j["gate_mean"] = {{"mV", it.mean_gate[0]},
                    {"mT", it.mean_gate[1]},
                    {"mS", it.mean_gate[2]},
                    {"mTS", it.mean_gate[3]}};
  j["mean_phi_T"] = it.mean_phi_t;
  j["violation_before"] = it.violation_before;
  j["violation_after"] = it.violation_after;
  j["mean_r_hier_preproj"] = it.mean_r_hier_preproj;
  return j;
}

void write_diag_report(const fs::path& path, const umcf::FusionDiagnostics& diag,
                       const std::string& status) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw umcf::IoError("cannot write " + path.string());
  for (std::size_t i = 0; i < diag.iterations.size(); ++i) {
    out << diag_to_json(diag.iterations[i], i).dump() << "\n";
  }
  out << json{{"status", status}, {"iterations", diag.iterations.size()}}.dump()
      << "\n";
}

struct FuseOptions {
  std::string features, tokens, probmaps, config;
  std::string out, out_probmaps, diag;
  std::uint64_t proj_seed = umcf::kDefaultProjectionSeed;
  bool disable_mV = false, disable_mT = false, disable_mS = false,
       disable_mTS = false, disable_pfug = false, pairwise = false,
       disable_bias = false;
};

int run_fuse(const FuseOptions& opt) {
  umcf::FusionConfig cfg;
  if (!opt.config.empty()) cfg = umcf::read_config(opt.config);
  cfg.disable_mV |= opt.disable_mV;
  cfg.disable_mT |= opt.disable_mT;
  cfg.disable_mS |= opt.disable_mS;
  cfg.disable_mTS |= opt.disable_mTS;
  cfg.disable_pfug |= opt.disable_pfug;
  cfg.pairwise_mode |= opt.pairwise;
  cfg.disable_bias |= opt.disable_bias;
  cfg.validate();

  const umcf::VoxelGrid features = umcf::read_volume(opt.features);
  const umcf::ProbMaps probmaps = umcf::read_probmaps(opt.probmaps);
  const umcf::TokenSet semantic =
      umcf::read_tokens(opt.tokens, features.c, opt.proj_seed);

  try {
    const umcf::FusionResult result =
        umcf::run_fusion(features, semantic, probmaps, cfg);
    if (!opt.out.empty()) umcf::write_volume(opt.out, result.field);
    if (!opt.out_probmaps.empty()) umcf::write_probmaps(opt.out_probmaps, result.probmaps);
    if (!opt.diag.empty()) write_diag_report(opt.diag, result.diagnostics, "converged");
    for (std::size_t i = 0; i < result.diagnostics.iterations.size(); ++i) {
      std::cout << diag_to_json(result.diagnostics.iterations[i], i).dump() << "\n";
    }
    std::cout << json{{"status", "converged"},
                      {"iterations", result.diagnostics.iterations.size()}}
                     .dump()
              << "\n";
  } catch (const umcf::FusionAbortError& e) {
    if (!opt.diag.empty()) write_diag_report(opt.diag, e.diagnostics, "aborted");
    throw;
  }
  return 0;
}

struct PhantomOptions {
  std::string spec, outdir;
};

int run_phantom(const PhantomOptions& opt) {
  const umcf::PhantomSpec spec = umcf::read_phantom_spec(opt.spec);
  const umcf::Phantom ph = umcf::generate_phantom(spec);

  const fs::path dir(opt.outdir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw umcf::IoError("cannot create directory " + dir.string());

  umcf::write_volume(dir / "features.umcfvol", ph.features);
  umcf::write_probmaps(dir / "probmaps.umcfvol", ph.probmaps);
  umcf::write_volume(dir / "mask_et.umcfvol", ph.masks[0]);
  umcf::write_volume(dir / "mask_tc.umcfvol", ph.masks[1]);
  umcf::write_volume(dir / "mask_wt.umcfvol", ph.masks[2]);
  umcf::write_token_doc(dir / "tokens.json", ph.semantic_tokens);

  json report;
  report["outdir"] = dir.string();
  report["violation_rate"] = umcf::hierarchy_violation_rate(ph.probmaps);
  report["voxels"] = spec.h * spec.w * spec.d;
  std::cout << report.dump() << "\n";
  return 0;
}

int run_sdt(const std::string& mask_path, const std::string& out_path) {
  const umcf::VoxelGrid mask = umcf::read_volume(mask_path);
  const umcf::SdtResult r = umcf::signed_distance_transform(mask);
  umcf::write_volume(out_path, r.sdt);
  std::cout << json{{"degenerate", r.degenerate}, {"mean_sdt", umcf::mean_sdt(r.sdt)}}.dump()
            << "\n";
  return 0;
}

int run_stats(const std::string& probmaps_path) {
  const umcf::ProbMaps p = umcf::read_probmaps(probmaps_path);
  for (const umcf::TumorClass c : umcf::kTumorClasses) {
    const umcf::SpatialStats s = umcf::compute_spatial_stats(p, c);
    json j;
    j["class"] = umcf::to_string(c);
    j["degenerate"] = s.degenerate;
    j["centroid"] = s.centroid;
    j["eigenvalues"] = s.eigenvalues;
    j["mean_sdt"] = s.mean_sdt;
    std::cout << j.dump() << "\n";
  }
  return 0;
}

int run_dice(const std::string& a_path, const std::string& b_path) {
  const umcf::VoxelGrid a = umcf::read_volume(a_path);
  const umcf::VoxelGrid b = umcf::read_volume(b_path);
  std::cout << json{{"dice", umcf::dice(a, b)}}.dump() << "\n";
  return 0;
}

struct DiagOptions {
  std::string probmaps, features, tokens, outdir;
  std::uint64_t proj_seed = umcf::kDefaultProjectionSeed;
};

int run_diag(const DiagOptions& opt) {
  const umcf::ProbMaps p = umcf::read_probmaps(opt.probmaps);

  // Without features and tokens the semantic field is neutral (0.5).
  umcf::VoxelGrid phi(p.h, p.w, p.d, 1, 0.5);
  if (!opt.features.empty() && !opt.tokens.empty()) {
    const umcf::VoxelGrid features = umcf::read_volume(opt.features);
    if (features.h != p.h || features.w != p.w || features.d != p.d) {
      throw umcf::ValidationError("diag: features and probmaps dims differ");
    }
    const umcf::TokenSet semantic =
        umcf::read_tokens(opt.tokens, features.c, opt.proj_seed);
    phi = umcf::semantic_field(features, semantic.prototype,
                               umcf::Temperature(umcf::FusionConfig{}.tau))
              .phi;
  }

  const umcf::UncertaintyFields u = umcf::compute_uncertainties(p, phi);
  const std::array<std::pair<const char*, const umcf::VoxelGrid*>, 4> fields = {
      std::pair{"u_V", &u.u_v}, std::pair{"u_T", &u.u_t},
      std::pair{"u_S", &u.u_s}, std::pair{"u_TS", &u.u_ts}};

  for (const auto& [name, grid] : fields) {
    double mn = grid->data.front(), mx = grid->data.front();
    for (const double v : grid->data) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    const double mean =
        umcf::pairwise_sum(grid->data) / static_cast<double>(grid->data.size());
    std::cout << json{{"field", name}, {"mean", mean}, {"min", mn}, {"max", mx}}.dump()
              << "\n";
  }

  if (!opt.outdir.empty()) {
    const fs::path dir(opt.outdir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw umcf::IoError("cannot create directory " + dir.string());
    umcf::write_volume(dir / "u_V.umcfvol", u.u_v);
    umcf::write_volume(dir / "u_T.umcfvol", u.u_t);
    umcf::write_volume(dir / "u_S.umcfvol", u.u_s);
    umcf::write_volume(dir / "u_TS.umcfvol", u.u_ts);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal coherent field fusion for volumetric segmentation features"};
  app.require_subcommand(1);

  FuseOptions fuse_opt;
  auto* fuse = app.add_subcommand("fuse", "Run the fusion pipeline on a case");
  fuse->add_option("--features", fuse_opt.features, "Bottleneck feature volume")->required();
  fuse->add_option("--tokens", fuse_opt.tokens, "Semantic token JSON file")->required();
  fuse->add_option("--probmaps", fuse_opt.probmaps, "Probability-map volume (C = 3)")->required();
  fuse->add_option("--config", fuse_opt.config, "Fusion config JSON");
  fuse->add_option("--out", fuse_opt.out, "Output path for the fused field");
  fuse->add_option("--out-probmaps", fuse_opt.out_probmaps, "Output path for refreshed probmaps");
  fuse->add_option("--diag", fuse_opt.diag, "Diagnostics report (JSON per line)");
  fuse->add_option("--proj-seed", fuse_opt.proj_seed, "Seed for embedding projections");
  fuse->add_flag("--disable-mV", fuse_opt.disable_mV, "Ablate the visual stream");
  fuse->add_flag("--disable-mT", fuse_opt.disable_mT, "Ablate the semantic stream");
  fuse->add_flag("--disable-mS", fuse_opt.disable_mS, "Ablate the spatial stream");
  fuse->add_flag("--disable-mTS", fuse_opt.disable_mTS, "Ablate the channel-gate stream");
  fuse->add_flag("--disable-pfug", fuse_opt.disable_pfug, "Equal-weight fusion instead of uncertainty gating");
  fuse->add_flag("--pairwise", fuse_opt.pairwise, "Fuse streams two at a time (ablation baseline)");
  fuse->add_flag("--disable-bias", fuse_opt.disable_bias, "Drop the medical-prior attention bias");
  fuse->callback([&] { run_fuse(fuse_opt); });

  PhantomOptions ph_opt;
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic nested-ellipsoid case");
  phantom->add_option("--spec", ph_opt.spec, "Phantom spec JSON")->required();
  phantom->add_option("--outdir", ph_opt.outdir, "Output directory")->required();
  phantom->callback([&] { run_phantom(ph_opt); });

  std::string sdt_mask, sdt_out;
  auto* sdt = app.add_subcommand("sdt", "Signed distance transform of a mask volume");
  sdt->add_option("--mask", sdt_mask, "Binary mask volume")->required();
  sdt->add_option("--out", sdt_out, "Output SDT volume")->required();
  sdt->callback([&] { run_sdt(sdt_mask, sdt_out); });

  std::string stats_probmaps;
  auto* stats = app.add_subcommand("stats", "Per-class spatial statistics of probability maps");
  stats->add_option("--probmaps", stats_probmaps, "Probability-map volume")->required();
  stats->callback([&] { run_stats(stats_probmaps); });

  std::string dice_a, dice_b;
  auto* dice_cmd = app.add_subcommand("dice", "Dice overlap of two mask volumes");
  dice_cmd->add_option("--a", dice_a, "First mask volume")->required();
  dice_cmd->add_option("--b", dice_b, "Second mask volume")->required();
  dice_cmd->callback([&] { run_dice(dice_a, dice_b); });

  DiagOptions diag_opt;
  auto* diag = app.add_subcommand("diag", "Uncertainty-field summaries for a case");
  diag->add_option("--probmaps", diag_opt.probmaps, "Probability-map volume")->required();
  diag->add_option("--features", diag_opt.features, "Optional feature volume for the semantic field");
  diag->add_option("--tokens", diag_opt.tokens, "Optional semantic token JSON");
  diag->add_option("--outdir", diag_opt.outdir, "Directory to export the four fields");
  diag->add_option("--proj-seed", diag_opt.proj_seed, "Seed for embedding projections");
  diag->callback([&] { run_diag(diag_opt); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const umcf::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const umcf::FusionAbortError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const umcf::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
