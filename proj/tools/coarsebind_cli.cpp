// coarsebind command line: wires the library modules into the pipelines
// (train -> infer -> crop -> pose -> metrics, affinity -> epinet -> sample
// -> select/dmta) with reproducible seeded runs.

#include <chrono>
#include <cstdio>
#include <map>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "coarsebind/affinity.hpp"
#include "coarsebind/complexes.hpp"
#include "coarsebind/distogram.hpp"
#include "coarsebind/epinet.hpp"
#include "coarsebind/errors.hpp"
#include "coarsebind/io.hpp"
#include "coarsebind/metrics.hpp"
#include "coarsebind/pocket.hpp"
#include "coarsebind/posegen.hpp"
#include "coarsebind/selection.hpp"
#include "coarsebind/synthdata.hpp"
#include "coarsebind/trainer.hpp"
#include "json.hpp"

namespace cb = coarsebind;
using nlohmann::json;

namespace {

// flags win over the config file: config values only replace defaults
json load_config_defaults(int argc, char** argv) {
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--config") return json::parse(cb::io::read_file(argv[i + 1]));
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg.rfind("--config=", 0) == 0) return json::parse(cb::io::read_file(arg.substr(9)));
  }
  return json::object();
}

cb::pairformer::PairformerConfig model_config_from_json(const json& j) {
  cb::pairformer::PairformerConfig cfg;
  if (j.contains("n_layers")) cfg.n_layers = j.at("n_layers").get<std::size_t>();
  if (j.contains("n_heads")) cfg.n_heads = j.at("n_heads").get<std::size_t>();
  if (j.contains("pair_dim")) cfg.pair_dim = j.at("pair_dim").get<std::size_t>();
  if (j.contains("embed_dim")) cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
  if (j.contains("relpos_clip")) cfg.relpos_clip = j.at("relpos_clip").get<int>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

json model_config_to_json(const cb::pairformer::PairformerConfig& cfg) {
  json j;
  j["n_layers"] = cfg.n_layers;
  j["n_heads"] = cfg.n_heads;
  j["pair_dim"] = cfg.pair_dim;
  j["embed_dim"] = cfg.embed_dim;
  j["relpos_clip"] = cfg.relpos_clip;
  j["nonlinearity"] = cfg.nonlinearity;
  j["seed"] = cfg.seed;
  return j;
}

cb::Geometry geometry_from_string(const std::string& s) {
  if (s == "blob") return cb::Geometry::FoldedBlob;
  if (s == "helix") return cb::Geometry::Helix;
  if (s == "cliff") return cb::Geometry::Cliff;
  throw cb::InputError("unknown geometry '" + s + "' (expected blob, helix, or cliff)");
}

struct PoseFile {
  std::vector<cb::pose::PoseSample> samples;
  std::size_t best = 0;
  std::vector<std::size_t> pocket;
  std::vector<std::size_t> tokens; // original token indices, ligand block first
};

std::string pose_to_string(const PoseFile& p) {
  json j;
  json samples = json::array();
  for (const auto& s : p.samples) {
    json one;
    json coords = json::array();
    for (const auto& x : s.coords) coords.push_back(json::array({x[0], x[1], x[2]}));
    one["coords"] = std::move(coords);
    one["final_loss"] = s.final_loss;
    one["iters"] = s.iters;
    one["converged"] = s.converged;
    samples.push_back(std::move(one));
  }
  j["samples"] = std::move(samples);
  j["best"] = p.best;
  j["pocket"] = p.pocket;
  j["tokens"] = p.tokens;
  return j.dump();
}

PoseFile pose_from_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw cb::ParseError(std::string("pose file: ") + e.what());
  }
  try {
    PoseFile p;
    for (const auto& one : j.at("samples")) {
      cb::pose::PoseSample s;
      for (const auto& row : one.at("coords"))
        s.coords.push_back({row[0].get<double>(), row[1].get<double>(), row[2].get<double>()});
      s.final_loss = one.at("final_loss").get<double>();
      s.iters = one.at("iters").get<std::size_t>();
      s.converged = one.at("converged").get<bool>();
      p.samples.push_back(std::move(s));
    }
    p.best = j.at("best").get<std::size_t>();
    p.pocket = j.at("pocket").get<std::vector<std::size_t>>();
    p.tokens = j.at("tokens").get<std::vector<std::size_t>>();
    return p;
  } catch (const json::exception& e) {
    throw cb::ParseError(std::string("pose file: ") + e.what());
  }
}

// latent dataset line for the epinet stage
std::string latent_record_to_line(const cb::epinet::EpinetRecord& r) {
  json j;
  j["assay_id"] = r.assay_id;
  j["g"] = r.latent;
  j["y_base"] = r.y_base;
  j["y_true"] = r.y_true;
  return j.dump();
}

cb::epinet::EpinetRecord latent_record_from_line(const std::string& line) {
  try {
    const json j = json::parse(line);
    cb::epinet::EpinetRecord r;
    r.assay_id = j.at("assay_id").get<std::string>();
    r.latent = j.at("g").get<std::vector<double>>();
    r.y_base = j.at("y_base").get<double>();
    r.y_true = j.at("y_true").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw cb::ParseError(std::string("latent record: ") + e.what());
  }
}

std::vector<std::string> read_lines(const std::string& path) {
  std::istringstream in(cb::io::read_file(path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

cb::pairformer::PairformerConfig load_trunk(const std::string& path, cb::ParamStore& params) {
  cb::io::Checkpoint ckpt = cb::io::checkpoint_from_string(cb::io::read_file(path));
  params = std::move(ckpt.params);
  return model_config_from_json(json::parse(ckpt.config_json));
}

int run(int argc, char** argv) {
  const json cfgdoc = load_config_defaults(argc, argv);
  const auto dflt_u64 = [&](const char* key, std::uint64_t fb) {
    return cfgdoc.contains(key) ? cfgdoc.at(key).get<std::uint64_t>() : fb;
  };
  const auto dflt_size = [&](const char* key, std::size_t fb) {
    return cfgdoc.contains(key) ? cfgdoc.at(key).get<std::size_t>() : fb;
  };

  CLI::App app{"coarse-grained protein-ligand structure and affinity toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file; explicit flags win");

  std::uint64_t seed = dflt_u64("seed", 0);
  app.add_option("--seed", seed, "root seed for all randomized stages");

  // ---- gen ----
  auto* gen = app.add_subcommand("gen", "generate a synthetic complex");
  std::string gen_out = "complex.json";
  std::size_t gen_nlig = dflt_size("n_ligand", 8), gen_nprot = dflt_size("n_protein", 40);
  std::size_t gen_dim = dflt_size("embedding_dim", 32);
  double gen_pf = 0.75;
  std::string gen_geom = "blob";
  gen->add_option("--out", gen_out, "output complex JSON");
  gen->add_option("--n-ligand", gen_nlig, "ligand heavy atoms");
  gen->add_option("--n-protein", gen_nprot, "protein residue centers");
  gen->add_option("--embedding-dim", gen_dim, "token embedding width");
  gen->add_option("--pocket-fraction", gen_pf, "fraction of residues within 15 A");
  gen->add_option("--geometry", gen_geom, "blob, helix, or cliff");

  // ---- train ----
  auto* train = app.add_subcommand("train", "train the pairformer trunk on synthetic data");
  std::string train_out = "trunk.ckpt";
  std::string train_log_out;
  train->add_option("--out", train_out, "checkpoint path");
  train->add_option("--log-out", train_log_out, "training log JSON path");

  // ---- infer ----
  auto* infer = app.add_subcommand("infer", "predict a distogram for a complex");
  std::string infer_complex, infer_ckpt, infer_out = "distogram.cbd";
  std::string infer_out_complex;
  std::size_t pocket_tokens = dflt_size("pocket_tokens", 0);
  infer->add_option("--complex", infer_complex, "complex JSON")->required();
  infer->add_option("--checkpoint", infer_ckpt, "trunk checkpoint")->required();
  infer->add_option("--out", infer_out, "distogram output");
  infer->add_option("--pocket-tokens", pocket_tokens,
                    "two-stage flow: full pass, crop to this budget, second pass");
  infer->add_option("--out-complex", infer_out_complex,
                    "where to write the (possibly cropped) complex that the distogram covers");

  // ---- crop ----
  auto* cropcmd = app.add_subcommand("crop", "budgeted pocket crop of a complex");
  std::string crop_complex, crop_disto, crop_out = "crop.json";
  std::size_t crop_budget = dflt_size("pocket_tokens", 196);
  double crop_cutoff = 22.0;
  bool crop_true_coords = false;
  cropcmd->add_option("--complex", crop_complex, "complex JSON")->required();
  cropcmd->add_option("--distogram", crop_disto, "expected distances from this distogram");
  cropcmd->add_flag("--use-true-coords", crop_true_coords, "use ground-truth distances instead");
  cropcmd->add_option("--pocket-tokens", crop_budget, "token budget");
  cropcmd->add_option("--cutoff", crop_cutoff, "pocket cutoff in Angstrom");
  cropcmd->add_option("--out", crop_out, "kept indices + provenance JSON");

  // ---- pose ----
  auto* pose = app.add_subcommand("pose", "optimize coordinates against a distogram");
  std::string pose_disto, pose_out = "pose.json";
  std::size_t n_samples = dflt_size("samples", 10);
  pose->add_option("--distogram", pose_disto, "distogram file")->required();
  pose->add_option("--samples", n_samples, "pose samples (lowest loss wins)");
  pose->add_option("--out", pose_out, "pose output JSON");

  // ---- metrics ----
  auto* met = app.add_subcommand("metrics", "evaluate poses against ground truth");
  std::string met_pose, met_complex, met_disto, met_out = "metrics.csv";
  std::string met_agg_out;
  met->add_option("--pose", met_pose, "pose JSON")->required();
  met->add_option("--complex", met_complex, "complex JSON with ground-truth coords")->required();
  met->add_option("--distogram", met_disto, "distogram for the entropy columns")->required();
  met->add_option("--out", met_out, "per-complex CSV");
  met->add_option("--aggregate-out", met_agg_out, "aggregate JSON");

  // ---- affinity-train ----
  auto* aff = app.add_subcommand("affinity-train", "train the affinity module");
  std::string aff_out = "affinity.ckpt";
  std::string aff_latents_out;
  bool aff_synthetic = false;
  std::size_t aff_steps = dflt_size("steps", 400);
  std::size_t aff_assays = 6, aff_per_assay = 10;
  aff->add_flag("--synthetic", aff_synthetic, "train on generated assay data");
  aff->add_option("--steps", aff_steps, "training steps");
  aff->add_option("--assays", aff_assays, "synthetic assay count");
  aff->add_option("--per-assay", aff_per_assay, "records per synthetic assay");
  aff->add_option("--out", aff_out, "affinity checkpoint");
  aff->add_option("--emit-latents", aff_latents_out,
                  "write the complex latents + base predictions as JSONL for the epinet stage");

  // ---- epinet-train ----
  auto* epi = app.add_subcommand("epinet-train", "train the epistemic head on frozen latents");
  std::string epi_data, epi_out = "epinet.ckpt";
  std::size_t epi_steps = dflt_size("steps", 2000);
  std::size_t epi_index_dim = dflt_size("index_dim", 0);
  epi->add_option("--data", epi_data, "latent dataset JSONL")->required();
  epi->add_option("--steps", epi_steps, "training steps");
  epi->add_option("--index-dim", epi_index_dim, "epistemic index width (default 256 scaled down for tiny latents)");
  epi->add_option("--out", epi_out, "epinet checkpoint");

  // ---- sample ----
  auto* sample = app.add_subcommand("sample", "draw joint posterior paths from an epinet");
  std::string sample_ckpt, sample_data, sample_out = "posterior.cbp";
  std::size_t sample_k = dflt_size("paths", 1000);
  sample->add_option("--checkpoint", sample_ckpt, "epinet checkpoint")->required();
  sample->add_option("--data", sample_data, "latent dataset JSONL")->required();
  sample->add_option("--paths", sample_k, "number of joint sample paths");
  sample->add_option("--out", sample_out, "posterior file");

  // ---- select ----
  auto* sel = app.add_subcommand("select", "one-shot batch selection from a posterior");
  std::string sel_post, sel_out = "selection.json", sel_strategy = "emax";
  std::size_t sel_batch = 5;
  sel->add_option("--posterior", sel_post, "posterior file")->required();
  sel->add_option("--batch", sel_batch, "batch size");
  sel->add_option("--strategy", sel_strategy, "greedy or emax");
  sel->add_option("--out", sel_out, "selection JSON");

  // ---- dmta ----
  auto* dmta = app.add_subcommand("dmta", "simulated design-make-test-analyze cycles");
  std::string dmta_pool, dmta_post, dmta_out = "dmta.csv", dmta_strategy = "continual-emax";
  std::string dmta_external;
  std::size_t dmta_cycles = 20, dmta_batch = 5;
  double dmta_sigma = 0.5;
  bool dmta_synthetic = false;
  dmta->add_option("--pool", dmta_pool, "pool JSONL");
  dmta->add_option("--posterior", dmta_post, "posterior file aligned with the pool");
  dmta->add_flag("--synthetic-cliff", dmta_synthetic, "generate a cliff pool internally");
  dmta->add_option("--strategy", dmta_strategy,
                   "greedy, continual-greedy, continual-emax, oracle, or external");
  dmta->add_option("--external", dmta_external, "prediction JSONL for the external arm");
  dmta->add_option("--cycles", dmta_cycles, "number of cycles");
  dmta->add_option("--batch", dmta_batch, "compounds per cycle");
  dmta->add_option("--sigma-obs", dmta_sigma, "observation noise for pathwise updates");
  dmta->add_option("--out", dmta_out, "per-cycle CSV");

  // ---- calibrate ----
  auto* cal = app.add_subcommand("calibrate", "bin success rates by a confidence value");
  std::string cal_data, cal_out = "calibration.json";
  std::vector<double> cal_edges = {0.0, 0.25, 0.5, 0.75, 1.0};
  cal->add_option("--data", cal_data, "JSONL of {value, success}")->required();
  cal->add_option("--edges", cal_edges, "bin edges");
  cal->add_option("--out", cal_out, "calibration report JSON");

  // ---- bench ----
  auto* bench = app.add_subcommand("bench", "per-stage wall times over a complex set");
  std::string bench_ckpt, bench_out = "bench.csv";
  std::size_t bench_n = 3;
  bench->add_option("--checkpoint", bench_ckpt, "trunk checkpoint")->required();
  bench->add_option("--complexes", bench_n, "number of synthetic complexes to time");
  bench->add_option("--samples", n_samples, "pose samples per complex");
  bench->add_option("--out", bench_out, "timing CSV");

  CLI11_PARSE(app, argc, argv);

  const json run_config = {{"seed", seed}, {"argv_config", cfgdoc}};

  if (*gen) {
    cb::SyntheticGenConfig cfg;
    cfg.n_ligand = gen_nlig;
    cfg.n_protein = gen_nprot;
    cfg.embedding_dim = gen_dim;
    cfg.pocket_fraction = gen_pf;
    cfg.geometry = geometry_from_string(gen_geom);
    cfg.seed = seed;
    cb::io::write_file(gen_out, cb::encode_complex(cb::generate_synthetic_complex(cfg)) + "\n");
    cb::io::write_run_meta(gen_out, run_config.dump(), seed);
  } else if (*train) {
    cb::pairformer::TrainConfig cfg = cb::pairformer::desk_curriculum(seed);
    if (cfgdoc.contains("model")) cfg.model = model_config_from_json(cfgdoc.at("model"));
    const cb::pairformer::TrainResult result = cb::pairformer::train(cfg);
    cb::io::write_file(train_out,
                       cb::io::checkpoint_to_string(result.params,
                                                    model_config_to_json(cfg.model).dump(), seed));
    cb::io::write_run_meta(train_out, run_config.dump(), seed);
    if (!train_log_out.empty()) {
      json log;
      log["step_loss"] = result.log.step_loss;
      log["stage_boundaries"] = result.log.stage_boundaries;
      log["stage_heldout_hlp"] = result.log.stage_heldout_hlp;
      cb::io::write_file(train_log_out, log.dump() + "\n");
    }
  } else if (*infer) {
    cb::ParamStore params;
    const cb::pairformer::PairformerConfig mcfg = load_trunk(infer_ckpt, params);
    cb::TokenizedComplex c = cb::decode_complex(cb::io::read_file(infer_complex));
    if (!c.tokens.empty() && c.tokens.front().embedding.size() != mcfg.embed_dim)
      throw cb::InputError("checkpoint embedding width does not match the complex");

    if (pocket_tokens > 0 && c.size() > pocket_tokens) {
      // initial full pass, 22 A pocket, crop, then the refined pass below
      const cb::distogram::Distogram full = cb::pairformer::infer_distogram(c, params, mcfg);
      const cb::Mat expected = cb::distogram::expected_distance_matrix(full);
      const auto pocket = cb::pocket::pocket_residues(expected, full.kinds, 22.0);
      c = cb::pocket::apply_crop(c, cb::pocket::crop(c, pocket_tokens, pocket, expected));
    }
    const cb::distogram::Distogram d = cb::pairformer::infer_distogram(c, params, mcfg);
    cb::io::write_file(infer_out, cb::io::distogram_to_string(d));
    cb::io::write_run_meta(infer_out, run_config.dump(), seed);
    if (!infer_out_complex.empty())
      cb::io::write_file(infer_out_complex, cb::encode_complex(c) + "\n");
  } else if (*cropcmd) {
    const cb::TokenizedComplex c = cb::decode_complex(cb::io::read_file(crop_complex));
    cb::Mat expected;
    if (crop_true_coords) {
      if (!c.coords) throw cb::InputError("crop: complex has no coordinates");
      expected = cb::distance_matrix(*c.coords);
    } else {
      if (crop_disto.empty())
        throw cb::InputError("crop: provide --distogram or --use-true-coords");
      const auto d = cb::io::distogram_from_string(cb::io::read_file(crop_disto));
      if (d.n_tokens != c.size()) throw cb::InputError("crop: distogram token count mismatch");
      expected = cb::distogram::expected_distance_matrix(d);
    }
    const auto pocket = cb::pocket::pocket_residues(expected, c.kinds(), crop_cutoff);
    const cb::pocket::PocketCrop crop = cb::pocket::crop(c, crop_budget, pocket, expected);
    json out;
    out["kept"] = crop.kept;
    json prov = json::array();
    for (const auto p : crop.provenance)
      prov.push_back(p == cb::pocket::Provenance::Ligand
                         ? "ligand"
                         : (p == cb::pocket::Provenance::Pocket ? "pocket" : "expansion"));
    out["provenance"] = std::move(prov);
    out["over_budget"] = crop.over_budget;
    cb::io::write_file(crop_out, out.dump() + "\n");
    cb::io::write_run_meta(crop_out, run_config.dump(), seed);
  } else if (*pose) {
    const auto d = cb::io::distogram_from_string(cb::io::read_file(pose_disto));
    const cb::pose::Reference ref = cb::pose::build_reference(d, 15.0);
    cb::pose::OptConfig ocfg;
    ocfg.n_samples = n_samples;
    ocfg.seed = seed;
    PoseFile out;
    out.samples = cb::pose::optimize_pose(ref.ref, ocfg);
    out.best = cb::pose::select_best_index(out.samples);
    out.tokens = ref.tokens;
    for (std::size_t i = ref.n_ligand; i < ref.tokens.size(); ++i)
      out.pocket.push_back(ref.tokens[i]);
    cb::io::write_file(pose_out, pose_to_string(out) + "\n");
    cb::io::write_run_meta(pose_out, run_config.dump(), seed);
  } else if (*met) {
    const PoseFile pf = pose_from_string(cb::io::read_file(met_pose));
    const cb::TokenizedComplex c = cb::decode_complex(cb::io::read_file(met_complex));
    const auto d = cb::io::distogram_from_string(cb::io::read_file(met_disto));
    if (!c.coords) throw cb::InputError("metrics: complex has no ground-truth coordinates");

    // truth coordinates restricted to the pose's token subset
    cb::Coords truth;
    std::vector<cb::TokenKind> kinds;
    std::vector<cb::Bond> lig_bonds;
    std::vector<std::string> elements;
    std::map<std::size_t, std::size_t> lig_local;
    for (std::size_t a = 0; a < pf.tokens.size(); ++a) {
      const std::size_t t = pf.tokens[a];
      if (t >= c.size()) throw cb::InputError("metrics: pose token index out of range");
      truth.push_back((*c.coords)[t]);
      kinds.push_back(c.tokens[t].kind);
      if (c.tokens[t].kind == cb::TokenKind::Ligand) {
        lig_local[t] = elements.size();
        elements.push_back(c.tokens[t].element.value_or("C"));
      }
    }
    for (const auto& b : c.bonds) {
      const auto ia = lig_local.find(b.a);
      const auto ib = lig_local.find(b.b);
      if (ia != lig_local.end() && ib != lig_local.end())
        lig_bonds.push_back({ia->second, ib->second, b.order});
    }

    const cb::Coords& pred = pf.samples.at(pf.best).coords;
    const double rmsd = cb::metrics::ligand_rmsd(pred, truth, kinds).rmsd;
    const auto sym = cb::metrics::symmetry_corrected_rmsd(pred, truth, kinds, lig_bonds, elements);
    const auto lddt = cb::metrics::lddt_pli(pred, truth, kinds);
    const cb::Mat expected = cb::distogram::expected_distance_matrix(d);
    const auto pocket15 = cb::pocket::pocket_residues(expected, d.kinds, 15.0);
    const auto entropy = cb::distogram::aggregate_entropy(d, pocket15);

    std::ostringstream csv;
    csv << "id,rmsd,rmsd_symcorr,lddt_pli,H_LL,H_LP,H_PP\n";
    const auto opt = [](const std::optional<double>& v) {
      return v ? std::to_string(*v) : std::string("");
    };
    csv << c.id << "," << rmsd << "," << sym.rmsd << "," << opt(lddt) << ","
        << opt(entropy.h_ll) << "," << opt(entropy.h_lp) << "," << opt(entropy.h_pp) << "\n";
    cb::io::write_file(met_out, csv.str());
    cb::io::write_run_meta(met_out, run_config.dump(), seed);

    if (!met_agg_out.empty()) {
      json agg;
      agg["n"] = 1;
      agg["rmsd"] = rmsd;
      agg["rmsd_symcorr"] = sym.rmsd;
      if (lddt) agg["lddt_pli"] = *lddt;
      if (entropy.h_lp) agg["h_lp"] = *entropy.h_lp;
      cb::io::write_file(met_agg_out, agg.dump() + "\n");
    }
  } else if (*aff) {
    if (!aff_synthetic)
      throw cb::InputError(
          "affinity-train: only --synthetic data is wired in this build; provide it explicitly");
    cb::synthdata::AffinityDataConfig dcfg;
    dcfg.n_assays = aff_assays;
    dcfg.per_assay = aff_per_assay;
    dcfg.seed = seed;
    const cb::synthdata::AffinityDataset data = cb::synthdata::make_affinity_dataset(dcfg);
    cb::affinity::AffinityTrainOptions opts;
    opts.steps = aff_steps;
    opts.seed = seed;
    const cb::affinity::AffinityTrainResult result =
        cb::affinity::train_affinity(data.examples, data.affinity_cfg, opts);

    json cfgj;
    cfgj["pair_dim"] = data.affinity_cfg.pair_dim;
    cfgj["trunk_dim"] = data.affinity_cfg.trunk_dim;
    cfgj["embed_dim"] = data.affinity_cfg.embed_dim;
    cfgj["n_layers"] = data.affinity_cfg.n_layers;
    cb::io::write_file(aff_out, cb::io::checkpoint_to_string(result.params, cfgj.dump(), seed));
    cb::io::write_run_meta(aff_out, run_config.dump(), seed);

    if (!aff_latents_out.empty()) {
      std::ostringstream lines;
      for (const auto& ex : data.examples) {
        if (ex.rec.label_kind != cb::affinity::LabelKind::Continuous) continue;
        cb::affinity::AffinityOutput out =
            cb::affinity::affinity_forward(ex.inputs, result.params, data.affinity_cfg);
        cb::epinet::EpinetRecord rec;
        rec.assay_id = ex.rec.assay_id;
        rec.latent = out.g;
        rec.y_base = out.y_hat;
        rec.y_true = ex.rec.value;
        lines << latent_record_to_line(rec) << "\n";
      }
      cb::io::write_file(aff_latents_out, lines.str());
    }
  } else if (*epi) {
    std::vector<cb::epinet::EpinetRecord> data;
    for (const auto& line : read_lines(epi_data)) data.push_back(latent_record_from_line(line));
    if (data.empty()) throw cb::InputError("epinet-train: empty dataset");
    cb::epinet::EpinetConfig cfg;
    cfg.latent_dim = data.front().latent.size();
    cfg.index_dim = epi_index_dim > 0 ? epi_index_dim : 32;
    cfg.hidden = {64, 64};
    cfg.seed = seed;
    cb::epinet::EpinetTrainOptions opts;
    opts.steps = epi_steps;
    opts.seed = seed;
    const cb::epinet::EpinetTrainResult result = cb::epinet::train_epinet(data, cfg, opts);

    // both networks in one checkpoint, prior tensors under prior.*
    cb::ParamStore merged;
    for (const auto& e : result.params.trainable.entries())
      merged.add("trainable." + e.name, e.tensor.shape).data = e.tensor.data;
    for (const auto& e : result.params.prior.entries())
      merged.add("prior." + e.name, e.tensor.shape).data = e.tensor.data;
    json cfgj;
    cfgj["index_dim"] = cfg.index_dim;
    cfgj["latent_dim"] = cfg.latent_dim;
    cfgj["hidden"] = cfg.hidden;
    cfgj["prior_scale"] = cfg.prior_scale;
    cfgj["index_in_body"] = cfg.index_in_body;
    cfgj["seed"] = cfg.seed;
    cb::io::write_file(epi_out, cb::io::checkpoint_to_string(merged, cfgj.dump(), seed));
    cb::io::write_run_meta(epi_out, run_config.dump(), seed);
  } else if (*sample) {
    const cb::io::Checkpoint ckpt = cb::io::checkpoint_from_string(cb::io::read_file(sample_ckpt));
    const json cfgj = json::parse(ckpt.config_json);
    cb::epinet::EpinetConfig cfg;
    cfg.index_dim = cfgj.at("index_dim").get<std::size_t>();
    cfg.latent_dim = cfgj.at("latent_dim").get<std::size_t>();
    cfg.hidden = cfgj.at("hidden").get<std::vector<std::size_t>>();
    cfg.prior_scale = cfgj.at("prior_scale").get<double>();
    cfg.index_in_body = cfgj.at("index_in_body").get<bool>();
    cfg.seed = cfgj.at("seed").get<std::uint64_t>();
    cb::epinet::EpinetParams params;
    for (const auto& e : ckpt.params.entries()) {
      if (e.name.rfind("trainable.", 0) == 0)
        params.trainable.add(e.name.substr(10), e.tensor.shape).data = e.tensor.data;
      else if (e.name.rfind("prior.", 0) == 0)
        params.prior.add(e.name.substr(6), e.tensor.shape).data = e.tensor.data;
    }

    std::vector<std::vector<double>> latents;
    std::vector<double> base;
    std::vector<std::string> ids;
    for (const auto& line : read_lines(sample_data)) {
      const cb::epinet::EpinetRecord rec = latent_record_from_line(line);
      latents.push_back(rec.latent);
      base.push_back(rec.y_base);
      ids.push_back(rec.assay_id + "/" + std::to_string(ids.size()));
    }
    const cb::epinet::EpinetPosterior post =
        cb::epinet::sample_posterior(latents, base, sample_k, seed, params, cfg);
    cb::io::write_file(sample_out, cb::io::posterior_to_string(post.samples, ids));
    cb::io::write_run_meta(sample_out, run_config.dump(), seed);
  } else if (*sel) {
    const cb::io::PosteriorFile post = cb::io::posterior_from_string(cb::io::read_file(sel_post));
    const std::vector<bool> avail(post.samples.cols, true);
    cb::select::Selection s;
    if (sel_strategy == "greedy") {
      std::vector<double> means(post.samples.cols, 0.0);
      for (std::size_t c = 0; c < post.samples.cols; ++c) {
        for (std::size_t r = 0; r < post.samples.rows; ++r) means[c] += post.samples(r, c);
        means[c] /= static_cast<double>(post.samples.rows);
      }
      s = cb::select::greedy_select(means, post.ids, avail, sel_batch);
    } else if (sel_strategy == "emax") {
      s = cb::select::emax_select(post.samples, post.ids, avail, sel_batch);
    } else {
      throw cb::InputError("select: unknown strategy '" + sel_strategy + "'");
    }
    json out;
    json picks = json::array();
    for (const auto i : s.indices) picks.push_back(post.ids[i]);
    out["selected"] = std::move(picks);
    out["strategy"] = sel_strategy;
    out["short_batch"] = s.short_batch;
    cb::io::write_file(sel_out, out.dump() + "\n");
    cb::io::write_run_meta(sel_out, run_config.dump(), seed);
  } else if (*dmta) {
    cb::select::SelectionPool pool;
    cb::Mat posterior;
    if (dmta_synthetic) {
      cb::synthdata::CliffPoolConfig pcfg;
      pcfg.seed = seed;
      const cb::synthdata::CliffPool cp = cb::synthdata::make_cliff_pool(pcfg);
      pool = cp.pool;
      posterior = cp.posterior;
    } else {
      if (dmta_pool.empty() || dmta_post.empty())
        throw cb::InputError("dmta: provide --pool and --posterior, or --synthetic-cliff");
      for (const auto& line : read_lines(dmta_pool))
        pool.items.push_back(cb::io::pool_item_from_line(line));
      const cb::io::PosteriorFile pf = cb::io::posterior_from_string(cb::io::read_file(dmta_post));
      if (pf.samples.cols != pool.items.size())
        throw cb::InputError("dmta: posterior does not match the pool size");
      posterior = pf.samples;
    }

    cb::select::Strategy strategy;
    if (dmta_strategy == "greedy")
      strategy = cb::select::Strategy::Greedy;
    else if (dmta_strategy == "continual-greedy")
      strategy = cb::select::Strategy::ContinualGreedy;
    else if (dmta_strategy == "continual-emax")
      strategy = cb::select::Strategy::ContinualEMAX;
    else if (dmta_strategy == "oracle")
      strategy = cb::select::Strategy::OracleGreedy;
    else if (dmta_strategy == "external")
      strategy = cb::select::Strategy::StaticExternal;
    else
      throw cb::InputError("dmta: unknown strategy '" + dmta_strategy + "'");

    std::vector<double> external;
    if (strategy == cb::select::Strategy::StaticExternal) {
      if (dmta_external.empty()) throw cb::InputError("dmta: external arm needs --external");
      for (const auto& line : read_lines(dmta_external))
        external.push_back(json::parse(line).at("y_pred").get<double>());
    }

    cb::select::DMTAConfig dcfg;
    dcfg.cycles = dmta_cycles;
    dcfg.batch = dmta_batch;
    dcfg.sigma_obs = dmta_sigma;
    dcfg.seed = seed;
    const cb::select::DMTAState state = cb::select::dmta_simulate(
        pool, posterior, strategy, dcfg, external.empty() ? nullptr : &external);

    std::ostringstream csv;
    csv << "cycle,strategy,selected_ids,max_gap\n";
    for (std::size_t cyc = 0; cyc < state.selected.size(); ++cyc) {
      csv << cyc + 1 << "," << dmta_strategy << ",";
      for (std::size_t i = 0; i < state.selected[cyc].size(); ++i)
        csv << (i ? ";" : "") << state.selected[cyc][i];
      csv << "," << state.max_gap[cyc] << "\n";
    }
    cb::io::write_file(dmta_out, csv.str());
    cb::io::write_run_meta(dmta_out, run_config.dump(), seed);
  } else if (*cal) {
    std::vector<double> values;
    std::vector<bool> successes;
    for (const auto& line : read_lines(cal_data)) {
      try {
        const json j = json::parse(line);
        values.push_back(j.at("value").get<double>());
        successes.push_back(j.at("success").get<bool>());
      } catch (const json::exception& e) {
        throw cb::ParseError(std::string("calibrate: ") + e.what());
      }
    }
    const auto rep = cb::metrics::entropy_calibration(values, successes, cal_edges);
    json out;
    out["bin_edges"] = rep.bin_edges;
    out["counts"] = rep.counts;
    json rates = json::array();
    for (const auto& r : rep.success_rate)
      rates.push_back(r ? json(*r) : json(nullptr));
    out["success_rate"] = std::move(rates);
    cb::io::write_file(cal_out, out.dump() + "\n");
    cb::io::write_run_meta(cal_out, run_config.dump(), seed);
  } else if (*bench) {
    cb::ParamStore params;
    const cb::pairformer::PairformerConfig mcfg = load_trunk(bench_ckpt, params);
    std::ostringstream csv;
    csv << "id,n_tokens,trunk_s,pose_s,affinity_s\n";
    for (std::size_t i = 0; i < bench_n; ++i) {
      cb::SyntheticGenConfig gcfg;
      gcfg.n_ligand = 6;
      gcfg.n_protein = 24;
      gcfg.embedding_dim = mcfg.embed_dim;
      gcfg.seed = seed + i;
      const cb::TokenizedComplex c = cb::generate_synthetic_complex(gcfg);

      auto t0 = std::chrono::steady_clock::now();
      const cb::distogram::Distogram d = cb::pairformer::infer_distogram(c, params, mcfg);
      const double trunk_s = seconds_since(t0);

      t0 = std::chrono::steady_clock::now();
      const cb::pose::Reference ref = cb::pose::build_reference(d, 15.0);
      cb::pose::OptConfig ocfg;
      ocfg.n_samples = n_samples;
      ocfg.seed = seed + i;
      cb::pose::optimize_pose(ref.ref, ocfg);
      const double pose_s = seconds_since(t0);

      t0 = std::chrono::steady_clock::now();
      cb::affinity::AffinityConfig acfg;
      acfg.n_layers = 1;
      acfg.pair_dim = 16;
      acfg.trunk_dim = mcfg.pair_dim;
      acfg.embed_dim = mcfg.embed_dim;
      acfg.seed = seed;
      const cb::ParamStore aparams = cb::affinity::affinity_init_params(acfg);
      const cb::affinity::AffinityInputs in = cb::synthdata::make_affinity_inputs(c, params, mcfg);
      cb::affinity::affinity_forward(in, aparams, acfg);
      const double affinity_s = seconds_since(t0);

      csv << c.id << "," << c.size() << "," << trunk_s << "," << pose_s << "," << affinity_s
          << "\n";
    }
    cb::io::write_file(bench_out, csv.str());
    cb::io::write_run_meta(bench_out, run_config.dump(), seed);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const cb::ParseError& e) {
    std::cerr << json({{"error", "parse"}, {"message", e.what()}}).dump() << "\n";
    return 2;
  } catch (const cb::InputError& e) {
    std::cerr << json({{"error", "input"}, {"message", e.what()}}).dump() << "\n";
    return 2;
  } catch (const cb::DivergenceError& e) {
    std::cerr << json({{"error", "divergence"}, {"message", e.what()}}).dump() << "\n";
    return 3;
  } catch (const cb::NumericError& e) {
    std::cerr << json({{"error", "numeric"}, {"message", e.what()}}).dump() << "\n";
    return 3;
  } catch (const json::exception& e) {
    std::cerr << json({{"error", "parse"}, {"message", e.what()}}).dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << json({{"error", "internal"}, {"message", e.what()}}).dump() << "\n";
    return 1;
  }
}
