#include "coarsebind/trainer.hpp"

#include <cmath>

#include "coarsebind/errors.hpp"
#include "coarsebind/pocket.hpp"

namespace coarsebind::pairformer {

distogram::Distogram infer_distogram(const TokenizedComplex& c, const ParamStore& params,
                                     const PairformerConfig& cfg) {
  const std::vector<double> logits = model_forward(c, params, cfg);
  return distogram::symmetrize(distogram::distogram_from_logits(logits, c.size(), c.kinds()));
}

std::optional<double> predicted_hlp(const TokenizedComplex& c, const ParamStore& params,
                                    const PairformerConfig& cfg) {
  const distogram::Distogram d = infer_distogram(c, params, cfg);
  const Mat expected = distogram::expected_distance_matrix(d);
  const auto pocket = pocket::pocket_residues(expected, d.kinds, 15.0);
  return distogram::aggregate_entropy(d, pocket).h_lp;
}

TokenizedComplex crop_to_budget(const TokenizedComplex& c, std::size_t budget) {
  if (c.size() <= budget) return c;
  if (!c.coords) throw InputError("crop_to_budget: complex has no coordinates");
  const Mat dist = distance_matrix(*c.coords);
  const auto pkt = pocket::pocket_residues(dist, c.kinds(), 15.0);
  return pocket::apply_crop(c, pocket::crop(c, budget, pkt, dist));
}

TrainConfig desk_curriculum(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.model.n_layers = 2;
  cfg.model.pair_dim = 32;
  cfg.model.n_heads = 4;
  cfg.model.embed_dim = 16;
  cfg.model.seed = seed;

  SyntheticGenConfig blob;
  blob.n_ligand = 6;
  blob.n_protein = 22;
  blob.embedding_dim = cfg.model.embed_dim;
  blob.geometry = Geometry::FoldedBlob;
  blob.pocket_fraction = 0.8;
  blob.seed = seed * 1000 + 1;

  SyntheticGenConfig helix = blob;
  helix.geometry = Geometry::Helix;
  helix.seed = seed * 1000 + 300;

  SyntheticGenConfig cliff = blob;
  cliff.geometry = Geometry::Cliff;
  cliff.seed = seed * 1000 + 600;

  cfg.sources["blob"] = {blob, 6};
  cfg.sources["helix"] = {helix, 6};
  cfg.sources["cliff"] = {cliff, 6};

  StageConfig s1;
  s1.steps = 320;
  s1.crop_tokens = 48;
  s1.data_mix = {{"blob", 0.45}, {"helix", 0.25}, {"cliff", 0.30}};
  s1.loss_weights = {1.0, 1.0, 1.0};
  s1.learning_rate = 1e-2;

  StageConfig s2;
  s2.steps = 140;
  s2.crop_tokens = 32;
  s2.data_mix = {{"blob", 0.5}, {"cliff", 0.5}};
  s2.loss_weights = {2.0, 5.0, 1.0}; // interface-weighted stage
  s2.learning_rate = 1e-2;

  StageConfig s3;
  s3.steps = 140;
  s3.crop_tokens = 32;
  s3.data_mix = {{"blob", 1.0}};
  s3.loss_weights = {1.0, 1.0, 1.0}; // clean-source fine-tune, equal weights
  s3.learning_rate = 3e-3;

  cfg.stages = {s1, s2, s3};
  return cfg;
}

namespace {

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.stages.empty()) throw InputError("train: need at least one stage");
  if (cfg.sources.empty()) throw InputError("train: need at least one data source");
  for (const auto& stage : cfg.stages) {
    if (stage.steps < 1) throw InputError("train: stage steps must be >= 1");
    double total = 0.0;
    for (const auto& [name, p] : stage.data_mix) {
      if (!cfg.sources.count(name)) throw InputError("train: unknown data source '" + name + "'");
      if (p < 0) throw InputError("train: negative mix probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-6) throw InputError("train: data_mix must sum to 1");
  }
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  validate_train_config(cfg);
  cfg.model.validate();
  for (const auto& [name, src] : cfg.sources)
    if (src.base.embedding_dim != cfg.model.embed_dim)
      throw InputError("train: source '" + name + "' embedding dim does not match the model");

  // pre-generate training pools and the held-out set
  std::map<std::string, std::vector<TokenizedComplex>> pools;
  std::vector<TokenizedComplex> heldout;
  for (const auto& [name, src] : cfg.sources) {
    auto& pool = pools[name];
    for (std::size_t k = 0; k < src.pool_size; ++k) {
      SyntheticGenConfig g = src.base;
      g.seed = src.base.seed + k;
      pool.push_back(generate_synthetic_complex(g));
    }
    for (std::size_t k = 0; k < cfg.heldout_per_source; ++k) {
      SyntheticGenConfig g = src.base;
      g.seed = src.base.seed + 7000000 + k;
      heldout.push_back(generate_synthetic_complex(g));
    }
  }

  TrainResult result;
  result.params = init_params(cfg.model);
  ParamStore grads = result.params.zeros_like();
  Adam adam;
  Rng sampler = Rng(cfg.seed).fork("train_sampler");

  double initial_loss = -1.0;
  std::size_t divergent_streak = 0;

  const auto heldout_hlp_mean = [&]() {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& c : heldout) {
      const auto h = predicted_hlp(c, result.params, cfg.model);
      if (h) {
        sum += *h;
        ++count;
      }
    }
    return count ? sum / static_cast<double>(count) : 1.0;
  };

  for (const auto& stage : cfg.stages) {
    for (std::size_t step = 0; step < stage.steps; ++step) {
      // pick a source by mix probability, then a pool element
      double u = sampler.uniform();
      const std::string* chosen = nullptr;
      for (const auto& [name, p] : stage.data_mix) {
        chosen = &name; // the last entry absorbs rounding slack
        if (u < p) break;
        u -= p;
      }
      const auto& pool = pools.at(*chosen);
      const TokenizedComplex& full = pool[sampler.uniform_index(pool.size())];
      const TokenizedComplex cropped = crop_to_budget(full, stage.crop_tokens);

      ForwardCache cache;
      const std::vector<double> logits = model_forward(cropped, result.params, cfg.model, &cache);

      const Mat dist = distance_matrix(*cropped.coords);
      const distogram::IMat targets = distogram::target_distogram(dist);
      const auto mask = distogram::offdiagonal_mask(cropped.size());

      std::vector<double> dlogits(logits.size(), 0.0);
      const double loss = distogram::structure_loss_grad(
          logits, cropped.size(), targets, stage.loss_weights, cropped.kinds(), mask, dlogits);
      result.log.step_loss.push_back(loss);

      if (initial_loss < 0) initial_loss = loss;
      if (loss > cfg.divergence_factor * initial_loss) {
        if (++divergent_streak >= cfg.divergence_patience)
          throw DivergenceError("train: loss " + std::to_string(loss) + " exceeded " +
                                std::to_string(cfg.divergence_factor) + "x initial for " +
                                std::to_string(divergent_streak) + " steps at step " +
                                std::to_string(result.log.step_loss.size()));
      } else {
        divergent_streak = 0;
      }

      grads.zero_all();
      model_backward(dlogits, cropped, cache, result.params, cfg.model, grads);
      adam.step(result.params, grads, stage.learning_rate);
    }
    result.log.stage_boundaries.push_back(result.log.step_loss.size());
    result.log.stage_heldout_hlp.push_back(heldout_hlp_mean());
  }
  return result;
}

}  // namespace coarsebind::pairformer
