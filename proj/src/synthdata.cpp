#include "coarsebind/synthdata.hpp"

#include <cmath>

#include "coarsebind/errors.hpp"

namespace coarsebind::synthdata {

affinity::AffinityInputs make_affinity_inputs(const TokenizedComplex& c,
                                              const ParamStore& trunk_params,
                                              const pairformer::PairformerConfig& trunk_cfg) {
  pairformer::ForwardCache cache;
  const std::vector<double> logits = pairformer::model_forward(c, trunk_params, trunk_cfg, &cache);
  const distogram::Distogram d =
      distogram::symmetrize(distogram::distogram_from_logits(logits, c.size(), c.kinds()));

  affinity::AffinityInputs in;
  in.n = c.size();
  in.kinds = c.kinds();
  in.pair_latents = cache.z_final.z;
  in.bin_probs = d.probs;
  in.token_embeddings.reserve(c.size());
  for (const Token& t : c.tokens) in.token_embeddings.push_back(t.embedding);
  const std::size_t e = c.tokens.front().embedding.size();
  in.ligand_global.assign(e, 0.0);
  std::size_t n_lig = 0;
  for (const Token& t : c.tokens) {
    if (t.kind != TokenKind::Ligand) continue;
    ++n_lig;
    for (std::size_t k = 0; k < e; ++k) in.ligand_global[k] += t.embedding[k];
  }
  if (n_lig == 0) throw InputError("make_affinity_inputs: no ligand tokens");
  for (auto& v : in.ligand_global) v /= static_cast<double>(n_lig);
  return in;
}

namespace {

double mean_embedding_dot(const TokenizedComplex& c, TokenKind kind,
                          const std::vector<double>& readout) {
  double acc = 0.0;
  std::size_t count = 0;
  for (const Token& t : c.tokens) {
    if (t.kind != kind) continue;
    ++count;
    for (std::size_t k = 0; k < readout.size(); ++k) acc += readout[k] * t.embedding[k];
  }
  return count ? acc / static_cast<double>(count) : 0.0;
}

}  // namespace

AffinityDataset make_affinity_dataset(const AffinityDataConfig& cfg) {
  AffinityDataset out;
  out.trunk_cfg.n_layers = 1;
  out.trunk_cfg.pair_dim = 16;
  out.trunk_cfg.n_heads = 4;
  out.trunk_cfg.embed_dim = cfg.embed_dim;
  out.trunk_cfg.seed = cfg.seed;
  const ParamStore trunk = pairformer::init_params(out.trunk_cfg);

  out.affinity_cfg.trunk_dim = out.trunk_cfg.pair_dim;
  out.affinity_cfg.embed_dim = cfg.embed_dim;
  out.affinity_cfg.n_layers = 1;
  out.affinity_cfg.pair_dim = 16;
  out.affinity_cfg.n_heads = 4;
  out.affinity_cfg.head_hidden = 16;
  out.affinity_cfg.seed = cfg.seed + 1;

  Rng rng = Rng(cfg.seed).fork("affinity_data");
  const std::vector<double> u = rng.normal_vector(cfg.embed_dim); // ligand readout
  const std::vector<double> v = rng.normal_vector(cfg.embed_dim); // protein readout

  std::uint64_t complex_seed = cfg.seed * 131 + 17;
  const auto make_complex = [&](std::uint64_t s) {
    SyntheticGenConfig g;
    g.n_ligand = cfg.n_ligand;
    g.n_protein = cfg.n_protein;
    g.embedding_dim = cfg.embed_dim;
    g.geometry = Geometry::FoldedBlob;
    g.pocket_fraction = 1.0;
    g.seed = s;
    return generate_synthetic_complex(g);
  };

  for (std::size_t a = 0; a < cfg.n_assays; ++a) {
    const double offset = cfg.assay_offset_scale * rng.normal();
    for (std::size_t i = 0; i < cfg.per_assay; ++i) {
      const TokenizedComplex c = make_complex(complex_seed++);
      affinity::AffinityExample ex;
      ex.rec.assay_id = "assay-" + std::to_string(a);
      ex.rec.complex_id = c.id;
      ex.rec.label_kind = affinity::LabelKind::Continuous;
      ex.rec.value = 6.0 + mean_embedding_dot(c, TokenKind::Ligand, u) +
                     mean_embedding_dot(c, TokenKind::Protein, v) + offset +
                     cfg.label_noise * rng.normal();
      ex.rec.h_lp = rng.uniform(0.1, 0.6);
      ex.inputs = make_affinity_inputs(c, trunk, out.trunk_cfg);
      out.examples.push_back(std::move(ex));
    }
  }

  for (std::size_t a = 0; a < cfg.n_binary_assays; ++a) {
    // keep drawing complexes until the assay holds 4 positives and 12 negatives
    std::size_t pos = 0, neg = 0;
    while (pos < 4 || neg < 12) {
      const TokenizedComplex c = make_complex(complex_seed++);
      const double score = mean_embedding_dot(c, TokenKind::Ligand, u) +
                           mean_embedding_dot(c, TokenKind::Protein, v);
      const bool binder = score > 0.0;
      if (binder && pos >= 4) continue;
      if (!binder && neg >= 12) continue;
      affinity::AffinityExample ex;
      ex.rec.assay_id = "screen-" + std::to_string(a);
      ex.rec.complex_id = c.id;
      ex.rec.label_kind = affinity::LabelKind::Binary;
      ex.rec.value = binder ? 1.0 : 0.0;
      ex.rec.h_lp = rng.uniform(0.1, 0.6);
      ex.inputs = make_affinity_inputs(c, trunk, out.trunk_cfg);
      out.examples.push_back(std::move(ex));
      (binder ? pos : neg) += 1;
    }
  }
  return out;
}

CliffPool make_cliff_pool(const CliffPoolConfig& cfg) {
  if (cfg.n_clusters < 1 || cfg.per_cluster < 1) throw InputError("make_cliff_pool: bad counts");
  Rng rng = Rng(cfg.seed).fork("cliff_pool");

  CliffPool out;
  const std::size_t n = cfg.n_clusters * cfg.per_cluster;
  out.pool.items.reserve(n);

  std::vector<std::size_t> cluster_of(n);
  std::size_t idx = 0;
  for (std::size_t c = 0; c < cfg.n_clusters; ++c) {
    const std::vector<double> center = rng.normal_vector(cfg.latent_dim);
    const double base = 5.0 + 1.2 * rng.normal();
    const double pred_bias = cfg.cluster_pred_error * rng.normal();
    const bool has_cliff = rng.uniform() < cfg.cliff_fraction;
    const std::size_t cliff_member = rng.uniform_index(cfg.per_cluster);
    for (std::size_t m = 0; m < cfg.per_cluster; ++m, ++idx) {
      select::PoolItem item;
      item.id = "mol-" + std::to_string(c) + "-" + std::to_string(m);
      item.latent = center;
      for (auto& x : item.latent) x += 0.01 * rng.normal(); // near-identical inputs
      item.y_true = base + cfg.item_noise * rng.normal();
      if (has_cliff && m == cliff_member)
        item.y_true += cfg.cliff_jump + 0.8 * rng.uniform(); // planted activity cliff
      item.y_pred = base + pred_bias + 0.1 * rng.normal();
      cluster_of[idx] = c;
      out.pool.items.push_back(std::move(item));
    }
  }

  // joint posterior whose correlations follow the cluster structure
  out.posterior = Mat(cfg.paths, n);
  Rng prng = Rng(cfg.seed).fork("cliff_posterior");
  for (std::size_t k = 0; k < cfg.paths; ++k) {
    std::vector<double> cluster_noise(cfg.n_clusters);
    for (auto& x : cluster_noise) x = cfg.cluster_pred_error * prng.normal();
    for (std::size_t i = 0; i < n; ++i)
      out.posterior(k, i) =
          out.pool.items[i].y_pred + cluster_noise[cluster_of[i]] + cfg.item_noise * prng.normal();
  }
  return out;
}

}  // namespace coarsebind::synthdata
