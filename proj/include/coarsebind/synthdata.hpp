#pragma once

#include <cstdint>

#include "coarsebind/affinity.hpp"
#include "coarsebind/selection.hpp"
#include "coarsebind/trainer.hpp"

namespace coarsebind::synthdata {

// Frozen structural features for the affinity module: final trunk pair
// latents, symmetrized bin probabilities, token embeddings and the pooled
// ligand embedding.
affinity::AffinityInputs make_affinity_inputs(const TokenizedComplex& c,
                                              const ParamStore& trunk_params,
                                              const pairformer::PairformerConfig& trunk_cfg);

struct AffinityDataConfig {
  std::size_t n_assays = 6;
  std::size_t per_assay = 10;
  std::size_t n_binary_assays = 0; // appended after the quantitative assays
  std::size_t n_ligand = 4;
  std::size_t n_protein = 8;
  std::size_t embed_dim = 16;
  double assay_offset_scale = 1.5;
  double label_noise = 0.05;
  std::uint64_t seed = 0;
};

struct AffinityDataset {
  std::vector<affinity::AffinityExample> examples;
  affinity::AffinityConfig affinity_cfg; // dimensions matching the examples
  pairformer::PairformerConfig trunk_cfg;
};

// Labeled synthetic assay data on frozen trunk features. Quantitative labels
// are a fixed linear readout of ligand and protein embeddings plus a per-
// assay offset; binary assays mix true pairs with cross-paired decoys.
AffinityDataset make_affinity_dataset(const AffinityDataConfig& cfg);

struct CliffPoolConfig {
  std::size_t n_clusters = 100;
  std::size_t per_cluster = 10;
  double cliff_fraction = 0.08; // clusters carrying one planted jump
  double cliff_jump = 3.0;
  double cluster_pred_error = 1.2; // model error shared within a cluster
  double item_noise = 0.15;
  std::size_t paths = 320;
  std::size_t latent_dim = 8;
  std::uint64_t seed = 0;
};

struct CliffPool {
  select::SelectionPool pool;
  Mat posterior; // paths x items, correlation follows the cluster structure
};

// Activity-cliff selection pool: clusters of near-identical latents whose
// members share a base affinity, with occasional large planted jumps the
// point predictions cannot see.
CliffPool make_cliff_pool(const CliffPoolConfig& cfg);

}  // namespace coarsebind::synthdata
