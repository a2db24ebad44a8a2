#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "coarsebind/distogram.hpp"
#include "coarsebind/pairformer.hpp"

namespace coarsebind::pairformer {

struct StageConfig {
  std::size_t steps = 100;
  std::size_t crop_tokens = 48;
  std::map<std::string, double> data_mix; // source name -> sampling probability
  distogram::PairTypeWeights loss_weights{};
  double learning_rate = 1e-3;
};

// A named family of synthetic complexes: pool_size instances seeded from
// base.seed, base.seed + 1, ...
struct DataSource {
  SyntheticGenConfig base;
  std::size_t pool_size = 16;
};

struct TrainConfig {
  PairformerConfig model;
  std::map<std::string, DataSource> sources;
  std::vector<StageConfig> stages;
  std::uint64_t seed = 0;
  std::size_t heldout_per_source = 3;
  double divergence_factor = 10.0;
  std::size_t divergence_patience = 100;
};

struct TrainLog {
  std::vector<double> step_loss;
  std::vector<std::size_t> stage_boundaries; // cumulative step count after each stage
  std::vector<double> stage_heldout_hlp;     // held-out mean H_LP after each stage
};

struct TrainResult {
  ParamStore params;
  TrainLog log;
};

// Staged gradient-descent training of pairformer + distogram head on
// synthetic complexes. Deterministic given the seed. Throws
// DivergenceError when the loss exceeds divergence_factor x initial loss
// for divergence_patience consecutive steps.
TrainResult train(const TrainConfig& cfg);

// Predicted (symmetrized) distogram for one complex.
distogram::Distogram infer_distogram(const TokenizedComplex& c, const ParamStore& params,
                                     const PairformerConfig& cfg);

// Mean ligand-pocket entropy of the model's prediction, with the pocket
// taken from expected distances at 15 A. Absent when the pocket is empty.
std::optional<double> predicted_hlp(const TokenizedComplex& c, const ParamStore& params,
                                    const PairformerConfig& cfg);

// Crop a training complex to the stage budget using true-distance pockets.
TokenizedComplex crop_to_budget(const TokenizedComplex& c, std::size_t budget);

// The default three-stage desk curriculum with training-stage proportions
// (broad mix -> interface-weighted mix -> clean-source equal weights).
TrainConfig desk_curriculum(std::uint64_t seed);

}  // namespace coarsebind::pairformer
