#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "coarsebind/pairformer.hpp"
#include "coarsebind/rng.hpp"
#include "coarsebind/tensor.hpp"

namespace coarsebind::affinity {

struct AffinityConfig {
  std::size_t n_layers = 2; // production-scale affinity modules use 6
  std::size_t n_heads = 4;
  std::size_t pair_dim = 32;
  std::size_t trunk_dim = 32; // channel count of the frozen pair latents
  int n_bins = 64;
  std::size_t embed_dim = 32;
  std::size_t head_hidden = 32;
  std::size_t context_limit = 200; // pocket contexts rarely exceed this
  std::uint64_t seed = 0;

  pairformer::PairformerConfig block_config() const {
    pairformer::PairformerConfig b;
    b.n_layers = n_layers;
    b.n_heads = n_heads;
    b.pair_dim = pair_dim;
    b.embed_dim = embed_dim;
    b.n_bins = n_bins;
    b.seed = seed;
    return b;
  }
  void validate() const;
};

// Frozen structural features for one pocket-cropped complex. None of these
// buffers ever receive gradients.
struct AffinityInputs {
  std::size_t n = 0;
  std::vector<TokenKind> kinds;
  std::vector<double> pair_latents;           // n*n*trunk_dim
  std::vector<double> bin_probs;              // n*n*n_bins
  std::vector<std::vector<double>> token_embeddings;
  std::vector<double> ligand_global;          // broadcast to ligand-ligand pairs
};

struct AffinityOutput {
  double p_bind = 0.5;
  double cls_logit = 0.0;
  double y_hat = 0.0;
  std::vector<double> g; // pooled complex latent
};

struct AffinityCache {
  pairformer::PairRep z0;
  pairformer::ForwardCache blocks;
  std::vector<double> g;
  std::vector<double> cls_hidden, reg_hidden; // pre-activation
  std::size_t pooled_pairs = 0;
};

ParamStore affinity_init_params(const AffinityConfig& cfg);

// Pair conditioning -> pairformer blocks -> masked mean pool -> MLP heads.
// Protein-protein pairs are masked out of the conditioning and the pool.
AffinityOutput affinity_forward(const AffinityInputs& in, const ParamStore& params,
                                const AffinityConfig& cfg, AffinityCache* cache = nullptr);

// Backward from head gradients into the affinity parameters only; the
// frozen inputs are behind a stop-gradient by construction.
void affinity_backward(double dlogit_cls, double dy_hat, const AffinityInputs& in,
                       const AffinityCache& cache, const ParamStore& params,
                       const AffinityConfig& cfg, ParamStore& grads);

// ---- losses ----

// Mean focal loss over a batch of probabilities. alpha = nullopt removes
// the class-balance factor (gamma = 0 then reduces to cross-entropy).
double focal_loss(const std::vector<double>& p, const std::vector<int>& y,
                  std::optional<double> alpha = 0.25, double gamma = 2.0);
// Single-sample focal loss on the logit scale, with d(loss)/d(logit).
double focal_loss_logit(double logit, int y, std::optional<double> alpha, double gamma,
                        double* dlogit = nullptr);

double huber_loss(double y, double y_hat, double delta = 0.5);
double huber_grad(double y, double y_hat, double delta = 0.5); // d/d(y_hat)

struct RelativeLoss {
  double value = 0.0;
  bool valid = false; // needs >= 2 records
};
// Huber over all ordered pairwise intra-assay differences.
RelativeLoss relative_affinity_loss(const std::vector<double>& y, const std::vector<double>& y_hat,
                                    double delta = 0.5, std::vector<double>* dy_hat = nullptr);

// ---- dataset handling ----

enum class LabelKind { Continuous, Binary };

struct AssayRecord {
  std::string assay_id;
  std::string complex_id;
  LabelKind label_kind = LabelKind::Continuous;
  double value = 0.0; // log10 affinity, or 0/1 for binary
  std::optional<double> h_lp;
};

struct BatchSample {
  std::vector<std::size_t> indices;
  bool short_batch = false; // assay had fewer than the requested count
};

// Quantitative: uniform assay, then 5 complexes without replacement.
// Binary: uniform assay with >= 1 positive and >= 4 negatives, 1 + 4.
BatchSample sample_batch(const std::vector<AssayRecord>& records, LabelKind kind, Rng& rng);

struct PrefilterResult {
  std::vector<std::size_t> kept;
  std::vector<std::size_t> flagged_missing_hlp;
};

// Drop records with potency below 1 uM (y > 6) and H_LP > 0.7. Records
// missing H_LP are kept and flagged.
PrefilterResult prefilter(const std::vector<AssayRecord>& records);

// ---- training ----

struct AffinityExample {
  AssayRecord rec;
  AffinityInputs inputs;
};

struct AffinityLossWeights {
  double binary = 1.0;
  double absolute = 1.0;
  double relative = 2.0; // weighted above the absolute term
};

struct AffinityTrainOptions {
  std::size_t steps = 400;
  double learning_rate = 1e-3;
  AffinityLossWeights weights{};
  std::uint64_t seed = 0;
};

struct AffinityTrainResult {
  ParamStore params;
  std::vector<double> step_loss;
};

AffinityTrainResult train_affinity(const std::vector<AffinityExample>& examples,
                                   const AffinityConfig& cfg, const AffinityTrainOptions& opts);

}  // namespace coarsebind::affinity
