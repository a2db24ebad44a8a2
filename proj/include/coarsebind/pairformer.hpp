#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coarsebind/complexes.hpp"
#include "coarsebind/tensor.hpp"

namespace coarsebind::pairformer {

struct PairformerConfig {
  std::size_t n_layers = 4;    // 48 at production scale
  std::size_t n_heads = 4;
  std::size_t pair_dim = 32;   // 128 at production scale
  std::size_t transition_expand = 4;
  int relpos_clip = 32;
  std::size_t embed_dim = 32;
  int n_bins = 64;
  std::string nonlinearity = "gelu"; // recorded in run metadata
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return pair_dim / n_heads; }
  void validate() const;
};

// Pair representation, flat row-major [i][j][c].
struct PairRep {
  std::size_t n = 0, c = 0;
  std::vector<double> z;

  PairRep() = default;
  PairRep(std::size_t n_, std::size_t c_) : n(n_), c(c_), z(n_ * n_ * c_, 0.0) {}

  double* at(std::size_t i, std::size_t j) { return z.data() + (i * n + j) * c; }
  const double* at(std::size_t i, std::size_t j) const { return z.data() + (i * n + j) * c; }
};

enum class AttnNode { Starting, Ending };
enum class MultMode { Outgoing, Incoming };

// ---- caches (activations kept for the backward pass) ----

struct LnCache {
  std::vector<double> xhat;    // normalized inputs, one row per site
  std::vector<double> inv_std; // per site
};

struct TriAttnCache {
  LnCache ln;
  std::vector<double> zl;   // n*n*c
  std::vector<double> q, k, v; // n*n*c, laid out per head
  std::vector<double> bias; // n*n*heads
  std::vector<double> attn; // n*n*heads*n, softmax over the last index
  std::vector<double> o;    // n*n*c
};

struct TriMultCache {
  LnCache ln;
  std::vector<double> zl;
  std::vector<double> gate_a, lin_a, a; // n*n*c each
  std::vector<double> gate_b, lin_b, b;
  std::vector<double> s; // n*n*c
};

struct TransitionCache {
  LnCache ln;
  std::vector<double> zl;
  std::vector<double> h1; // n*n*expand*c, pre-activation
};

struct LayerCache {
  TriMultCache mult_out, mult_in;
  TriAttnCache attn_start, attn_end;
  TransitionCache transition;
};

struct ForwardCache {
  PairRep z0;
  std::vector<LayerCache> layers;
  PairRep z_final;
};

// ---- parameters ----

// Registers every tensor of the model under stable names
// (init.*, layer{n}.{op}.{tensor}, head.*) and initializes them: output
// projections zero (each block starts as the identity), everything else
// scaled Gaussian.
ParamStore init_params(const PairformerConfig& cfg);

// Registers one block's tensors under layer_prefix.{op}.{tensor}. Shared
// with the affinity module, which stacks the same blocks.
void add_layer_params(ParamStore& p, const std::string& layer_prefix,
                      const PairformerConfig& cfg, Rng& rng);

// ---- ops ----

// z0_ij = Wa e_i + Wb e_j + relpos(i, j). The relative-position feature is
// a learned embedding of |delta residue| clipped at relpos_clip, applied to
// same-chain protein pairs only.
PairRep init_pair_from_tokens(const TokenizedComplex& c, const ParamStore& params,
                              const PairformerConfig& cfg);
void init_pair_backward(const PairRep& dz0, const TokenizedComplex& c, const ParamStore& params,
                        const PairformerConfig& cfg, ParamStore& grads);

PairRep triangle_attention(const PairRep& z, AttnNode node, const ParamStore& params,
                           const std::string& prefix, const PairformerConfig& cfg,
                           TriAttnCache* cache = nullptr);
PairRep triangle_attention_backward(const PairRep& dz_out, AttnNode node,
                                    const TriAttnCache& cache, const ParamStore& params,
                                    const std::string& prefix, const PairformerConfig& cfg,
                                    ParamStore& grads);

PairRep triangle_multiplication(const PairRep& z, MultMode mode, const ParamStore& params,
                                const std::string& prefix, const PairformerConfig& cfg,
                                TriMultCache* cache = nullptr);
PairRep triangle_multiplication_backward(const PairRep& dz_out, MultMode mode,
                                         const TriMultCache& cache, const ParamStore& params,
                                         const std::string& prefix, const PairformerConfig& cfg,
                                         ParamStore& grads);

PairRep pair_transition(const PairRep& z, const ParamStore& params, const std::string& prefix,
                        const PairformerConfig& cfg, TransitionCache* cache = nullptr);
PairRep pair_transition_backward(const PairRep& dz_out, const TransitionCache& cache,
                                 const ParamStore& params, const std::string& prefix,
                                 const PairformerConfig& cfg, ParamStore& grads);

// One block per layer: triangle mult (outgoing, incoming), triangle
// attention (starting, ending), pair transition; all residual.
PairRep pairformer_forward(const PairRep& z0, const PairformerConfig& cfg,
                           const ParamStore& params, ForwardCache* cache = nullptr);
PairRep pairformer_backward(const PairRep& dz_final, const ForwardCache& cache,
                            const PairformerConfig& cfg, const ParamStore& params,
                            ParamStore& grads);

// Linear projection of each pair into distance-bin logits, flat [i][j][b].
std::vector<double> distogram_head(const PairRep& z, const ParamStore& params,
                                   const PairformerConfig& cfg);
PairRep distogram_head_backward(const std::vector<double>& dlogits, const PairRep& z,
                                const ParamStore& params, const PairformerConfig& cfg,
                                ParamStore& grads);

// Full model: tokens -> logits. The cache, when provided, retains what the
// backward pass needs.
std::vector<double> model_forward(const TokenizedComplex& c, const ParamStore& params,
                                  const PairformerConfig& cfg, ForwardCache* cache = nullptr);
void model_backward(const std::vector<double>& dlogits, const TokenizedComplex& c,
                    const ForwardCache& cache, const ParamStore& params,
                    const PairformerConfig& cfg, ParamStore& grads);

}  // namespace coarsebind::pairformer
