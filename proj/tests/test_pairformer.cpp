#include <cmath>
#include <functional>
#include <vector>

#include "coarsebind/complexes.hpp"
#include "coarsebind/distogram.hpp"
#include "coarsebind/errors.hpp"
#include "coarsebind/pairformer.hpp"
#include "coarsebind/rng.hpp"
#include "doctest.h"

using namespace coarsebind;
using namespace coarsebind::pairformer;

namespace {

PairformerConfig tiny_config(std::size_t layers = 1) {
  PairformerConfig cfg;
  cfg.n_layers = layers;
  cfg.n_heads = 2;
  cfg.pair_dim = 4;
  cfg.embed_dim = 3;
  cfg.relpos_clip = 4;
  cfg.seed = 77;
  return cfg;
}

// random complex with metadata exercising the relpos feature
TokenizedComplex tiny_complex(std::size_t n_lig, std::size_t n_prot, std::size_t e,
                              std::uint64_t seed) {
  Rng rng(seed);
  TokenizedComplex c;
  c.id = "tiny";
  for (std::size_t i = 0; i < n_lig; ++i) {
    Token t;
    t.kind = TokenKind::Ligand;
    t.chain_id = "L";
    t.element = "C";
    t.embedding = rng.normal_vector(e);
    c.tokens.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < n_prot; ++i) {
    Token t;
    t.kind = TokenKind::Protein;
    t.chain_id = i % 2 == 0 ? "A" : "B";
    t.residue_index = static_cast<int>(i / 2) + 1;
    t.embedding = rng.normal_vector(e);
    c.tokens.push_back(std::move(t));
  }
  return c;
}

void randomize_params(ParamStore& params, std::uint64_t seed, double scale = 0.4) {
  Rng rng(seed);
  for (auto& e : params.entries())
    for (auto& v : e.tensor.data) v = scale * rng.normal();
  // keep layer norms near the usual operating point
  for (auto& e : params.entries()) {
    if (e.name.find("ln_gamma") != std::string::npos)
      for (auto& v : e.tensor.data) v = 1.0 + 0.1 * rng.normal();
    if (e.name.find("ln_beta") != std::string::npos)
      for (auto& v : e.tensor.data) v = 0.1 * rng.normal();
  }
}

PairRep random_pair(std::size_t n, std::size_t c, std::uint64_t seed) {
  PairRep z(n, c);
  Rng rng(seed);
  for (auto& v : z.z) v = rng.normal();
  return z;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// analytic gradients of sum(w . f(z, params)) against central differences
void gradcheck_op(
    const std::function<PairRep(const PairRep&, const ParamStore&)>& forward,
    const std::function<PairRep(const PairRep&, const ParamStore&, ParamStore&)>& backward,
    const PairRep& z0, ParamStore& params) {
  Rng wrng(5150);
  std::vector<double> w(z0.z.size());
  for (auto& v : w) v = wrng.normal();

  const auto objective = [&](const PairRep& z, const ParamStore& p) {
    const PairRep out = forward(z, p);
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * out.z[i];
    return acc;
  };

  PairRep dz_out(z0.n, z0.c);
  dz_out.z = w;
  ParamStore grads = params.zeros_like();
  const PairRep dz_in = backward(dz_out, params, grads);

  const double h = 1e-5;
  double max_err = 0.0;

  // input gradient
  PairRep z = z0;
  for (std::size_t i = 0; i < z.z.size(); ++i) {
    const double keep = z.z[i];
    z.z[i] = keep + h;
    const double up = objective(z, params);
    z.z[i] = keep - h;
    const double down = objective(z, params);
    z.z[i] = keep;
    max_err = std::max(max_err, relative_error(dz_in.z[i], (up - down) / (2 * h)));
  }

  // parameter gradients
  auto git = grads.entries().begin();
  for (auto& e : params.entries()) {
    for (std::size_t i = 0; i < e.tensor.size(); ++i) {
      const double keep = e.tensor[i];
      e.tensor[i] = keep + h;
      const double up = objective(z0, params);
      e.tensor[i] = keep - h;
      const double down = objective(z0, params);
      e.tensor[i] = keep;
      max_err = std::max(max_err, relative_error(git->tensor[i], (up - down) / (2 * h)));
    }
    ++git;
  }
  CHECK(max_err < 1e-5);
}

std::vector<std::size_t> random_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  Rng rng(seed);
  rng.shuffle(p);
  return p;
}

PairRep permute_pair(const PairRep& z, const std::vector<std::size_t>& p) {
  PairRep out(z.n, z.c);
  for (std::size_t i = 0; i < z.n; ++i)
    for (std::size_t j = 0; j < z.n; ++j)
      for (std::size_t c = 0; c < z.c; ++c) out.at(p[i], p[j])[c] = z.at(i, j)[c];
  return out;
}

}  // namespace

TEST_CASE("init_pair shape, zero-projection behavior and construction") {
  const PairformerConfig cfg = tiny_config();
  const TokenizedComplex c = tiny_complex(2, 3, cfg.embed_dim, 1);
  ParamStore params = init_params(cfg);

  PairRep z = init_pair_from_tokens(c, params, cfg);
  CHECK(z.n == 5);
  CHECK(z.c == 4);

  // zero projections leave only the relative-position feature
  params.at("init.w_a").fill(0.0);
  params.at("init.w_b").fill(0.0);
  z = init_pair_from_tokens(c, params, cfg);
  const Tensor& relpos = params.at("init.relpos");
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      const Token& ti = c.tokens[i];
      const Token& tj = c.tokens[j];
      const bool same_chain_protein = ti.kind == TokenKind::Protein &&
                                      tj.kind == TokenKind::Protein && ti.chain_id == tj.chain_id;
      for (std::size_t d = 0; d < 4; ++d) {
        if (same_chain_protein) {
          const auto bucket = static_cast<std::size_t>(
              std::min(std::abs(*ti.residue_index - *tj.residue_index), cfg.relpos_clip));
          CHECK(z.at(i, j)[d] == doctest::Approx(relpos.ptr()[bucket * 4 + d]));
        } else {
          CHECK(z.at(i, j)[d] == 0.0);
        }
      }
    }
  }

  // swapping the two projections transposes the endpoint contributions
  randomize_params(params, 9);
  params.at("init.relpos").fill(0.0);
  const PairRep za = init_pair_from_tokens(c, params, cfg);
  std::swap(params.at("init.w_a").data, params.at("init.w_b").data);
  const PairRep zb = init_pair_from_tokens(c, params, cfg);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t d = 0; d < 4; ++d)
        CHECK(za.at(i, j)[d] == doctest::Approx(zb.at(j, i)[d]).epsilon(1e-12));
}

TEST_CASE("blocks are the identity at zero output projections") {
  const PairformerConfig cfg = tiny_config(2);
  const ParamStore params = init_params(cfg); // output projections zero-initialized
  const PairRep z = random_pair(4, cfg.pair_dim, 3);

  for (const auto node : {AttnNode::Starting, AttnNode::Ending}) {
    const PairRep out = triangle_attention(z, node, params, "layer0.tri_attn_start", cfg);
    for (std::size_t i = 0; i < z.z.size(); ++i) CHECK(out.z[i] == z.z[i]);
  }
  const PairRep m = triangle_multiplication(z, MultMode::Outgoing, params, "layer0.tri_mult_out", cfg);
  for (std::size_t i = 0; i < z.z.size(); ++i) CHECK(m.z[i] == z.z[i]);
  const PairRep t = pair_transition(z, params, "layer0.transition", cfg);
  for (std::size_t i = 0; i < z.z.size(); ++i) CHECK(t.z[i] == z.z[i]);

  // and therefore the whole freshly initialized stack is the identity
  const PairRep full = pairformer_forward(z, cfg, params);
  for (std::size_t i = 0; i < z.z.size(); ++i) CHECK(full.z[i] == z.z[i]);
}

TEST_CASE("zero-layer pairformer is the identity") {
  PairformerConfig cfg = tiny_config(0);
  const ParamStore params = init_params(cfg);
  const PairRep z = random_pair(3, cfg.pair_dim, 4);
  const PairRep out = pairformer_forward(z, cfg, params);
  for (std::size_t i = 0; i < z.z.size(); ++i) CHECK(out.z[i] == z.z[i]);
}

TEST_CASE("single-token attention reduces to a plain projection of v") {
  const PairformerConfig cfg = tiny_config();
  ParamStore params = init_params(cfg);
  randomize_params(params, 21);
  const PairRep z = random_pair(1, cfg.pair_dim, 5);

  TriAttnCache cache;
  const PairRep out =
      triangle_attention(z, AttnNode::Starting, params, "layer0.tri_attn_start", cfg, &cache);
  // softmax over a single key is 1, so o == v and z' = z + Wo v + bo
  const Tensor& wo = params.at("layer0.tri_attn_start.wo");
  const Tensor& bo = params.at("layer0.tri_attn_start.bo");
  for (std::size_t d = 0; d < cfg.pair_dim; ++d) {
    double want = z.at(0, 0)[d] + bo[d];
    for (std::size_t k = 0; k < cfg.pair_dim; ++k)
      want += wo.ptr()[d * cfg.pair_dim + k] * cache.v[k];
    CHECK(out.at(0, 0)[d] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("triangle attention gradients match finite differences") {
  const PairformerConfig cfg = tiny_config();
  for (const auto node : {AttnNode::Starting, AttnNode::Ending}) {
    ParamStore params = init_params(cfg);
    randomize_params(params, node == AttnNode::Starting ? 31 : 32);
    const PairRep z = random_pair(3, cfg.pair_dim, 6);
    TriAttnCache cache;
    triangle_attention(z, node, params, "layer0.tri_attn_start", cfg, &cache);
    gradcheck_op(
        [&](const PairRep& zz, const ParamStore& pp) {
          return triangle_attention(zz, node, pp, "layer0.tri_attn_start", cfg);
        },
        [&](const PairRep& dz, const ParamStore& pp, ParamStore& gg) {
          TriAttnCache cc;
          triangle_attention(z, node, pp, "layer0.tri_attn_start", cfg, &cc);
          return triangle_attention_backward(dz, node, cc, pp, "layer0.tri_attn_start", cfg, gg);
        },
        z, params);
  }
}

TEST_CASE("triangle multiplication gradients match finite differences") {
  const PairformerConfig cfg = tiny_config();
  for (const auto mode : {MultMode::Outgoing, MultMode::Incoming}) {
    ParamStore params = init_params(cfg);
    randomize_params(params, mode == MultMode::Outgoing ? 41 : 42);
    const PairRep z = random_pair(3, cfg.pair_dim, 7);
    gradcheck_op(
        [&](const PairRep& zz, const ParamStore& pp) {
          return triangle_multiplication(zz, mode, pp, "layer0.tri_mult_out", cfg);
        },
        [&](const PairRep& dz, const ParamStore& pp, ParamStore& gg) {
          TriMultCache cc;
          triangle_multiplication(z, mode, pp, "layer0.tri_mult_out", cfg, &cc);
          return triangle_multiplication_backward(dz, mode, cc, pp, "layer0.tri_mult_out", cfg, gg);
        },
        z, params);
  }
}

TEST_CASE("pair transition gradients match finite differences") {
  const PairformerConfig cfg = tiny_config();
  ParamStore params = init_params(cfg);
  randomize_params(params, 51);
  const PairRep z = random_pair(3, cfg.pair_dim, 8);
  gradcheck_op(
      [&](const PairRep& zz, const ParamStore& pp) {
        return pair_transition(zz, pp, "layer0.transition", cfg);
      },
      [&](const PairRep& dz, const ParamStore& pp, ParamStore& gg) {
        TransitionCache cc;
        pair_transition(z, pp, "layer0.transition", cfg, &cc);
        return pair_transition_backward(dz, cc, pp, "layer0.transition", cfg, gg);
      },
      z, params);
}

TEST_CASE("full model gradient matches finite differences through the loss") {
  PairformerConfig cfg = tiny_config(1);
  ParamStore params = init_params(cfg);
  randomize_params(params, 61, 0.3);
  const TokenizedComplex c = tiny_complex(2, 2, cfg.embed_dim, 2);
  const std::size_t n = c.size();

  distogram::IMat targets(n, n);
  Rng trng(1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) targets(i, j) = 1 + static_cast<int>(trng.uniform_index(64));
  const auto mask = distogram::offdiagonal_mask(n);
  const distogram::PairTypeWeights w{2.0, 5.0, 1.0};

  const auto loss_of = [&](const ParamStore& p) {
    const auto logits = model_forward(c, p, cfg);
    return distogram::structure_loss(logits, n, targets, w, c.kinds(), mask);
  };

  ForwardCache cache;
  const auto logits = model_forward(c, params, cfg, &cache);
  std::vector<double> dlogits(logits.size(), 0.0);
  distogram::structure_loss_grad(logits, n, targets, w, c.kinds(), mask, dlogits);
  ParamStore grads = params.zeros_like();
  model_backward(dlogits, c, cache, params, cfg, grads);

  const double h = 1e-5;
  double max_err = 0.0;
  auto git = grads.entries().begin();
  for (auto& e : params.entries()) {
    for (std::size_t i = 0; i < e.tensor.size(); ++i) {
      const double keep = e.tensor[i];
      e.tensor[i] = keep + h;
      const double up = loss_of(params);
      e.tensor[i] = keep - h;
      const double down = loss_of(params);
      e.tensor[i] = keep;
      max_err = std::max(max_err, relative_error(git->tensor[i], (up - down) / (2 * h)));
    }
    ++git;
  }
  CHECK(max_err < 1e-5);
}

TEST_CASE("every block is permutation equivariant") {
  const PairformerConfig cfg = tiny_config(2);
  ParamStore params = init_params(cfg);
  randomize_params(params, 71);
  const std::size_t n = 5;
  const PairRep z = random_pair(n, cfg.pair_dim, 9);
  const auto perm = random_permutation(n, 10);
  const PairRep pz = permute_pair(z, perm);

  const auto check_equivariant = [&](const PairRep& a, const PairRep& b) {
    const PairRep pa = permute_pair(a, perm);
    for (std::size_t i = 0; i < a.z.size(); ++i) CHECK(std::abs(pa.z[i] - b.z[i]) < 1e-6);
  };

  for (const auto node : {AttnNode::Starting, AttnNode::Ending})
    check_equivariant(triangle_attention(z, node, params, "layer0.tri_attn_start", cfg),
                      triangle_attention(pz, node, params, "layer0.tri_attn_start", cfg));
  for (const auto mode : {MultMode::Outgoing, MultMode::Incoming})
    check_equivariant(triangle_multiplication(z, mode, params, "layer0.tri_mult_out", cfg),
                      triangle_multiplication(pz, mode, params, "layer0.tri_mult_out", cfg));
  check_equivariant(pair_transition(z, params, "layer0.transition", cfg),
                    pair_transition(pz, params, "layer0.transition", cfg));
  check_equivariant(pairformer_forward(z, cfg, params), pairformer_forward(pz, cfg, params));
}

TEST_CASE("whole model is permutation equivariant at the logit level") {
  PairformerConfig cfg = tiny_config(1);
  ParamStore params = init_params(cfg);
  randomize_params(params, 81, 0.3);
  const TokenizedComplex c = tiny_complex(2, 3, cfg.embed_dim, 11);
  const std::size_t n = c.size();
  const auto perm = random_permutation(n, 12);

  TokenizedComplex pc = c;
  for (std::size_t i = 0; i < n; ++i) pc.tokens[perm[i]] = c.tokens[i];

  const auto logits = model_forward(c, params, cfg);
  const auto plogits = model_forward(pc, params, cfg);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (int b = 0; b < 64; ++b)
        CHECK(std::abs(logits[(i * n + j) * 64 + b] -
                       plogits[(perm[i] * n + perm[j]) * 64 + b]) < 1e-6);
}

TEST_CASE("distogram head shape and behavior") {
  const PairformerConfig cfg = tiny_config();
  ParamStore params = init_params(cfg);
  const PairRep z = random_pair(3, cfg.pair_dim, 13);

  // zero weights give a uniform post-softmax distogram with entropy 1
  params.at("head.w").fill(0.0);
  params.at("head.b").fill(0.0);
  const auto logits = distogram_head(z, params, cfg);
  CHECK(logits.size() == 3 * 3 * 64);
  const auto d = distogram::distogram_from_logits(logits, 3, std::vector<TokenKind>(3, TokenKind::Protein));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(distogram::pairwise_entropy(d.slice(i, j)) == doctest::Approx(1.0).epsilon(1e-12));

  randomize_params(params, 91);
  const auto logits2 = distogram_head(z, params, cfg);
  for (const double v : logits2) CHECK(std::isfinite(v));
}

TEST_CASE("forward passes are deterministic") {
  const PairformerConfig cfg = tiny_config(2);
  const ParamStore a = init_params(cfg);
  const ParamStore b = init_params(cfg);
  for (std::size_t e = 0; e < a.entries().size(); ++e)
    CHECK(a.entries()[e].tensor.data == b.entries()[e].tensor.data);

  const TokenizedComplex c = tiny_complex(2, 3, cfg.embed_dim, 14);
  CHECK(model_forward(c, a, cfg) == model_forward(c, b, cfg));
}

TEST_CASE("embedding dimension mismatch is rejected") {
  const PairformerConfig cfg = tiny_config();
  const ParamStore params = init_params(cfg);
  TokenizedComplex c = tiny_complex(1, 2, cfg.embed_dim + 1, 15);
  CHECK_THROWS_AS(init_pair_from_tokens(c, params, cfg), InputError);
}
