#include "coarsebind/pairformer.hpp"

#include <cmath>

#include "coarsebind/errors.hpp"

namespace coarsebind::pairformer {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// y = W x + b over the trailing dimension, sites x (rows of W are outputs)
void linear_forward(const std::vector<double>& x, std::size_t sites, std::size_t in,
                    const Tensor& w, const Tensor* b, std::vector<double>& y, std::size_t out) {
  y.assign(sites * out, 0.0);
  for (std::size_t s = 0; s < sites; ++s) {
    const double* xs = x.data() + s * in;
    double* ys = y.data() + s * out;
    for (std::size_t r = 0; r < out; ++r) {
      const double* wr = w.ptr() + r * in;
      double acc = b ? (*b)[r] : 0.0;
      for (std::size_t c = 0; c < in; ++c) acc += wr[c] * xs[c];
      ys[r] = acc;
    }
  }
}

// accumulates dW, db and dx
void linear_backward(const std::vector<double>& dy, const std::vector<double>& x,
                     std::size_t sites, std::size_t in, std::size_t out, const Tensor& w,
                     Tensor& dw, Tensor* db, std::vector<double>& dx) {
  for (std::size_t s = 0; s < sites; ++s) {
    const double* dys = dy.data() + s * out;
    const double* xs = x.data() + s * in;
    double* dxs = dx.data() + s * in;
    for (std::size_t r = 0; r < out; ++r) {
      const double g = dys[r];
      if (g == 0.0) continue;
      const double* wr = w.ptr() + r * in;
      double* dwr = dw.ptr() + r * in;
      if (db) (*db)[r] += g;
      for (std::size_t c = 0; c < in; ++c) {
        dwr[c] += g * xs[c];
        dxs[c] += g * wr[c];
      }
    }
  }
}

void ln_forward(const std::vector<double>& x, std::size_t sites, std::size_t c, const Tensor& gamma,
                const Tensor& beta, std::vector<double>& y, LnCache* cache) {
  y.resize(sites * c);
  if (cache) {
    cache->xhat.resize(sites * c);
    cache->inv_std.resize(sites);
  }
  for (std::size_t s = 0; s < sites; ++s) {
    const double* xs = x.data() + s * c;
    double mu = 0.0;
    for (std::size_t k = 0; k < c; ++k) mu += xs[k];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t k = 0; k < c; ++k) var += (xs[k] - mu) * (xs[k] - mu);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + kLnEps);
    double* ys = y.data() + s * c;
    for (std::size_t k = 0; k < c; ++k) {
      const double xh = (xs[k] - mu) * inv;
      ys[k] = gamma[k] * xh + beta[k];
      if (cache) cache->xhat[s * c + k] = xh;
    }
    if (cache) cache->inv_std[s] = inv;
  }
}

void ln_backward(const std::vector<double>& dy, const LnCache& cache, std::size_t sites,
                 std::size_t c, const Tensor& gamma, Tensor& dgamma, Tensor& dbeta,
                 std::vector<double>& dx) {
  dx.assign(sites * c, 0.0);
  for (std::size_t s = 0; s < sites; ++s) {
    const double* dys = dy.data() + s * c;
    const double* xh = cache.xhat.data() + s * c;
    const double inv = cache.inv_std[s];
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      dgamma[k] += dys[k] * xh[k];
      dbeta[k] += dys[k];
      const double dxh = dys[k] * gamma[k];
      mean_dxhat += dxh;
      mean_dxhat_xhat += dxh * xh[k];
    }
    mean_dxhat /= static_cast<double>(c);
    mean_dxhat_xhat /= static_cast<double>(c);
    double* dxs = dx.data() + s * c;
    for (std::size_t k = 0; k < c; ++k) {
      const double dxh = dys[k] * gamma[k];
      dxs[k] = inv * (dxh - mean_dxhat - xh[k] * mean_dxhat_xhat);
    }
  }
}

void check_finite(const PairRep& z, const std::string& where) {
  for (const double v : z.z)
    if (!std::isfinite(v)) throw NumericError("non-finite activations in " + where);
}

void add_ln_params(ParamStore& p, const std::string& prefix, std::size_t c) {
  Tensor& g = p.add(prefix + ".ln_gamma", {c});
  g.fill(1.0);
  p.add(prefix + ".ln_beta", {c});
}

}  // namespace

void PairformerConfig::validate() const {
  if (n_heads < 1 || pair_dim < 1 || n_layers > 4096) throw InputError("pairformer config: bad counts");
  if (pair_dim % n_heads != 0) throw InputError("pairformer config: pair_dim must divide by n_heads");
  if (embed_dim < 1) throw InputError("pairformer config: embed_dim must be >= 1");
  if (relpos_clip < 0) throw InputError("pairformer config: relpos_clip must be >= 0");
}

void add_layer_params(ParamStore& p, const std::string& layer_prefix, const PairformerConfig& cfg,
                      Rng& rng) {
  const std::size_t c = cfg.pair_dim;
  const auto gauss = [&](Tensor& t, std::size_t fan_in) {
    t.fill_normal(rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  };
  for (const char* op : {"tri_mult_out", "tri_mult_in"}) {
    const std::string pre = layer_prefix + "." + op;
    add_ln_params(p, pre, c);
    for (const char* t : {"w_gate_a", "w_lin_a", "w_gate_b", "w_lin_b"})
      gauss(p.add(pre + "." + t, {c, c}), c);
    for (const char* t : {"b_gate_a", "b_lin_a", "b_gate_b", "b_lin_b"}) p.add(pre + "." + t, {c});
    p.add(pre + ".wo", {c, c}); // zero: block starts as the identity
    p.add(pre + ".bo", {c});
  }
  for (const char* op : {"tri_attn_start", "tri_attn_end"}) {
    const std::string pre = layer_prefix + "." + op;
    add_ln_params(p, pre, c);
    for (const char* t : {"wq", "wk", "wv"}) gauss(p.add(pre + "." + t, {c, c}), c);
    gauss(p.add(pre + ".wb", {cfg.n_heads, c}), c);
    p.add(pre + ".wo", {c, c});
    p.add(pre + ".bo", {c});
  }
  const std::string pre = layer_prefix + ".transition";
  add_ln_params(p, pre, c);
  gauss(p.add(pre + ".w1", {cfg.transition_expand * c, c}), c);
  p.add(pre + ".b1", {cfg.transition_expand * c});
  p.add(pre + ".w2", {c, cfg.transition_expand * c}); // zero
  p.add(pre + ".b2", {c});
}

ParamStore init_params(const PairformerConfig& cfg) {
  cfg.validate();
  ParamStore p;
  Rng rng = Rng(cfg.seed).fork("pairformer_init");
  const std::size_t c = cfg.pair_dim;
  const std::size_t e = cfg.embed_dim;

  const auto gauss = [&](Tensor& t, std::size_t fan_in) {
    t.fill_normal(rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  };

  gauss(p.add("init.w_a", {c, e}), e);
  gauss(p.add("init.w_b", {c, e}), e);
  gauss(p.add("init.relpos", {static_cast<std::size_t>(cfg.relpos_clip) + 1, c}), e);

  for (std::size_t l = 0; l < cfg.n_layers; ++l)
    add_layer_params(p, "layer" + std::to_string(l), cfg, rng);

  Tensor& hw = p.add("head.w", {static_cast<std::size_t>(cfg.n_bins), c});
  hw.fill_normal(rng, 0.1 / std::sqrt(static_cast<double>(c)));
  p.add("head.b", {static_cast<std::size_t>(cfg.n_bins)});
  return p;
}

PairRep init_pair_from_tokens(const TokenizedComplex& c, const ParamStore& params,
                              const PairformerConfig& cfg) {
  const std::size_t n = c.size();
  const std::size_t cd = cfg.pair_dim;
  if (n == 0) throw InputError("init_pair_from_tokens: empty complex");
  for (const Token& t : c.tokens)
    if (t.embedding.size() != cfg.embed_dim)
      throw InputError("init_pair_from_tokens: embedding dimension mismatch");

  const Tensor& wa = params.at("init.w_a");
  const Tensor& wb = params.at("init.w_b");
  const Tensor& relpos = params.at("init.relpos");

  // per-token projections, reused across pairs
  std::vector<double> pa(n * cd, 0.0), pb(n * cd, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = c.tokens[i].embedding;
    for (std::size_t r = 0; r < cd; ++r) {
      double sa = 0.0, sb = 0.0;
      for (std::size_t k = 0; k < cfg.embed_dim; ++k) {
        sa += wa.ptr()[r * cfg.embed_dim + k] * e[k];
        sb += wb.ptr()[r * cfg.embed_dim + k] * e[k];
      }
      pa[i * cd + r] = sa;
      pb[i * cd + r] = sb;
    }
  }

  PairRep z(n, cd);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double* zij = z.at(i, j);
      for (std::size_t r = 0; r < cd; ++r) zij[r] = pa[i * cd + r] + pb[j * cd + r];
      const Token& ti = c.tokens[i];
      const Token& tj = c.tokens[j];
      if (ti.kind == TokenKind::Protein && tj.kind == TokenKind::Protein &&
          ti.chain_id == tj.chain_id) {
        const int gap = std::abs(*ti.residue_index - *tj.residue_index);
        const auto bucket = static_cast<std::size_t>(std::min(gap, cfg.relpos_clip));
        for (std::size_t r = 0; r < cd; ++r) zij[r] += relpos.ptr()[bucket * cd + r];
      }
    }
  }
  return z;
}

void init_pair_backward(const PairRep& dz0, const TokenizedComplex& c, const ParamStore& params,
                        const PairformerConfig& cfg, ParamStore& grads) {
  (void)params;
  const std::size_t n = c.size();
  const std::size_t cd = cfg.pair_dim;
  Tensor& dwa = grads.at("init.w_a");
  Tensor& dwb = grads.at("init.w_b");
  Tensor& drel = grads.at("init.relpos");

  // accumulate per-token pair-sums first, then one outer product per token
  std::vector<double> row_sum(n * cd, 0.0), col_sum(n * cd, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double* g = dz0.at(i, j);
      for (std::size_t r = 0; r < cd; ++r) {
        row_sum[i * cd + r] += g[r];
        col_sum[j * cd + r] += g[r];
      }
      const Token& ti = c.tokens[i];
      const Token& tj = c.tokens[j];
      if (ti.kind == TokenKind::Protein && tj.kind == TokenKind::Protein &&
          ti.chain_id == tj.chain_id) {
        const int gap = std::abs(*ti.residue_index - *tj.residue_index);
        const auto bucket = static_cast<std::size_t>(std::min(gap, cfg.relpos_clip));
        for (std::size_t r = 0; r < cd; ++r) drel.ptr()[bucket * cd + r] += g[r];
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = c.tokens[i].embedding;
    for (std::size_t r = 0; r < cd; ++r) {
      const double ga = row_sum[i * cd + r];
      const double gb = col_sum[i * cd + r];
      for (std::size_t k = 0; k < cfg.embed_dim; ++k) {
        dwa.ptr()[r * cfg.embed_dim + k] += ga * e[k];
        dwb.ptr()[r * cfg.embed_dim + k] += gb * e[k];
      }
    }
  }
}

PairRep triangle_attention(const PairRep& z, AttnNode node, const ParamStore& params,
                           const std::string& prefix, const PairformerConfig& cfg,
                           TriAttnCache* cache) {
  const std::size_t n = z.n, c = z.c, nh = cfg.n_heads, dh = cfg.head_dim();
  const std::size_t sites = n * n;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  TriAttnCache local;
  TriAttnCache& cc = cache ? *cache : local;

  ln_forward(z.z, sites, c, params.at(prefix + ".ln_gamma"), params.at(prefix + ".ln_beta"),
             cc.zl, &cc.ln);
  linear_forward(cc.zl, sites, c, params.at(prefix + ".wq"), nullptr, cc.q, c);
  linear_forward(cc.zl, sites, c, params.at(prefix + ".wk"), nullptr, cc.k, c);
  linear_forward(cc.zl, sites, c, params.at(prefix + ".wv"), nullptr, cc.v, c);
  linear_forward(cc.zl, sites, c, params.at(prefix + ".wb"), nullptr, cc.bias, nh);

  cc.attn.assign(sites * nh * n, 0.0);
  cc.o.assign(sites * c, 0.0);
  std::vector<double> logits(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t h = 0; h < nh; ++h) {
        const double* qij = cc.q.data() + (i * n + j) * c + h * dh;
        double lmax = -1e300;
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t alpha = node == AttnNode::Starting ? i * n + k : k * n + j;
          const std::size_t beta = node == AttnNode::Starting ? j * n + k : k * n + i;
          const double* kv = cc.k.data() + alpha * c + h * dh;
          double dotqk = 0.0;
          for (std::size_t d = 0; d < dh; ++d) dotqk += qij[d] * kv[d];
          logits[k] = dotqk * inv_sqrt_dh + cc.bias[beta * nh + h];
          lmax = std::max(lmax, logits[k]);
        }
        double sum = 0.0;
        double* att = cc.attn.data() + ((i * n + j) * nh + h) * n;
        for (std::size_t k = 0; k < n; ++k) {
          att[k] = std::exp(logits[k] - lmax);
          sum += att[k];
        }
        double* oij = cc.o.data() + (i * n + j) * c + h * dh;
        for (std::size_t k = 0; k < n; ++k) {
          att[k] /= sum;
          const std::size_t alpha = node == AttnNode::Starting ? i * n + k : k * n + j;
          const double* vv = cc.v.data() + alpha * c + h * dh;
          for (std::size_t d = 0; d < dh; ++d) oij[d] += att[k] * vv[d];
        }
      }
    }
  }

  std::vector<double> out;
  linear_forward(cc.o, sites, c, params.at(prefix + ".wo"), &params.at(prefix + ".bo"), out, c);

  PairRep zp = z;
  for (std::size_t s = 0; s < sites * c; ++s) zp.z[s] += out[s];
  return zp;
}

PairRep triangle_attention_backward(const PairRep& dz_out, AttnNode node,
                                    const TriAttnCache& cc, const ParamStore& params,
                                    const std::string& prefix, const PairformerConfig& cfg,
                                    ParamStore& grads) {
  const std::size_t n = dz_out.n, c = dz_out.c, nh = cfg.n_heads, dh = cfg.head_dim();
  const std::size_t sites = n * n;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  // output projection
  std::vector<double> d_o(sites * c, 0.0);
  linear_backward(dz_out.z, cc.o, sites, c, c, params.at(prefix + ".wo"),
                  grads.at(prefix + ".wo"), &grads.at(prefix + ".bo"), d_o);

  std::vector<double> dq(sites * c, 0.0), dk(sites * c, 0.0), dv(sites * c, 0.0);
  std::vector<double> dbias(sites * nh, 0.0);
  std::vector<double> dattn(n), dlogit(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t h = 0; h < nh; ++h) {
        const double* att = cc.attn.data() + ((i * n + j) * nh + h) * n;
        const double* doij = d_o.data() + (i * n + j) * c + h * dh;
        double inner = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t alpha = node == AttnNode::Starting ? i * n + k : k * n + j;
          const double* vv = cc.v.data() + alpha * c + h * dh;
          double da = 0.0;
          for (std::size_t d = 0; d < dh; ++d) {
            da += doij[d] * vv[d];
            dv[alpha * c + h * dh + d] += att[k] * doij[d];
          }
          dattn[k] = da;
          inner += att[k] * da;
        }
        const double* qij = cc.q.data() + (i * n + j) * c + h * dh;
        double* dqij = dq.data() + (i * n + j) * c + h * dh;
        for (std::size_t k = 0; k < n; ++k) {
          const double dl = att[k] * (dattn[k] - inner);
          dlogit[k] = dl;
          const std::size_t alpha = node == AttnNode::Starting ? i * n + k : k * n + j;
          const std::size_t beta = node == AttnNode::Starting ? j * n + k : k * n + i;
          const double* kv = cc.k.data() + alpha * c + h * dh;
          double* dkv = dk.data() + alpha * c + h * dh;
          for (std::size_t d = 0; d < dh; ++d) {
            dqij[d] += dl * kv[d] * inv_sqrt_dh;
            dkv[d] += dl * qij[d] * inv_sqrt_dh;
          }
          dbias[beta * nh + h] += dl;
        }
      }
    }
  }

  std::vector<double> dzl(sites * c, 0.0);
  linear_backward(dq, cc.zl, sites, c, c, params.at(prefix + ".wq"), grads.at(prefix + ".wq"),
                  nullptr, dzl);
  linear_backward(dk, cc.zl, sites, c, c, params.at(prefix + ".wk"), grads.at(prefix + ".wk"),
                  nullptr, dzl);
  linear_backward(dv, cc.zl, sites, c, c, params.at(prefix + ".wv"), grads.at(prefix + ".wv"),
                  nullptr, dzl);
  linear_backward(dbias, cc.zl, sites, c, nh, params.at(prefix + ".wb"), grads.at(prefix + ".wb"),
                  nullptr, dzl);

  std::vector<double> dz_ln;
  ln_backward(dzl, cc.ln, sites, c, params.at(prefix + ".ln_gamma"),
              grads.at(prefix + ".ln_gamma"), grads.at(prefix + ".ln_beta"), dz_ln);

  PairRep dz_in = dz_out;
  for (std::size_t s = 0; s < sites * c; ++s) dz_in.z[s] += dz_ln[s];
  return dz_in;
}

PairRep triangle_multiplication(const PairRep& z, MultMode mode, const ParamStore& params,
                                const std::string& prefix, const PairformerConfig& cfg,
                                TriMultCache* cache) {
  (void)cfg;
  const std::size_t n = z.n, c = z.c;
  const std::size_t sites = n * n;

  TriMultCache local;
  TriMultCache& cc = cache ? *cache : local;

  ln_forward(z.z, sites, c, params.at(prefix + ".ln_gamma"), params.at(prefix + ".ln_beta"),
             cc.zl, &cc.ln);
  linear_forward(cc.zl, sites, c, params.at(prefix + ".w_gate_a"), &params.at(prefix + ".b_gate_a"),
                 cc.gate_a, c);
  linear_forward(cc.zl, sites, c, params.at(prefix + ".w_lin_a"), &params.at(prefix + ".b_lin_a"),
                 cc.lin_a, c);
  linear_forward(cc.zl, sites, c, params.at(prefix + ".w_gate_b"), &params.at(prefix + ".b_gate_b"),
                 cc.gate_b, c);
  linear_forward(cc.zl, sites, c, params.at(prefix + ".w_lin_b"), &params.at(prefix + ".b_lin_b"),
                 cc.lin_b, c);

  cc.a.resize(sites * c);
  cc.b.resize(sites * c);
  for (std::size_t s = 0; s < sites * c; ++s) {
    cc.gate_a[s] = sigmoid(cc.gate_a[s]);
    cc.gate_b[s] = sigmoid(cc.gate_b[s]);
    cc.a[s] = cc.gate_a[s] * cc.lin_a[s];
    cc.b[s] = cc.gate_b[s] * cc.lin_b[s];
  }

  cc.s.assign(sites * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double* sij = cc.s.data() + (i * n + j) * c;
      for (std::size_t k = 0; k < n; ++k) {
        const double* av = mode == MultMode::Outgoing ? cc.a.data() + (i * n + k) * c
                                                      : cc.a.data() + (k * n + i) * c;
        const double* bv = mode == MultMode::Outgoing ? cc.b.data() + (j * n + k) * c
                                                      : cc.b.data() + (k * n + j) * c;
        for (std::size_t d = 0; d < c; ++d) sij[d] += av[d] * bv[d];
      }
    }
  }

  std::vector<double> out;
  linear_forward(cc.s, sites, c, params.at(prefix + ".wo"), &params.at(prefix + ".bo"), out, c);

  PairRep zp = z;
  for (std::size_t s = 0; s < sites * c; ++s) zp.z[s] += out[s];
  return zp;
}

PairRep triangle_multiplication_backward(const PairRep& dz_out, MultMode mode,
                                         const TriMultCache& cc, const ParamStore& params,
                                         const std::string& prefix, const PairformerConfig& cfg,
                                         ParamStore& grads) {
  (void)cfg;
  const std::size_t n = dz_out.n, c = dz_out.c;
  const std::size_t sites = n * n;

  std::vector<double> ds(sites * c, 0.0);
  linear_backward(dz_out.z, cc.s, sites, c, c, params.at(prefix + ".wo"),
                  grads.at(prefix + ".wo"), &grads.at(prefix + ".bo"), ds);

  std::vector<double> da(sites * c, 0.0), db(sites * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double* dsij = ds.data() + (i * n + j) * c;
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t ai = mode == MultMode::Outgoing ? i * n + k : k * n + i;
        const std::size_t bi = mode == MultMode::Outgoing ? j * n + k : k * n + j;
        const double* av = cc.a.data() + ai * c;
        const double* bv = cc.b.data() + bi * c;
        double* dav = da.data() + ai * c;
        double* dbv = db.data() + bi * c;
        for (std::size_t d = 0; d < c; ++d) {
          dav[d] += dsij[d] * bv[d];
          dbv[d] += dsij[d] * av[d];
        }
      }
    }
  }

  // gated projections
  std::vector<double> dgate_a(sites * c), dlin_a(sites * c), dgate_b(sites * c), dlin_b(sites * c);
  for (std::size_t s = 0; s < sites * c; ++s) {
    dgate_a[s] = da[s] * cc.lin_a[s] * cc.gate_a[s] * (1.0 - cc.gate_a[s]);
    dlin_a[s] = da[s] * cc.gate_a[s];
    dgate_b[s] = db[s] * cc.lin_b[s] * cc.gate_b[s] * (1.0 - cc.gate_b[s]);
    dlin_b[s] = db[s] * cc.gate_b[s];
  }

  std::vector<double> dzl(sites * c, 0.0);
  linear_backward(dgate_a, cc.zl, sites, c, c, params.at(prefix + ".w_gate_a"),
                  grads.at(prefix + ".w_gate_a"), &grads.at(prefix + ".b_gate_a"), dzl);
  linear_backward(dlin_a, cc.zl, sites, c, c, params.at(prefix + ".w_lin_a"),
                  grads.at(prefix + ".w_lin_a"), &grads.at(prefix + ".b_lin_a"), dzl);
  linear_backward(dgate_b, cc.zl, sites, c, c, params.at(prefix + ".w_gate_b"),
                  grads.at(prefix + ".w_gate_b"), &grads.at(prefix + ".b_gate_b"), dzl);
  linear_backward(dlin_b, cc.zl, sites, c, c, params.at(prefix + ".w_lin_b"),
                  grads.at(prefix + ".w_lin_b"), &grads.at(prefix + ".b_lin_b"), dzl);

  std::vector<double> dz_ln;
  ln_backward(dzl, cc.ln, sites, c, params.at(prefix + ".ln_gamma"),
              grads.at(prefix + ".ln_gamma"), grads.at(prefix + ".ln_beta"), dz_ln);

  PairRep dz_in = dz_out;
  for (std::size_t s = 0; s < sites * c; ++s) dz_in.z[s] += dz_ln[s];
  return dz_in;
}

PairRep pair_transition(const PairRep& z, const ParamStore& params, const std::string& prefix,
                        const PairformerConfig& cfg, TransitionCache* cache) {
  const std::size_t n = z.n, c = z.c;
  const std::size_t sites = n * n;
  const std::size_t hidden = cfg.transition_expand * c;

  TransitionCache local;
  TransitionCache& cc = cache ? *cache : local;

  ln_forward(z.z, sites, c, params.at(prefix + ".ln_gamma"), params.at(prefix + ".ln_beta"),
             cc.zl, &cc.ln);
  linear_forward(cc.zl, sites, c, params.at(prefix + ".w1"), &params.at(prefix + ".b1"), cc.h1,
                 hidden);
  std::vector<double> g(sites * hidden);
  for (std::size_t s = 0; s < sites * hidden; ++s) g[s] = gelu(cc.h1[s]);

  std::vector<double> out;
  linear_forward(g, sites, hidden, params.at(prefix + ".w2"), &params.at(prefix + ".b2"), out, c);

  PairRep zp = z;
  for (std::size_t s = 0; s < sites * c; ++s) zp.z[s] += out[s];
  return zp;
}

PairRep pair_transition_backward(const PairRep& dz_out, const TransitionCache& cc,
                                 const ParamStore& params, const std::string& prefix,
                                 const PairformerConfig& cfg, ParamStore& grads) {
  const std::size_t n = dz_out.n, c = dz_out.c;
  const std::size_t sites = n * n;
  const std::size_t hidden = cfg.transition_expand * c;

  std::vector<double> g(sites * hidden);
  for (std::size_t s = 0; s < sites * hidden; ++s) g[s] = gelu(cc.h1[s]);

  std::vector<double> dg(sites * hidden, 0.0);
  linear_backward(dz_out.z, g, sites, hidden, c, params.at(prefix + ".w2"),
                  grads.at(prefix + ".w2"), &grads.at(prefix + ".b2"), dg);

  std::vector<double> dh1(sites * hidden);
  for (std::size_t s = 0; s < sites * hidden; ++s) dh1[s] = dg[s] * gelu_grad(cc.h1[s]);

  std::vector<double> dzl(sites * c, 0.0);
  linear_backward(dh1, cc.zl, sites, c, hidden, params.at(prefix + ".w1"),
                  grads.at(prefix + ".w1"), &grads.at(prefix + ".b1"), dzl);

  std::vector<double> dz_ln;
  ln_backward(dzl, cc.ln, sites, c, params.at(prefix + ".ln_gamma"),
              grads.at(prefix + ".ln_gamma"), grads.at(prefix + ".ln_beta"), dz_ln);

  PairRep dz_in = dz_out;
  for (std::size_t s = 0; s < sites * c; ++s) dz_in.z[s] += dz_ln[s];
  return dz_in;
}

PairRep pairformer_forward(const PairRep& z0, const PairformerConfig& cfg,
                           const ParamStore& params, ForwardCache* cache) {
  PairRep z = z0;
  if (cache) cache->layers.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string layer = "layer" + std::to_string(l);
    LayerCache* lc = cache ? &cache->layers[l] : nullptr;
    z = triangle_multiplication(z, MultMode::Outgoing, params, layer + ".tri_mult_out", cfg,
                                lc ? &lc->mult_out : nullptr);
    z = triangle_multiplication(z, MultMode::Incoming, params, layer + ".tri_mult_in", cfg,
                                lc ? &lc->mult_in : nullptr);
    z = triangle_attention(z, AttnNode::Starting, params, layer + ".tri_attn_start", cfg,
                           lc ? &lc->attn_start : nullptr);
    z = triangle_attention(z, AttnNode::Ending, params, layer + ".tri_attn_end", cfg,
                           lc ? &lc->attn_end : nullptr);
    z = pair_transition(z, params, layer + ".transition", cfg, lc ? &lc->transition : nullptr);
    check_finite(z, "pairformer layer " + std::to_string(l));
  }
  if (cache) cache->z_final = z;
  return z;
}

PairRep pairformer_backward(const PairRep& dz_final, const ForwardCache& cache,
                            const PairformerConfig& cfg, const ParamStore& params,
                            ParamStore& grads) {
  PairRep dz = dz_final;
  for (std::size_t li = cfg.n_layers; li-- > 0;) {
    const std::string layer = "layer" + std::to_string(li);
    const LayerCache& lc = cache.layers[li];
    dz = pair_transition_backward(dz, lc.transition, params, layer + ".transition", cfg, grads);
    dz = triangle_attention_backward(dz, AttnNode::Ending, lc.attn_end, params,
                                     layer + ".tri_attn_end", cfg, grads);
    dz = triangle_attention_backward(dz, AttnNode::Starting, lc.attn_start, params,
                                     layer + ".tri_attn_start", cfg, grads);
    dz = triangle_multiplication_backward(dz, MultMode::Incoming, lc.mult_in, params,
                                          layer + ".tri_mult_in", cfg, grads);
    dz = triangle_multiplication_backward(dz, MultMode::Outgoing, lc.mult_out, params,
                                          layer + ".tri_mult_out", cfg, grads);
  }
  return dz;
}

std::vector<double> distogram_head(const PairRep& z, const ParamStore& params,
                                   const PairformerConfig& cfg) {
  std::vector<double> logits;
  linear_forward(z.z, z.n * z.n, z.c, params.at("head.w"), &params.at("head.b"), logits,
                 static_cast<std::size_t>(cfg.n_bins));
  for (const double v : logits)
    if (!std::isfinite(v)) throw NumericError("non-finite logits in distogram head");
  return logits;
}

PairRep distogram_head_backward(const std::vector<double>& dlogits, const PairRep& z,
                                const ParamStore& params, const PairformerConfig& cfg,
                                ParamStore& grads) {
  PairRep dz(z.n, z.c);
  linear_backward(dlogits, z.z, z.n * z.n, z.c, static_cast<std::size_t>(cfg.n_bins),
                  params.at("head.w"), grads.at("head.w"), &grads.at("head.b"), dz.z);
  return dz;
}

std::vector<double> model_forward(const TokenizedComplex& c, const ParamStore& params,
                                  const PairformerConfig& cfg, ForwardCache* cache) {
  PairRep z0 = init_pair_from_tokens(c, params, cfg);
  if (cache) cache->z0 = z0;
  const PairRep zf = pairformer_forward(z0, cfg, params, cache);
  if (cache) return distogram_head(cache->z_final, params, cfg);
  return distogram_head(zf, params, cfg);
}

void model_backward(const std::vector<double>& dlogits, const TokenizedComplex& c,
                    const ForwardCache& cache, const ParamStore& params,
                    const PairformerConfig& cfg, ParamStore& grads) {
  const PairRep dz_final = distogram_head_backward(dlogits, cache.z_final, params, cfg, grads);
  const PairRep dz0 = pairformer_backward(dz_final, cache, cfg, params, grads);
  init_pair_backward(dz0, c, params, cfg, grads);
}

}  // namespace coarsebind::pairformer
