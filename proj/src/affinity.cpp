#include "coarsebind/affinity.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "coarsebind/errors.hpp"

namespace coarsebind::affinity {

using pairformer::PairRep;

void AffinityConfig::validate() const {
  block_config().validate();
  if (trunk_dim < 1 || head_hidden < 1) throw InputError("affinity config: bad dimensions");
}

namespace {

constexpr double kClamp = 1e-7;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
         x * 0.39894228040143267794 * std::exp(-0.5 * x * x);
}

bool pooled_pair(const std::vector<TokenKind>& kinds, std::size_t i, std::size_t j) {
  // protein-protein pairs are masked
  return !(kinds[i] == TokenKind::Protein && kinds[j] == TokenKind::Protein);
}

// y = W x accumulated into out
void matvec_add(const Tensor& w, const double* x, std::size_t in, double* out, std::size_t rows) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = w.ptr() + r * in;
    double acc = 0.0;
    for (std::size_t c = 0; c < in; ++c) acc += wr[c] * x[c];
    out[r] += acc;
  }
}

void matvec_add_grad(Tensor& dw, const double* x, std::size_t in, const double* dout,
                     std::size_t rows) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = dout[r];
    if (g == 0.0) continue;
    double* dwr = dw.ptr() + r * in;
    for (std::size_t c = 0; c < in; ++c) dwr[c] += g * x[c];
  }
}

void head_forward(const std::vector<double>& g, const ParamStore& params, const std::string& name,
                  const AffinityConfig& cfg, double& out, std::vector<double>* hidden_cache) {
  const std::size_t h = cfg.head_hidden;
  std::vector<double> pre(h, 0.0);
  const Tensor& w1 = params.at(name + ".w1");
  const Tensor& b1 = params.at(name + ".b1");
  for (std::size_t r = 0; r < h; ++r) pre[r] = b1[r];
  matvec_add(w1, g.data(), g.size(), pre.data(), h);
  const Tensor& w2 = params.at(name + ".w2");
  out = params.at(name + ".b2")[0];
  for (std::size_t r = 0; r < h; ++r) out += w2[r] * gelu(pre[r]);
  if (hidden_cache) *hidden_cache = pre;
}

void head_backward(double dout, const std::vector<double>& g, const std::vector<double>& hidden,
                   const ParamStore& params, const std::string& name, const AffinityConfig& cfg,
                   ParamStore& grads, std::vector<double>& dg) {
  const std::size_t h = cfg.head_hidden;
  const Tensor& w1 = params.at(name + ".w1");
  const Tensor& w2 = params.at(name + ".w2");
  Tensor& dw1 = grads.at(name + ".w1");
  Tensor& db1 = grads.at(name + ".b1");
  Tensor& dw2 = grads.at(name + ".w2");
  grads.at(name + ".b2")[0] += dout;
  for (std::size_t r = 0; r < h; ++r) {
    dw2[r] += dout * gelu(hidden[r]);
    const double dpre = dout * w2[r] * gelu_grad(hidden[r]);
    db1[r] += dpre;
    const double* w1r = w1.ptr() + r * g.size();
    double* dw1r = dw1.ptr() + r * g.size();
    for (std::size_t c = 0; c < g.size(); ++c) {
      dw1r[c] += dpre * g[c];
      dg[c] += dpre * w1r[c];
    }
  }
}

PairRep conditioning_forward(const AffinityInputs& in, const ParamStore& params,
                             const AffinityConfig& cfg) {
  const std::size_t n = in.n;
  const std::size_t cd = cfg.pair_dim;
  const auto nb = static_cast<std::size_t>(cfg.n_bins);
  PairRep z(n, cd);
  const Tensor& wl = params.at("cond.w_latent");
  const Tensor& wbins = params.at("cond.w_bins");
  const Tensor& wti = params.at("cond.w_tok_i");
  const Tensor& wtj = params.at("cond.w_tok_j");
  const Tensor& wlig = params.at("cond.w_lig");
  const Tensor& bias = params.at("cond.b");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!pooled_pair(in.kinds, i, j)) continue; // masked pairs stay zero
      double* zij = z.at(i, j);
      for (std::size_t r = 0; r < cd; ++r) zij[r] = bias[r];
      matvec_add(wl, in.pair_latents.data() + (i * n + j) * cfg.trunk_dim, cfg.trunk_dim, zij, cd);
      matvec_add(wbins, in.bin_probs.data() + (i * n + j) * nb, nb, zij, cd);
      matvec_add(wti, in.token_embeddings[i].data(), cfg.embed_dim, zij, cd);
      matvec_add(wtj, in.token_embeddings[j].data(), cfg.embed_dim, zij, cd);
      if (in.kinds[i] == TokenKind::Ligand && in.kinds[j] == TokenKind::Ligand)
        matvec_add(wlig, in.ligand_global.data(), cfg.embed_dim, zij, cd);
    }
  }
  return z;
}

void conditioning_backward(const PairRep& dz0, const AffinityInputs& in, const AffinityConfig& cfg,
                           ParamStore& grads) {
  const std::size_t n = in.n;
  const std::size_t cd = cfg.pair_dim;
  const auto nb = static_cast<std::size_t>(cfg.n_bins);
  Tensor& dwl = grads.at("cond.w_latent");
  Tensor& dwbins = grads.at("cond.w_bins");
  Tensor& dwti = grads.at("cond.w_tok_i");
  Tensor& dwtj = grads.at("cond.w_tok_j");
  Tensor& dwlig = grads.at("cond.w_lig");
  Tensor& dbias = grads.at("cond.b");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!pooled_pair(in.kinds, i, j)) continue; // masked pairs carry no parameters
      const double* g = dz0.at(i, j);
      for (std::size_t r = 0; r < cd; ++r) dbias[r] += g[r];
      matvec_add_grad(dwl, in.pair_latents.data() + (i * n + j) * cfg.trunk_dim, cfg.trunk_dim, g,
                      cd);
      matvec_add_grad(dwbins, in.bin_probs.data() + (i * n + j) * nb, nb, g, cd);
      matvec_add_grad(dwti, in.token_embeddings[i].data(), cfg.embed_dim, g, cd);
      matvec_add_grad(dwtj, in.token_embeddings[j].data(), cfg.embed_dim, g, cd);
      if (in.kinds[i] == TokenKind::Ligand && in.kinds[j] == TokenKind::Ligand)
        matvec_add_grad(dwlig, in.ligand_global.data(), cfg.embed_dim, g, cd);
    }
  }
}

void validate_inputs(const AffinityInputs& in, const AffinityConfig& cfg) {
  const std::size_t n = in.n;
  if (n == 0) throw InputError("affinity_forward: empty complex");
  if (n > cfg.context_limit)
    throw InputError("affinity_forward: context of " + std::to_string(n) +
                     " tokens exceeds the limit of " + std::to_string(cfg.context_limit));
  if (in.kinds.size() != n || in.token_embeddings.size() != n)
    throw InputError("affinity_forward: token shape mismatch");
  if (in.pair_latents.size() != n * n * cfg.trunk_dim)
    throw InputError("affinity_forward: pair latent shape mismatch");
  if (in.bin_probs.size() != n * n * static_cast<std::size_t>(cfg.n_bins))
    throw InputError("affinity_forward: bin prob shape mismatch");
  if (in.ligand_global.size() != cfg.embed_dim)
    throw InputError("affinity_forward: ligand_global shape mismatch");
  for (const auto& e : in.token_embeddings)
    if (e.size() != cfg.embed_dim) throw InputError("affinity_forward: embedding dim mismatch");
}

}  // namespace

ParamStore affinity_init_params(const AffinityConfig& cfg) {
  cfg.validate();
  ParamStore p;
  Rng rng = Rng(cfg.seed).fork("affinity_init");
  const std::size_t cd = cfg.pair_dim;
  const auto gauss = [&](Tensor& t, std::size_t fan_in) {
    t.fill_normal(rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  };
  gauss(p.add("cond.w_latent", {cd, cfg.trunk_dim}), cfg.trunk_dim);
  gauss(p.add("cond.w_bins", {cd, static_cast<std::size_t>(cfg.n_bins)}),
        static_cast<std::size_t>(cfg.n_bins));
  gauss(p.add("cond.w_tok_i", {cd, cfg.embed_dim}), cfg.embed_dim);
  gauss(p.add("cond.w_tok_j", {cd, cfg.embed_dim}), cfg.embed_dim);
  gauss(p.add("cond.w_lig", {cd, cfg.embed_dim}), cfg.embed_dim);
  p.add("cond.b", {cd});

  const pairformer::PairformerConfig bc = cfg.block_config();
  for (std::size_t l = 0; l < cfg.n_layers; ++l)
    pairformer::add_layer_params(p, "layer" + std::to_string(l), bc, rng);

  for (const char* head : {"cls", "reg"}) {
    gauss(p.add(std::string(head) + ".w1", {cfg.head_hidden, cd}), cd);
    p.add(std::string(head) + ".b1", {cfg.head_hidden});
    p.add(std::string(head) + ".w2", {cfg.head_hidden}); // zero-weight heads start neutral
    p.add(std::string(head) + ".b2", {1});
  }
  return p;
}

AffinityOutput affinity_forward(const AffinityInputs& in, const ParamStore& params,
                                const AffinityConfig& cfg, AffinityCache* cache) {
  validate_inputs(in, cfg);
  const std::size_t n = in.n;
  const std::size_t cd = cfg.pair_dim;

  PairRep z0 = conditioning_forward(in, params, cfg);
  const pairformer::PairformerConfig bc = cfg.block_config();
  AffinityCache local;
  AffinityCache& cc = cache ? *cache : local;
  cc.z0 = z0;
  const PairRep zf = pairformer::pairformer_forward(z0, bc, params, &cc.blocks);

  std::vector<double> g(cd, 0.0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!pooled_pair(in.kinds, i, j)) continue;
      const double* zij = zf.at(i, j);
      for (std::size_t r = 0; r < cd; ++r) g[r] += zij[r];
      ++count;
    }
  }
  if (count == 0) throw InputError("affinity_forward: no unmasked pairs to pool");
  for (auto& v : g) v /= static_cast<double>(count);
  cc.g = g;
  cc.pooled_pairs = count;

  AffinityOutput out;
  out.g = g;
  head_forward(g, params, "cls", cfg, out.cls_logit, &cc.cls_hidden);
  head_forward(g, params, "reg", cfg, out.y_hat, &cc.reg_hidden);
  out.p_bind = sigmoid(out.cls_logit);
  if (!std::isfinite(out.p_bind) || !std::isfinite(out.y_hat))
    throw NumericError("affinity_forward: non-finite head outputs");
  return out;
}

void affinity_backward(double dlogit_cls, double dy_hat, const AffinityInputs& in,
                       const AffinityCache& cache, const ParamStore& params,
                       const AffinityConfig& cfg, ParamStore& grads) {
  const std::size_t n = in.n;
  const std::size_t cd = cfg.pair_dim;

  std::vector<double> dg(cd, 0.0);
  head_backward(dlogit_cls, cache.g, cache.cls_hidden, params, "cls", cfg, grads, dg);
  head_backward(dy_hat, cache.g, cache.reg_hidden, params, "reg", cfg, grads, dg);

  PairRep dzf(n, cd);
  const double inv = 1.0 / static_cast<double>(cache.pooled_pairs);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!pooled_pair(in.kinds, i, j)) continue;
      double* d = dzf.at(i, j);
      for (std::size_t r = 0; r < cd; ++r) d[r] = dg[r] * inv;
    }
  }

  const pairformer::PairformerConfig bc = cfg.block_config();
  const PairRep dz0 = pairformer::pairformer_backward(dzf, cache.blocks, bc, params, grads);
  conditioning_backward(dz0, in, cfg, grads);
}

double focal_loss_logit(double logit, int y, std::optional<double> alpha, double gamma,
                        double* dlogit) {
  const double p = sigmoid(logit);
  const double pc = std::clamp(p, kClamp, 1.0 - kClamp);
  const double pt = y ? pc : 1.0 - pc;
  const double at = alpha ? (y ? *alpha : 1.0 - *alpha) : 1.0;
  const double one_m = 1.0 - pt;
  const double loss = -at * std::pow(one_m, gamma) * std::log(pt);
  if (dlogit) {
    // d(loss)/d(pt), then pt -> logit via the sigmoid
    double dpt = -at * (std::pow(one_m, gamma) / pt);
    if (gamma != 0.0) dpt += at * gamma * std::pow(one_m, gamma - 1.0) * std::log(pt);
    const double sign = y ? 1.0 : -1.0;
    *dlogit = dpt * sign * pc * (1.0 - pc);
  }
  return loss;
}

double focal_loss(const std::vector<double>& p, const std::vector<int>& y,
                  std::optional<double> alpha, double gamma) {
  if (p.empty() || p.size() != y.size()) throw InputError("focal_loss: batch size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] >= 0.0 && p[i] <= 1.0)) throw InputError("focal_loss: probability out of range");
    const double pc = std::clamp(p[i], kClamp, 1.0 - kClamp);
    const double pt = y[i] ? pc : 1.0 - pc;
    const double at = alpha ? (y[i] ? *alpha : 1.0 - *alpha) : 1.0;
    total += -at * std::pow(1.0 - pt, gamma) * std::log(pt);
  }
  return total / static_cast<double>(p.size());
}

double huber_loss(double y, double y_hat, double delta) {
  const double r = y_hat - y;
  if (std::abs(r) <= delta) return 0.5 * r * r;
  return delta * (std::abs(r) - 0.5 * delta);
}

double huber_grad(double y, double y_hat, double delta) {
  const double r = y_hat - y;
  if (std::abs(r) <= delta) return r;
  return r > 0 ? delta : -delta;
}

RelativeLoss relative_affinity_loss(const std::vector<double>& y, const std::vector<double>& y_hat,
                                    double delta, std::vector<double>* dy_hat) {
  if (y.size() != y_hat.size()) throw InputError("relative_affinity_loss: size mismatch");
  RelativeLoss out;
  if (dy_hat) dy_hat->assign(y.size(), 0.0);
  if (y.size() < 2) return out; // zero loss, flagged invalid
  out.valid = true;
  const std::size_t n = y.size();
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      if (a == b) continue;
      const double target = y[a] - y[b];
      const double pred = y_hat[a] - y_hat[b];
      out.value += huber_loss(target, pred, delta) / pairs;
      if (dy_hat) {
        const double g = huber_grad(target, pred, delta) / pairs;
        (*dy_hat)[a] += g;
        (*dy_hat)[b] -= g;
      }
    }
  }
  return out;
}

BatchSample sample_batch(const std::vector<AssayRecord>& records, LabelKind kind, Rng& rng) {
  // group record indices by assay, keeping only the requested label kind
  std::map<std::string, std::vector<std::size_t>> pos, neg, cont;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const AssayRecord& r = records[i];
    if (r.label_kind != kind) continue;
    if (kind == LabelKind::Continuous) {
      cont[r.assay_id].push_back(i);
    } else {
      (r.value > 0.5 ? pos : neg)[r.assay_id].push_back(i);
    }
  }

  BatchSample out;
  if (kind == LabelKind::Continuous) {
    std::vector<const std::vector<std::size_t>*> assays;
    for (const auto& [_, v] : cont) assays.push_back(&v);
    if (assays.empty()) throw InputError("sample_batch: no quantitative assays");
    const auto& pool = *assays[rng.uniform_index(assays.size())];
    std::vector<std::size_t> shuffled = pool;
    rng.shuffle(shuffled);
    const std::size_t take = std::min<std::size_t>(5, shuffled.size());
    out.indices.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(take));
    out.short_batch = take < 5;
  } else {
    std::vector<std::string> eligible;
    for (const auto& [assay, p] : pos) {
      const auto it = neg.find(assay);
      if (!p.empty() && it != neg.end() && it->second.size() >= 4) eligible.push_back(assay);
    }
    if (eligible.empty())
      throw InputError("sample_batch: no binary assay with >= 1 positive and >= 4 negatives");
    const std::string& assay = eligible[rng.uniform_index(eligible.size())];
    const auto& p = pos.at(assay);
    out.indices.push_back(p[rng.uniform_index(p.size())]);
    std::vector<std::size_t> negs = neg.at(assay);
    rng.shuffle(negs);
    out.indices.insert(out.indices.end(), negs.begin(), negs.begin() + 4);
  }
  return out;
}

PrefilterResult prefilter(const std::vector<AssayRecord>& records) {
  PrefilterResult out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const AssayRecord& r = records[i];
    if (r.label_kind == LabelKind::Continuous && !r.h_lp) {
      out.flagged_missing_hlp.push_back(i);
      out.kept.push_back(i);
      continue;
    }
    // exclusion rule: potency below 1 uM (y > 6) and H_LP above 0.7
    if (r.label_kind == LabelKind::Continuous && r.value > 6.0 && r.h_lp && *r.h_lp > 0.7)
      continue;
    out.kept.push_back(i);
  }
  return out;
}

AffinityTrainResult train_affinity(const std::vector<AffinityExample>& examples,
                                   const AffinityConfig& cfg, const AffinityTrainOptions& opts) {
  if (examples.empty()) throw InputError("train_affinity: empty dataset");
  std::vector<AssayRecord> records;
  records.reserve(examples.size());
  bool has_cont = false, has_bin = false;
  for (const auto& e : examples) {
    records.push_back(e.rec);
    if (e.rec.label_kind == LabelKind::Continuous) has_cont = true;
    if (e.rec.label_kind == LabelKind::Binary) has_bin = true;
  }
  bool binary_ok = false;
  if (has_bin) {
    Rng probe = Rng(opts.seed).fork("binary_probe");
    try {
      sample_batch(records, LabelKind::Binary, probe);
      binary_ok = true;
    } catch (const InputError&) {
      binary_ok = false;
    }
  }

  AffinityTrainResult result;
  result.params = affinity_init_params(cfg);
  ParamStore grads = result.params.zeros_like();
  Adam adam;
  Rng rng = Rng(opts.seed).fork("affinity_train");

  double initial_loss = -1.0;
  std::size_t divergent_streak = 0;

  for (std::size_t step = 0; step < opts.steps; ++step) {
    const bool do_binary = binary_ok && (!has_cont || step % 2 == 1);
    const LabelKind kind = do_binary ? LabelKind::Binary : LabelKind::Continuous;
    const BatchSample batch = sample_batch(records, kind, rng);

    grads.zero_all();
    double step_loss = 0.0;
    std::vector<AffinityCache> caches(batch.indices.size());
    std::vector<AffinityOutput> outs(batch.indices.size());
    for (std::size_t b = 0; b < batch.indices.size(); ++b)
      outs[b] =
          affinity_forward(examples[batch.indices[b]].inputs, result.params, cfg, &caches[b]);

    const double bsz = static_cast<double>(batch.indices.size());
    if (kind == LabelKind::Binary) {
      for (std::size_t b = 0; b < batch.indices.size(); ++b) {
        double dlogit = 0.0;
        const int label = examples[batch.indices[b]].rec.value > 0.5 ? 1 : 0;
        step_loss += opts.weights.binary *
                     focal_loss_logit(outs[b].cls_logit, label, 0.25, 2.0, &dlogit) / bsz;
        affinity_backward(opts.weights.binary * dlogit / bsz, 0.0,
                          examples[batch.indices[b]].inputs, caches[b], result.params, cfg, grads);
      }
    } else {
      std::vector<double> ys, yhats;
      for (const auto idx : batch.indices) ys.push_back(examples[idx].rec.value);
      for (const auto& o : outs) yhats.push_back(o.y_hat);
      std::vector<double> drel;
      const RelativeLoss rel = relative_affinity_loss(ys, yhats, 0.5, &drel);
      double abs_loss = 0.0;
      for (std::size_t b = 0; b < batch.indices.size(); ++b)
        abs_loss += huber_loss(ys[b], yhats[b], 0.5) / bsz;
      step_loss += opts.weights.absolute * abs_loss + opts.weights.relative * rel.value;
      for (std::size_t b = 0; b < batch.indices.size(); ++b) {
        const double dy = opts.weights.absolute * huber_grad(ys[b], yhats[b], 0.5) / bsz +
                          opts.weights.relative * drel[b];
        affinity_backward(0.0, dy, examples[batch.indices[b]].inputs, caches[b], result.params,
                          cfg, grads);
      }
    }

    result.step_loss.push_back(step_loss);
    if (initial_loss < 0) initial_loss = std::max(step_loss, 1e-9);
    if (step_loss > 10.0 * initial_loss) {
      if (++divergent_streak >= 100)
        throw DivergenceError("train_affinity: loss diverged at step " + std::to_string(step));
    } else {
      divergent_streak = 0;
    }
    adam.step(result.params, grads, opts.learning_rate);
  }
  return result;
}

}  // namespace coarsebind::affinity
