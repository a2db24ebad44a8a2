#include "coarsebind/epinet.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "coarsebind/affinity.hpp"
#include "coarsebind/errors.hpp"
#include "coarsebind/rng.hpp"

namespace coarsebind::epinet {

using affinity::huber_grad;

void EpinetConfig::validate() const {
  if (index_dim < 1) throw InputError("epinet config: index_dim must be >= 1");
  if (n_samples < 1) throw InputError("epinet config: n_samples must be >= 1");
  if (latent_dim < 1) throw InputError("epinet config: latent_dim must be set");
  if (hidden.empty()) throw InputError("epinet config: need at least one hidden layer");
}

namespace {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
         x * 0.39894228040143267794 * std::exp(-0.5 * x * x);
}

std::size_t input_dim(const EpinetConfig& cfg) {
  return cfg.latent_dim + (cfg.index_in_body ? cfg.index_dim : 0);
}

void register_mlp(ParamStore& p, const EpinetConfig& cfg, Rng& rng) {
  std::size_t in = input_dim(cfg);
  for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
    Tensor& w = p.add("mlp.l" + std::to_string(l) + ".w", {cfg.hidden[l], in});
    w.fill_normal(rng, 1.0 / std::sqrt(static_cast<double>(in)));
    p.add("mlp.l" + std::to_string(l) + ".b", {cfg.hidden[l]});
    in = cfg.hidden[l];
  }
  Tensor& wo = p.add("mlp.out.w", {cfg.index_dim, in});
  wo.fill_normal(rng, 1.0 / std::sqrt(static_cast<double>(in)));
  p.add("mlp.out.b", {cfg.index_dim});
}

struct MlpCache {
  std::vector<double> input;
  std::vector<std::vector<double>> pre; // per hidden layer, pre-activation
  std::vector<double> features;         // index_dim output
};

std::vector<double> mlp_forward(const std::vector<double>& g, const std::vector<double>& z,
                                const ParamStore& net, const EpinetConfig& cfg, MlpCache* cache) {
  std::vector<double> x = g;
  if (cfg.index_in_body) x.insert(x.end(), z.begin(), z.end());
  if (cache) {
    cache->input = x;
    cache->pre.clear();
  }
  for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
    const Tensor& w = net.at("mlp.l" + std::to_string(l) + ".w");
    const Tensor& b = net.at("mlp.l" + std::to_string(l) + ".b");
    std::vector<double> h(cfg.hidden[l]);
    for (std::size_t r = 0; r < cfg.hidden[l]; ++r) {
      double acc = b[r];
      const double* wr = w.ptr() + r * x.size();
      for (std::size_t c = 0; c < x.size(); ++c) acc += wr[c] * x[c];
      h[r] = acc;
    }
    if (cache) cache->pre.push_back(h);
    for (auto& v : h) v = gelu(v);
    x = std::move(h);
  }
  const Tensor& wo = net.at("mlp.out.w");
  const Tensor& bo = net.at("mlp.out.b");
  std::vector<double> out(cfg.index_dim);
  for (std::size_t r = 0; r < cfg.index_dim; ++r) {
    double acc = bo[r];
    const double* wr = wo.ptr() + r * x.size();
    for (std::size_t c = 0; c < x.size(); ++c) acc += wr[c] * x[c];
    out[r] = acc;
  }
  if (cache) cache->features = out;
  return out;
}

// backward of dL/d(features) into the network parameters
void mlp_backward(const std::vector<double>& dfeat, const MlpCache& cache, const ParamStore& net,
                  const EpinetConfig& cfg, ParamStore& grads) {
  // recompute layer activations from cached pre-activations
  std::vector<std::vector<double>> acts; // activations entering each layer
  acts.push_back(cache.input);
  for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
    std::vector<double> a(cache.pre[l].size());
    for (std::size_t r = 0; r < a.size(); ++r) a[r] = gelu(cache.pre[l][r]);
    acts.push_back(a);
  }

  const Tensor& wo = net.at("mlp.out.w");
  Tensor& dwo = grads.at("mlp.out.w");
  Tensor& dbo = grads.at("mlp.out.b");
  const std::vector<double>& last = acts.back();
  std::vector<double> dx(last.size(), 0.0);
  for (std::size_t r = 0; r < cfg.index_dim; ++r) {
    const double gr = dfeat[r];
    if (gr == 0.0) continue;
    dbo[r] += gr;
    const double* wr = wo.ptr() + r * last.size();
    double* dwr = dwo.ptr() + r * last.size();
    for (std::size_t c = 0; c < last.size(); ++c) {
      dwr[c] += gr * last[c];
      dx[c] += gr * wr[c];
    }
  }

  for (std::size_t l = cfg.hidden.size(); l-- > 0;) {
    std::vector<double> dpre(dx.size());
    for (std::size_t r = 0; r < dx.size(); ++r) dpre[r] = dx[r] * gelu_grad(cache.pre[l][r]);
    const Tensor& w = net.at("mlp.l" + std::to_string(l) + ".w");
    Tensor& dw = grads.at("mlp.l" + std::to_string(l) + ".w");
    Tensor& db = grads.at("mlp.l" + std::to_string(l) + ".b");
    const std::vector<double>& below = acts[l];
    std::vector<double> dbelow(below.size(), 0.0);
    for (std::size_t r = 0; r < dpre.size(); ++r) {
      const double gr = dpre[r];
      if (gr == 0.0) continue;
      db[r] += gr;
      const double* wr = w.ptr() + r * below.size();
      double* dwr = dw.ptr() + r * below.size();
      for (std::size_t c = 0; c < below.size(); ++c) {
        dwr[c] += gr * below[c];
        dbelow[c] += gr * wr[c];
      }
    }
    dx = std::move(dbelow);
  }
}

}  // namespace

EpinetParams epinet_init(const EpinetConfig& cfg) {
  cfg.validate();
  EpinetParams p;
  Rng rng_t = Rng(cfg.seed).fork("epinet_trainable");
  Rng rng_p = Rng(cfg.seed).fork("epinet_prior");
  register_mlp(p.trainable, cfg, rng_t);
  register_mlp(p.prior, cfg, rng_p);
  return p;
}

std::vector<double> epinet_features(const std::vector<double>& g, const std::vector<double>& z,
                                    const ParamStore& net, const EpinetConfig& cfg) {
  if (g.size() != cfg.latent_dim) throw InputError("epinet: latent dimension mismatch");
  if (z.size() != cfg.index_dim) throw InputError("epinet: index dimension mismatch");
  return mlp_forward(g, z, net, cfg, nullptr);
}

double epinet_forward(const std::vector<double>& g, const std::vector<double>& z,
                      const EpinetParams& params, const EpinetConfig& cfg) {
  const std::vector<double> ft = epinet_features(g, z, params.trainable, cfg);
  const std::vector<double> fp = epinet_features(g, z, params.prior, cfg);
  double r = 0.0;
  for (std::size_t i = 0; i < cfg.index_dim; ++i)
    r += (ft[i] + cfg.prior_scale * fp[i]) * z[i];
  return r;
}

EpinetTrainResult train_epinet(const std::vector<EpinetRecord>& data, const EpinetConfig& cfg,
                               const EpinetTrainOptions& opts) {
  if (data.empty()) throw InputError("train_epinet: empty dataset");
  for (const auto& rec : data)
    if (rec.latent.size() != cfg.latent_dim)
      throw InputError("train_epinet: latent dimension mismatch");

  // group by assay for the quantitative batch sampler (uniform assay, 5 records)
  std::map<std::string, std::vector<std::size_t>> by_assay;
  for (std::size_t i = 0; i < data.size(); ++i) by_assay[data[i].assay_id].push_back(i);
  std::vector<const std::vector<std::size_t>*> assays;
  for (const auto& [_, v] : by_assay) assays.push_back(&v);

  EpinetTrainResult result;
  result.params = epinet_init(cfg);
  EpinetParams& params = result.params;
  ParamStore grads = params.trainable.zeros_like();
  Adam adam;
  Rng rng = Rng(opts.seed).fork("epinet_train");

  for (std::size_t step = 0; step < opts.steps; ++step) {
    // one shared epistemic index across the whole batch
    Rng zrng = Rng(opts.seed).fork("epinet_step_index", step);
    const std::vector<double> z = zrng.normal_vector(cfg.index_dim);

    const auto& pool = *assays[rng.uniform_index(assays.size())];
    std::vector<std::size_t> batch = pool;
    rng.shuffle(batch);
    if (batch.size() > 5) batch.resize(5);

    grads.zero_all();
    double batch_loss = 0.0;
    for (const auto idx : batch) {
      const EpinetRecord& rec = data[idx];
      MlpCache cache;
      const std::vector<double> ft = mlp_forward(rec.latent, z, params.trainable, cfg, &cache);
      const std::vector<double> fp = mlp_forward(rec.latent, z, params.prior, cfg, nullptr);
      double r = 0.0;
      for (std::size_t i = 0; i < cfg.index_dim; ++i)
        r += (ft[i] + cfg.prior_scale * fp[i]) * z[i];
      const double pred = rec.y_base + r;
      batch_loss += affinity::huber_loss(rec.y_true, pred, opts.huber_delta) /
                    static_cast<double>(batch.size());
      const double dr = huber_grad(rec.y_true, pred, opts.huber_delta) /
                        static_cast<double>(batch.size());
      std::vector<double> dfeat(cfg.index_dim);
      for (std::size_t i = 0; i < cfg.index_dim; ++i) dfeat[i] = dr * z[i];
      mlp_backward(dfeat, cache, params.trainable, cfg, grads);
    }
    result.step_loss.push_back(batch_loss);
    adam.step(params.trainable, grads, opts.learning_rate);
  }
  return result;
}

EpinetPosterior sample_posterior(const std::vector<std::vector<double>>& latents,
                                 const std::vector<double>& y_base, std::size_t k,
                                 std::uint64_t seed, const EpinetParams& params,
                                 const EpinetConfig& cfg) {
  if (latents.size() != y_base.size()) throw InputError("sample_posterior: size mismatch");
  const std::size_t n = latents.size();
  EpinetPosterior post;
  post.base = y_base;
  post.samples = Mat(k, n);
  for (std::size_t row = 0; row < k; ++row) {
    Rng zrng = Rng(seed).fork("epinet_index", row); // row depends only on (seed, row)
    const std::vector<double> z = zrng.normal_vector(cfg.index_dim);
    for (std::size_t col = 0; col < n; ++col)
      post.samples(row, col) = y_base[col] + epinet_forward(latents[col], z, params, cfg);
  }
  return post;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw InputError("quantile: empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

MarginalStats marginal_stats(const EpinetPosterior& posterior, std::size_t column) {
  const std::size_t k = posterior.samples.rows;
  if (column >= posterior.samples.cols) throw InputError("marginal_stats: column out of range");
  if (k < 1) throw InputError("marginal_stats: empty posterior");
  std::vector<double> col(k);
  for (std::size_t r = 0; r < k; ++r) col[r] = posterior.samples(r, column);

  MarginalStats out;
  double mean = 0.0;
  for (const double v : col) mean += v;
  mean /= static_cast<double>(k);
  out.mean = mean;
  if (k >= 2) {
    double ss = 0.0;
    for (const double v : col) ss += (v - mean) * (v - mean);
    out.std_dev = std::sqrt(ss / static_cast<double>(k - 1));
  }
  if (k >= 4) out.iqr = quantile(col, 0.75) - quantile(col, 0.25);
  return out;
}

metrics::CalibrationReport iqr_calibration(const std::vector<double>& predictions,
                                           const std::vector<double>& truths,
                                           const std::vector<double>& iqrs,
                                           const std::vector<double>& edges) {
  if (predictions.size() != truths.size() || predictions.size() != iqrs.size())
    throw InputError("iqr_calibration: size mismatch");
  std::vector<bool> success(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i)
    success[i] = std::abs(predictions[i] - truths[i]) <= 1.0; // within 1 log unit
  return metrics::entropy_calibration(iqrs, success, edges);
}

}  // namespace coarsebind::epinet
