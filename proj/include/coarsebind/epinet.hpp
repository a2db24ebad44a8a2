#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "coarsebind/geom.hpp"
#include "coarsebind/metrics.hpp"
#include "coarsebind/tensor.hpp"

namespace coarsebind::epinet {

struct EpinetConfig {
  std::size_t index_dim = 256;
  std::size_t n_samples = 1000; // posterior sample paths
  double prior_scale = 1.0;     // beta on the frozen prior network
  std::vector<std::size_t> hidden = {64, 64};
  bool index_in_body = true; // feed z to the MLP body, not only the head
  std::size_t latent_dim = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Trainable network plus a frozen random prior of the same topology. Both
// map concat(g[, z]) through an MLP to an index_dim feature vector whose
// inner product with z is the residual contribution.
struct EpinetParams {
  ParamStore trainable;
  ParamStore prior;
};

EpinetParams epinet_init(const EpinetConfig& cfg);

// r(g, z) = f_theta(g, z) . z + prior_scale * f_phi(g, z) . z
double epinet_forward(const std::vector<double>& g, const std::vector<double>& z,
                      const EpinetParams& params, const EpinetConfig& cfg);

// Feature vector of one network before the inner product with z.
std::vector<double> epinet_features(const std::vector<double>& g, const std::vector<double>& z,
                                    const ParamStore& net, const EpinetConfig& cfg);

struct EpinetRecord {
  std::string assay_id;
  std::vector<double> latent; // frozen g
  double y_base = 0.0;        // frozen base prediction
  double y_true = 0.0;
};

struct EpinetTrainOptions {
  std::size_t steps = 2000;
  double learning_rate = 3e-3;
  double huber_delta = 0.5;
  std::uint64_t seed = 0;
};

struct EpinetTrainResult {
  EpinetParams params;
  std::vector<double> step_loss;
};

// Huber regression of y against y_base + r(sg(g), z), one fresh shared z
// per step; the prior network stays frozen.
EpinetTrainResult train_epinet(const std::vector<EpinetRecord>& data, const EpinetConfig& cfg,
                               const EpinetTrainOptions& opts);

struct EpinetPosterior {
  Mat samples;              // K x N, row k shares one epistemic index
  std::vector<double> base; // y_base per column
};

// K joint sample paths over N complexes. Row k's index vector depends only
// on (seed, k), so any prefix of a longer run matches a shorter run.
EpinetPosterior sample_posterior(const std::vector<std::vector<double>>& latents,
                                 const std::vector<double>& y_base, std::size_t k,
                                 std::uint64_t seed, const EpinetParams& params,
                                 const EpinetConfig& cfg);

struct MarginalStats {
  double mean = 0.0;
  double std_dev = 0.0;
  std::optional<double> iqr; // needs K >= 4, linear-interpolation quantiles
};

MarginalStats marginal_stats(const EpinetPosterior& posterior, std::size_t column);

// Linear-interpolation quantile of an unsorted sample.
double quantile(std::vector<double> values, double q);

// Success = |prediction - truth| <= 1 log unit, stratified by IQR bins.
metrics::CalibrationReport iqr_calibration(const std::vector<double>& predictions,
                                           const std::vector<double>& truths,
                                           const std::vector<double>& iqrs,
                                           const std::vector<double>& edges);

}  // namespace coarsebind::epinet
