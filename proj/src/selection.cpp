#include "coarsebind/selection.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "coarsebind/errors.hpp"
#include "coarsebind/rng.hpp"

namespace coarsebind::select {

Selection greedy_select(const std::vector<double>& predictions,
                        const std::vector<std::string>& ids, const std::vector<bool>& available,
                        std::size_t batch) {
  if (predictions.size() != ids.size() || predictions.size() != available.size())
    throw InputError("greedy_select: size mismatch");
  std::vector<std::size_t> cand;
  for (std::size_t i = 0; i < available.size(); ++i)
    if (available[i]) cand.push_back(i);
  std::sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
    if (predictions[a] != predictions[b]) return predictions[a] > predictions[b];
    return ids[a] < ids[b];
  });
  Selection out;
  out.short_batch = cand.size() < batch;
  const std::size_t take = std::min(batch, cand.size());
  out.indices.assign(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take));
  return out;
}

double emax(const Mat& samples, const std::vector<std::size_t>& subset) {
  if (subset.empty()) throw InputError("emax: empty subset");
  if (samples.rows == 0) throw InputError("emax: empty posterior");
  for (const auto j : subset)
    if (j >= samples.cols) throw InputError("emax: column out of range");
  double total = 0.0;
  for (std::size_t k = 0; k < samples.rows; ++k) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto j : subset) best = std::max(best, samples(k, j));
    total += best;
  }
  return total / static_cast<double>(samples.rows);
}

Selection emax_select(const Mat& samples, const std::vector<std::string>& ids,
                      const std::vector<bool>& available, std::size_t batch) {
  if (samples.cols != ids.size() || samples.cols != available.size())
    throw InputError("emax_select: size mismatch");
  const std::size_t k = samples.rows;

  Selection out;
  std::vector<bool> chosen(samples.cols, false);
  // per-path running max over the current batch
  std::vector<double> path_max(k, -std::numeric_limits<double>::infinity());

  for (std::size_t round = 0; round < batch; ++round) {
    std::size_t best_j = samples.cols;
    double best_val = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < samples.cols; ++j) {
      if (!available[j] || chosen[j]) continue;
      double acc = 0.0;
      for (std::size_t r = 0; r < k; ++r) acc += std::max(path_max[r], samples(r, j));
      acc /= static_cast<double>(k);
      if (acc > best_val || (acc == best_val && best_j < samples.cols && ids[j] < ids[best_j])) {
        best_val = acc;
        best_j = j;
      }
    }
    if (best_j == samples.cols) {
      out.short_batch = true;
      break;
    }
    chosen[best_j] = true;
    out.indices.push_back(best_j);
    for (std::size_t r = 0; r < k; ++r) path_max[r] = std::max(path_max[r], samples(r, best_j));
  }
  return out;
}

Mat pathwise_update(const Mat& samples, const std::vector<std::pair<std::size_t, double>>& observed,
                    double sigma_obs, std::uint64_t seed, bool zero_noise) {
  if (observed.empty()) return samples;
  const std::size_t k = samples.rows;
  const std::size_t n = samples.cols;
  if (k < 2) throw InputError("pathwise_update: need at least 2 paths for covariance");
  const std::size_t m = observed.size();
  for (const auto& [idx, _] : observed)
    if (idx >= n) throw InputError("pathwise_update: observed index out of range");
  if (sigma_obs < 0) throw InputError("pathwise_update: negative observation noise");

  // column means
  std::vector<double> mean(n, 0.0);
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t c = 0; c < n; ++c) mean[c] += samples(r, c);
  for (auto& v : mean) v /= static_cast<double>(k);

  // empirical covariances against the observed columns, 1/(K-1) normalization
  Eigen::MatrixXd kobs(m, m);
  Eigen::MatrixXd kstar(n, m);
  const double norm = 1.0 / static_cast<double>(k - 1);
  for (std::size_t a = 0; a < m; ++a) {
    const std::size_t ca = observed[a].first;
    for (std::size_t b = 0; b < m; ++b) {
      const std::size_t cb = observed[b].first;
      double acc = 0.0;
      for (std::size_t r = 0; r < k; ++r)
        acc += (samples(r, ca) - mean[ca]) * (samples(r, cb) - mean[cb]);
      kobs(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = acc * norm;
    }
    for (std::size_t c = 0; c < n; ++c) {
      double acc = 0.0;
      for (std::size_t r = 0; r < k; ++r)
        acc += (samples(r, c) - mean[c]) * (samples(r, ca) - mean[ca]);
      kstar(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(a)) = acc * norm;
    }
  }

  Eigen::MatrixXd a = kobs + sigma_obs * sigma_obs * Eigen::MatrixXd::Identity(
                                 static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (!lu.isInvertible())
    throw NumericError(
        "pathwise_update: singular covariance; use sigma_obs > 0 for degenerate paths");
  const Eigen::MatrixXd gain = kstar * lu.inverse(); // N x m

  Mat out = samples;
  Rng rng = Rng(seed).fork("pathwise_noise");
  Eigen::VectorXd resid(m);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t aidx = 0; aidx < m; ++aidx) {
      const auto& [col, y_true] = observed[aidx];
      double eps = 0.0;
      if (!zero_noise && sigma_obs > 0) eps = sigma_obs * rng.normal();
      resid(static_cast<Eigen::Index>(aidx)) = y_true - samples(r, col) - eps;
    }
    const Eigen::VectorXd delta = gain * resid;
    for (std::size_t c = 0; c < n; ++c) out(r, c) += delta(static_cast<Eigen::Index>(c));
  }
  return out;
}

DMTAState dmta_simulate(const SelectionPool& pool, const Mat& posterior, Strategy strategy,
                        const DMTAConfig& cfg, const std::vector<double>* external_predictions) {
  const std::size_t n = pool.items.size();
  if (n == 0) throw InputError("dmta_simulate: empty pool");
  const bool continual = strategy == Strategy::ContinualGreedy || strategy == Strategy::ContinualEMAX;
  const bool needs_posterior = continual || strategy == Strategy::ContinualEMAX;
  if (needs_posterior && (posterior.cols != n || posterior.rows < 2))
    throw InputError("dmta_simulate: posterior shape does not match the pool");
  if (strategy == Strategy::StaticExternal &&
      (!external_predictions || external_predictions->size() != n))
    throw InputError("dmta_simulate: StaticExternal needs a prediction per item");

  std::vector<std::string> ids(n);
  double pool_max = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    ids[i] = pool.items[i].id;
    pool_max = std::max(pool_max, pool.items[i].y_true);
  }

  DMTAState state;
  std::vector<bool> available(n, true);
  Mat current = posterior;
  double best_seen = -std::numeric_limits<double>::infinity();

  for (std::size_t cycle = 0; cycle < cfg.cycles; ++cycle) {
    std::size_t left = 0;
    for (const auto a : available) left += a ? 1 : 0;
    if (left == 0) {
      state.exhausted_early = true;
      break;
    }

    Selection sel;
    switch (strategy) {
      case Strategy::Greedy: {
        std::vector<double> preds(n);
        for (std::size_t i = 0; i < n; ++i) preds[i] = pool.items[i].y_pred;
        sel = greedy_select(preds, ids, available, cfg.batch);
        break;
      }
      case Strategy::StaticExternal:
        sel = greedy_select(*external_predictions, ids, available, cfg.batch);
        break;
      case Strategy::OracleGreedy: {
        std::vector<double> preds(n);
        for (std::size_t i = 0; i < n; ++i) preds[i] = pool.items[i].y_true;
        sel = greedy_select(preds, ids, available, cfg.batch);
        break;
      }
      case Strategy::ContinualGreedy: {
        std::vector<double> preds(n, 0.0);
        for (std::size_t c = 0; c < n; ++c) {
          for (std::size_t r = 0; r < current.rows; ++r) preds[c] += current(r, c);
          preds[c] /= static_cast<double>(current.rows);
        }
        sel = greedy_select(preds, ids, available, cfg.batch);
        break;
      }
      case Strategy::ContinualEMAX:
        sel = emax_select(current, ids, available, cfg.batch);
        break;
    }
    if (sel.indices.empty()) {
      state.exhausted_early = true;
      break;
    }

    std::vector<std::string> picked;
    std::vector<std::pair<std::size_t, double>> cycle_obs;
    for (const auto i : sel.indices) {
      available[i] = false;
      picked.push_back(ids[i]);
      const double y = pool.items[i].y_true; // assay readout
      state.observed.emplace_back(ids[i], y);
      best_seen = std::max(best_seen, y);
      cycle_obs.emplace_back(i, y);
    }
    state.selected.push_back(std::move(picked));
    state.max_gap.push_back(pool_max - best_seen);

    if (continual)
      current = pathwise_update(current, cycle_obs, cfg.sigma_obs,
                                cfg.seed + 1000003 * (cycle + 1), cfg.zero_noise);
    if (sel.short_batch) {
      state.exhausted_early = true;
      break;
    }
  }
  return state;
}

}  // namespace coarsebind::select
