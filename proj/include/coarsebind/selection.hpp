#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "coarsebind/geom.hpp"

namespace coarsebind::select {

struct PoolItem {
  std::string id;
  std::vector<double> latent;
  double y_pred = 0.0; // base point prediction
  double y_true = 0.0; // revealed only by the simulator's assay step
};

struct SelectionPool {
  std::vector<PoolItem> items;
};

struct Selection {
  std::vector<std::size_t> indices;
  bool short_batch = false; // fewer available than requested
};

// Top-B available items by point prediction; ties break by ascending id.
Selection greedy_select(const std::vector<double>& predictions,
                        const std::vector<std::string>& ids, const std::vector<bool>& available,
                        std::size_t batch);

// Mean over sample paths of the per-path max over the subset columns.
double emax(const Mat& samples, const std::vector<std::size_t>& subset);

// Greedy batch construction for the expected-max acquisition: grow the
// batch one column at a time, always adding the column that maximizes the
// emax of the augmented set. Ties break by ascending id.
Selection emax_select(const Mat& samples, const std::vector<std::string>& ids,
                      const std::vector<bool>& available, std::size_t batch);

// Per-path conditioning of the sample matrix on observed values using
// empirical covariances (1/(K-1), per-column centering):
//   y_new = y_prior + Kstar (K + sigma^2 I)^-1 (y_true - y_obs_path - eps)
// with eps ~ N(0, sigma^2 I) fresh per path (zero_noise suppresses it).
Mat pathwise_update(const Mat& samples, const std::vector<std::pair<std::size_t, double>>& observed,
                    double sigma_obs, std::uint64_t seed, bool zero_noise = false);

enum class Strategy {
  Greedy,
  ContinualGreedy,
  ContinualEMAX,
  StaticExternal, // external prediction file drives a static greedy arm
  OracleGreedy    // test-only upper bound: greedy on the hidden truth
};

struct DMTAConfig {
  std::size_t cycles = 20;
  std::size_t batch = 5;
  double sigma_obs = 0.5;
  std::uint64_t seed = 0;
  bool zero_noise = false;
};

struct DMTAState {
  std::vector<std::vector<std::string>> selected; // per cycle
  std::vector<std::pair<std::string, double>> observed;
  std::vector<double> max_gap; // per cycle: pool max truth - best observed so far
  bool exhausted_early = false;
};

// Iterated select -> observe -> update loop. Continual strategies condition
// the posterior on each cycle's observations via pathwise_update.
DMTAState dmta_simulate(const SelectionPool& pool, const Mat& posterior, Strategy strategy,
                        const DMTAConfig& cfg,
                        const std::vector<double>* external_predictions = nullptr);

}  // namespace coarsebind::select
