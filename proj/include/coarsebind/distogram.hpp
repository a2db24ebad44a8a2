#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "coarsebind/complexes.hpp"
#include "coarsebind/geom.hpp"

namespace coarsebind::distogram {

// 64 distance bins: 62 interior bins evenly spaced on [2, 22) A plus the
// covalent (<2 A) and long-range (>=22 A) boundary bins. Bin indices are
// 1-based throughout the public API.
struct BinConfig {
  int n_bins = 64;
  double lower = 2.0;
  double upper = 22.0;
  double covalent_center = 1.5;
  double longrange_center = 24.5;

  double width() const { return (upper - lower) / static_cast<double>(n_bins - 2); }
};

struct PairTypeWeights {
  double w_ll = 1.0;
  double w_lp = 1.0;
  double w_pp = 1.0;
};

// Per-pair categorical distributions, flat row-major [i][j][b], b 0-based
// in storage.
struct Distogram {
  std::size_t n_tokens = 0;
  std::vector<double> probs; // n * n * n_bins
  std::vector<TokenKind> kinds;
  BinConfig bins;

  double* slice(std::size_t i, std::size_t j) {
    return probs.data() + (i * n_tokens + j) * static_cast<std::size_t>(bins.n_bins);
  }
  const double* slice(std::size_t i, std::size_t j) const {
    return probs.data() + (i * n_tokens + j) * static_cast<std::size_t>(bins.n_bins);
  }
};

struct EntropyReport {
  std::optional<double> h_ll;
  std::optional<double> h_lp;
  std::optional<double> h_pp;
  std::vector<std::size_t> pocket;
};

struct IMat {
  std::size_t rows = 0, cols = 0;
  std::vector<int> v;
  IMat() = default;
  IMat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0) {}
  int& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  int operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

// d < 2 -> 1, d >= 22 -> 64, interior bins left-closed/right-open.
int bin_index(double d, const BinConfig& cfg = {});

// 1 -> 1.5 A, 64 -> 24.5 A, interior -> midpoint of the bin.
double bin_center(int b, const BinConfig& cfg = {});

std::vector<double> bin_centers(const BinConfig& cfg = {});

// Probability-weighted average of bin centers.
double expected_distance(const double* p, const BinConfig& cfg = {});
double expected_distance(const std::vector<double>& p, const BinConfig& cfg = {});

// Shannon entropy normalized by log(n_bins), in [0, 1].
double pairwise_entropy(const double* p, const BinConfig& cfg = {});
double pairwise_entropy(const std::vector<double>& p, const BinConfig& cfg = {});

// Expected distances of every pair slice.
Mat expected_distance_matrix(const Distogram& d);

// Mean normalized entropy per pair class: LL over ordered ligand pairs,
// LP over ligand x pocket, PP over ordered pocket pairs. Classes without
// any pairs are reported absent.
EntropyReport aggregate_entropy(const Distogram& d, const std::vector<std::size_t>& pocket);

// Weighted categorical cross-entropy over masked pairs. Logits are flat
// [i][j][b]; target bins are 1-based; mask must exclude the diagonal.
double structure_loss(const std::vector<double>& logits, std::size_t n, const IMat& target_bins,
                      const PairTypeWeights& w, const std::vector<TokenKind>& kinds,
                      const std::vector<bool>& mask);

// Same value, plus d(loss)/d(logits) for training.
double structure_loss_grad(const std::vector<double>& logits, std::size_t n,
                           const IMat& target_bins, const PairTypeWeights& w,
                           const std::vector<TokenKind>& kinds, const std::vector<bool>& mask,
                           std::vector<double>& dlogits);

// Elementwise bin_index of a distance matrix.
IMat target_distogram(const Mat& distmat, const BinConfig& cfg = {});

// Softmax of per-pair logits into a Distogram.
Distogram distogram_from_logits(const std::vector<double>& logits, std::size_t n,
                                const std::vector<TokenKind>& kinds, const BinConfig& cfg = {});

// One-hot distogram of the true distances (delta peaks on the target bins).
Distogram delta_distogram(const Mat& distmat, const std::vector<TokenKind>& kinds,
                          const BinConfig& cfg = {});

// probs'[i][j] = probs'[j][i] = renormalized mean of the two input slices.
Distogram symmetrize(const Distogram& d);

// Mask for structure_loss: everything but the diagonal.
std::vector<bool> offdiagonal_mask(std::size_t n);

}  // namespace coarsebind::distogram
