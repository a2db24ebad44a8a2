#include "coarsebind/distogram.hpp"

#include <algorithm>
#include <cmath>

#include "coarsebind/errors.hpp"

namespace coarsebind::distogram {

int bin_index(double d, const BinConfig& cfg) {
  if (!(d >= 0.0)) throw InputError("bin_index: distance must be nonnegative");
  if (d < cfg.lower) return 1;
  if (d >= cfg.upper) return cfg.n_bins;
  auto k = static_cast<int>(std::floor((d - cfg.lower) / cfg.width()));
  k = std::clamp(k, 0, cfg.n_bins - 3);
  return 2 + k;
}

double bin_center(int b, const BinConfig& cfg) {
  if (b < 1 || b > cfg.n_bins) throw InputError("bin_center: bin out of range");
  if (b == 1) return cfg.covalent_center;
  if (b == cfg.n_bins) return cfg.longrange_center;
  return cfg.lower + (static_cast<double>(b) - 1.5) * cfg.width();
}

std::vector<double> bin_centers(const BinConfig& cfg) {
  std::vector<double> c(static_cast<std::size_t>(cfg.n_bins));
  for (int b = 1; b <= cfg.n_bins; ++b) c[static_cast<std::size_t>(b - 1)] = bin_center(b, cfg);
  return c;
}

namespace {

void check_distribution(const double* p, int n_bins) {
  double sum = 0.0;
  for (int b = 0; b < n_bins; ++b) {
    if (p[b] < -1e-12 || !std::isfinite(p[b]))
      throw InputError("probability vector has negative or non-finite entries");
    sum += p[b];
  }
  if (std::abs(sum - 1.0) > 1e-4) throw InputError("probability vector is not normalized");
}

}  // namespace

double expected_distance(const double* p, const BinConfig& cfg) {
  check_distribution(p, cfg.n_bins);
  double e = 0.0;
  for (int b = 1; b <= cfg.n_bins; ++b) e += p[b - 1] * bin_center(b, cfg);
  return e;
}

double expected_distance(const std::vector<double>& p, const BinConfig& cfg) {
  if (p.size() != static_cast<std::size_t>(cfg.n_bins))
    throw InputError("expected_distance: wrong vector length");
  return expected_distance(p.data(), cfg);
}

double pairwise_entropy(const double* p, const BinConfig& cfg) {
  check_distribution(p, cfg.n_bins);
  double h = 0.0;
  for (int b = 0; b < cfg.n_bins; ++b)
    if (p[b] > 0.0) h -= p[b] * std::log(p[b]); // 0 log 0 := 0
  return h / std::log(static_cast<double>(cfg.n_bins));
}

double pairwise_entropy(const std::vector<double>& p, const BinConfig& cfg) {
  if (p.size() != static_cast<std::size_t>(cfg.n_bins))
    throw InputError("pairwise_entropy: wrong vector length");
  return pairwise_entropy(p.data(), cfg);
}

Mat expected_distance_matrix(const Distogram& d) {
  Mat out(d.n_tokens, d.n_tokens);
  for (std::size_t i = 0; i < d.n_tokens; ++i)
    for (std::size_t j = 0; j < d.n_tokens; ++j)
      out(i, j) = expected_distance(d.slice(i, j), d.bins);
  return out;
}

EntropyReport aggregate_entropy(const Distogram& d, const std::vector<std::size_t>& pocket) {
  std::vector<std::size_t> lig;
  for (std::size_t i = 0; i < d.kinds.size(); ++i)
    if (d.kinds[i] == TokenKind::Ligand) lig.push_back(i);
  if (lig.empty()) throw InputError("aggregate_entropy: no ligand tokens");
  for (const auto j : pocket)
    if (j >= d.kinds.size() || d.kinds[j] != TokenKind::Protein)
      throw InputError("aggregate_entropy: pocket must contain protein token indices");

  EntropyReport rep;
  rep.pocket = pocket;

  if (lig.size() >= 2) {
    double h = 0.0;
    for (const auto i : lig)
      for (const auto j : lig)
        if (i != j) h += pairwise_entropy(d.slice(i, j), d.bins);
    rep.h_ll = h / (static_cast<double>(lig.size()) * static_cast<double>(lig.size() - 1));
  }
  if (!pocket.empty()) {
    double h = 0.0;
    for (const auto i : lig)
      for (const auto j : pocket) h += pairwise_entropy(d.slice(i, j), d.bins);
    rep.h_lp = h / (static_cast<double>(lig.size()) * static_cast<double>(pocket.size()));
    if (pocket.size() >= 2) {
      double hpp = 0.0;
      for (const auto i : pocket)
        for (const auto j : pocket)
          if (i != j) hpp += pairwise_entropy(d.slice(i, j), d.bins);
      rep.h_pp =
          hpp / (static_cast<double>(pocket.size()) * static_cast<double>(pocket.size() - 1));
    }
  }
  return rep;
}

namespace {

double pair_weight(TokenKind a, TokenKind b, const PairTypeWeights& w) {
  if (a == TokenKind::Ligand && b == TokenKind::Ligand) return w.w_ll;
  if (a == TokenKind::Protein && b == TokenKind::Protein) return w.w_pp;
  return w.w_lp;
}

}  // namespace

double structure_loss_grad(const std::vector<double>& logits, std::size_t n,
                           const IMat& target_bins, const PairTypeWeights& w,
                           const std::vector<TokenKind>& kinds, const std::vector<bool>& mask,
                           std::vector<double>& dlogits) {
  const BinConfig cfg{};
  const auto nb = static_cast<std::size_t>(cfg.n_bins);
  if (logits.size() != n * n * nb) throw InputError("structure_loss: logits shape mismatch");
  if (target_bins.rows != n || target_bins.cols != n || kinds.size() != n || mask.size() != n * n)
    throw InputError("structure_loss: shape mismatch");
  if (w.w_ll < 0 || w.w_lp < 0 || w.w_pp < 0 || (w.w_ll == 0 && w.w_lp == 0 && w.w_pp == 0))
    throw InputError("structure_loss: weights must be nonnegative with at least one positive");

  const bool want_grad = !dlogits.empty();
  if (want_grad && dlogits.size() != logits.size())
    throw InputError("structure_loss: gradient buffer shape mismatch");

  double weight_sum = 0.0;
  double loss_sum = 0.0;
  std::vector<double> p(nb);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask[i * n + j]) continue;
      if (i == j) throw InputError("structure_loss: mask must exclude the diagonal");
      const double wij = pair_weight(kinds[i], kinds[j], w);
      if (wij == 0.0) {
        weight_sum += 0.0;
        continue;
      }
      const double* z = logits.data() + (i * n + j) * nb;
      const int target = target_bins(i, j);
      if (target < 1 || target > cfg.n_bins) throw InputError("structure_loss: target bin range");
      double zmax = z[0];
      for (std::size_t b = 1; b < nb; ++b) zmax = std::max(zmax, z[b]);
      double sum = 0.0;
      for (std::size_t b = 0; b < nb; ++b) {
        p[b] = std::exp(z[b] - zmax);
        sum += p[b];
      }
      const double lse = zmax + std::log(sum);
      loss_sum += wij * (lse - z[static_cast<std::size_t>(target - 1)]);
      weight_sum += wij;
      if (want_grad) {
        double* g = dlogits.data() + (i * n + j) * nb;
        for (std::size_t b = 0; b < nb; ++b) g[b] = wij * (p[b] / sum);
        g[static_cast<std::size_t>(target - 1)] -= wij;
      }
    }
  }
  if (weight_sum <= 0.0) throw InputError("structure_loss: empty or fully down-weighted mask");
  if (want_grad) {
    for (auto& g : dlogits) g /= weight_sum;
  }
  return loss_sum / weight_sum;
}

double structure_loss(const std::vector<double>& logits, std::size_t n, const IMat& target_bins,
                      const PairTypeWeights& w, const std::vector<TokenKind>& kinds,
                      const std::vector<bool>& mask) {
  std::vector<double> no_grad;
  return structure_loss_grad(logits, n, target_bins, w, kinds, mask, no_grad);
}

IMat target_distogram(const Mat& distmat, const BinConfig& cfg) {
  if (distmat.rows != distmat.cols) throw InputError("target_distogram: matrix must be square");
  IMat out(distmat.rows, distmat.cols);
  for (std::size_t i = 0; i < distmat.rows; ++i)
    for (std::size_t j = 0; j < distmat.cols; ++j) out(i, j) = bin_index(distmat(i, j), cfg);
  return out;
}

Distogram distogram_from_logits(const std::vector<double>& logits, std::size_t n,
                                const std::vector<TokenKind>& kinds, const BinConfig& cfg) {
  const auto nb = static_cast<std::size_t>(cfg.n_bins);
  if (logits.size() != n * n * nb) throw InputError("distogram_from_logits: shape mismatch");
  Distogram d;
  d.n_tokens = n;
  d.kinds = kinds;
  d.bins = cfg;
  d.probs.resize(n * n * nb);
  for (std::size_t ij = 0; ij < n * n; ++ij) {
    const double* z = logits.data() + ij * nb;
    double* p = d.probs.data() + ij * nb;
    double zmax = z[0];
    for (std::size_t b = 1; b < nb; ++b) zmax = std::max(zmax, z[b]);
    double sum = 0.0;
    for (std::size_t b = 0; b < nb; ++b) {
      p[b] = std::exp(z[b] - zmax);
      sum += p[b];
    }
    for (std::size_t b = 0; b < nb; ++b) p[b] /= sum;
  }
  return d;
}

Distogram delta_distogram(const Mat& distmat, const std::vector<TokenKind>& kinds,
                          const BinConfig& cfg) {
  if (distmat.rows != kinds.size()) throw InputError("delta_distogram: shape mismatch");
  const std::size_t n = distmat.rows;
  const auto nb = static_cast<std::size_t>(cfg.n_bins);
  Distogram d;
  d.n_tokens = n;
  d.kinds = kinds;
  d.bins = cfg;
  d.probs.assign(n * n * nb, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      d.slice(i, j)[static_cast<std::size_t>(bin_index(distmat(i, j), cfg) - 1)] = 1.0;
  return d;
}

Distogram symmetrize(const Distogram& d) {
  Distogram out = d;
  const auto nb = static_cast<std::size_t>(d.bins.n_bins);
  for (std::size_t i = 0; i < d.n_tokens; ++i) {
    for (std::size_t j = i; j < d.n_tokens; ++j) {
      const double* a = d.slice(i, j);
      const double* b = d.slice(j, i);
      double sum = 0.0;
      std::vector<double> m(nb);
      for (std::size_t k = 0; k < nb; ++k) {
        m[k] = 0.5 * (a[k] + b[k]);
        sum += m[k];
      }
      if (sum <= 0.0) throw InputError("symmetrize: degenerate slice");
      double* oa = out.slice(i, j);
      double* ob = out.slice(j, i);
      for (std::size_t k = 0; k < nb; ++k) {
        oa[k] = m[k] / sum;
        ob[k] = m[k] / sum;
      }
    }
  }
  return out;
}

std::vector<bool> offdiagonal_mask(std::size_t n) {
  std::vector<bool> mask(n * n, true);
  for (std::size_t i = 0; i < n; ++i) mask[i * n + i] = false;
  return mask;
}

}  // namespace coarsebind::distogram
