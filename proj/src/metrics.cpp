#include "coarsebind/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "coarsebind/errors.hpp"

namespace coarsebind::metrics {

Alignment kabsch_align(const Coords& pred, const Coords& truth,
                       const std::vector<double>& weights) {
  const std::size_t m = pred.size();
  if (m < 3) throw InputError("kabsch_align: need at least 3 points");
  if (truth.size() != m || weights.size() != m) throw InputError("kabsch_align: size mismatch");

  double wsum = 0.0;
  Vec3 cp{0, 0, 0}, ct{0, 0, 0};
  for (std::size_t i = 0; i < m; ++i) {
    if (weights[i] < 0) throw InputError("kabsch_align: negative weight");
    wsum += weights[i];
    cp = cp + weights[i] * pred[i];
    ct = ct + weights[i] * truth[i];
  }
  if (wsum <= 0) throw InputError("kabsch_align: zero total weight");
  cp = (1.0 / wsum) * cp;
  ct = (1.0 / wsum) * ct;

  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d scatter_p = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d scatter_t = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < m; ++i) {
    const Vec3 a = pred[i] - cp;
    const Vec3 b = truth[i] - ct;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        h(r, c) += weights[i] * a[c] * b[r]; // maps pred deviations to truth
        scatter_p(r, c) += weights[i] * a[r] * a[c];
        scatter_t(r, c) += weights[i] * b[r] * b[c];
      }
    }
  }

  // rank of the centered clouds: collinear input has no unique rotation
  const auto rank2 = [](const Eigen::Matrix3d& s) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(s);
    const auto ev = es.eigenvalues();
    return ev(1) > 1e-9 * std::max(ev(2), 1e-300);
  };
  if (!rank2(scatter_p) || !rank2(scatter_t))
    throw InputError("kabsch_align: degenerate (collinear) point cloud");

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((u * v.transpose()).determinant() < 0) d(2, 2) = -1.0;
  const Eigen::Matrix3d rot = u * d * v.transpose();

  Alignment out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.rotation[r][c] = rot(r, c);
  // x -> R (x - cp) + ct
  for (int r = 0; r < 3; ++r) {
    out.translation[r] = ct[r];
    for (int c = 0; c < 3; ++c) out.translation[r] -= rot(r, c) * cp[c];
  }

  double sq = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const Vec3 mapped = out.apply(pred[i]);
    const Vec3 diff = mapped - truth[i];
    sq += weights[i] * dot(diff, diff);
  }
  out.weighted_rmsd = std::sqrt(sq / wsum);
  return out;
}

namespace {

Coords mirrored(const Coords& xs) {
  Coords out = xs;
  for (auto& p : out) p[0] = -p[0];
  return out;
}

// truth-structure pocket: protein tokens strictly within 15 A of any ligand atom
std::vector<std::size_t> truth_pocket(const Coords& truth, const std::vector<TokenKind>& kinds) {
  std::vector<std::size_t> lig, out;
  for (std::size_t i = 0; i < kinds.size(); ++i)
    if (kinds[i] == TokenKind::Ligand) lig.push_back(i);
  for (std::size_t j = 0; j < kinds.size(); ++j) {
    if (kinds[j] != TokenKind::Protein) continue;
    for (const auto i : lig) {
      if (distance(truth[i], truth[j]) < 15.0) {
        out.push_back(j);
        break;
      }
    }
  }
  return out;
}

double ligand_rmsd_one(const Coords& pred, const Coords& truth,
                       const std::vector<std::size_t>& lig,
                       const std::vector<std::size_t>& context) {
  Coords p, t;
  for (const auto i : context) {
    p.push_back(pred[i]);
    t.push_back(truth[i]);
  }
  const Alignment a = kabsch_align(p, t, std::vector<double>(context.size(), 1.0));
  double sq = 0.0;
  for (const auto i : lig) {
    const Vec3 diff = a.apply(pred[i]) - truth[i];
    sq += dot(diff, diff);
  }
  return std::sqrt(sq / static_cast<double>(lig.size()));
}

}  // namespace

RmsdResult ligand_rmsd(const Coords& pred, const Coords& truth,
                       const std::vector<TokenKind>& kinds, bool chirality_blind) {
  if (pred.size() != truth.size() || pred.size() != kinds.size())
    throw InputError("ligand_rmsd: size mismatch");
  std::vector<std::size_t> lig;
  for (std::size_t i = 0; i < kinds.size(); ++i)
    if (kinds[i] == TokenKind::Ligand) lig.push_back(i);
  if (lig.empty()) throw InputError("ligand_rmsd: no ligand tokens");

  RmsdResult res;
  std::vector<std::size_t> context = lig;
  const std::vector<std::size_t> pocket = truth_pocket(truth, kinds);
  if (pocket.empty())
    res.pocket_missing = true;
  else
    context.insert(context.end(), pocket.begin(), pocket.end());

  res.rmsd = ligand_rmsd_one(pred, truth, lig, context);
  if (chirality_blind)
    res.rmsd = std::min(res.rmsd, ligand_rmsd_one(mirrored(pred), truth, lig, context));
  return res;
}

namespace {

struct AutomorphismSearch {
  std::size_t n;
  const std::vector<std::string>& labels;
  std::vector<std::vector<std::pair<std::size_t, int>>> adj; // (neighbor, order)
  std::size_t cap;
  std::vector<std::vector<std::size_t>> found;
  std::vector<std::size_t> perm;
  std::vector<bool> used;
  bool capped = false;

  AutomorphismSearch(std::size_t n_, const std::vector<Bond>& bonds,
                     const std::vector<std::string>& labels_, std::size_t cap_)
      : n(n_), labels(labels_), adj(n_), cap(cap_), perm(n_), used(n_, false) {
    for (const Bond& b : bonds) {
      adj[b.a].emplace_back(b.b, b.order);
      adj[b.b].emplace_back(b.a, b.order);
    }
  }

  int bond_order(std::size_t a, std::size_t b) const {
    for (const auto& [nb, order] : adj[a])
      if (nb == b) return order;
    return 0;
  }

  void search(std::size_t v) {
    if (capped) return;
    if (v == n) {
      found.push_back(perm);
      if (found.size() >= cap) capped = true;
      return;
    }
    for (std::size_t cand = 0; cand < n; ++cand) {
      if (used[cand]) continue;
      if (labels[cand] != labels[v]) continue;
      if (adj[cand].size() != adj[v].size()) continue;
      // edges to already-mapped vertices must be preserved with equal order
      bool ok = true;
      for (std::size_t u = 0; u < v && ok; ++u)
        ok = bond_order(v, u) == bond_order(cand, perm[u]);
      if (!ok) continue;
      perm[v] = cand;
      used[cand] = true;
      search(v + 1);
      used[cand] = false;
      if (capped) return;
    }
  }
};

}  // namespace

std::vector<std::vector<std::size_t>> ligand_automorphisms(
    std::size_t n_vertices, const std::vector<Bond>& bonds,
    const std::vector<std::string>& elements, std::size_t cap) {
  if (elements.size() != n_vertices) throw InputError("ligand_automorphisms: label count mismatch");
  for (const Bond& b : bonds)
    if (b.a >= n_vertices || b.b >= n_vertices)
      throw InputError("ligand_automorphisms: bond endpoint out of range");
  AutomorphismSearch s(n_vertices, bonds, elements, cap);
  s.search(0);
  if (s.capped) return {};
  return s.found;
}

SymRmsdResult symmetry_corrected_rmsd(const Coords& pred, const Coords& truth,
                                      const std::vector<TokenKind>& kinds,
                                      const std::vector<Bond>& ligand_bonds,
                                      const std::vector<std::string>& elements,
                                      bool chirality_blind, std::size_t cap) {
  std::vector<std::size_t> lig;
  for (std::size_t i = 0; i < kinds.size(); ++i)
    if (kinds[i] == TokenKind::Ligand) lig.push_back(i);
  if (lig.size() != elements.size())
    throw InputError("symmetry_corrected_rmsd: element labels must cover the ligand");

  SymRmsdResult res;
  const auto autos = ligand_automorphisms(lig.size(), ligand_bonds, elements, cap);
  if (autos.empty()) {
    res.fallback_uncorrected = true;
    res.rmsd = ligand_rmsd(pred, truth, kinds, chirality_blind).rmsd;
    return res;
  }
  res.n_automorphisms = autos.size();
  double best = std::numeric_limits<double>::infinity();
  for (const auto& sigma : autos) {
    // permute the predicted ligand coordinates: atom v plays the role of sigma(v)
    Coords permuted = pred;
    for (std::size_t v = 0; v < lig.size(); ++v) permuted[lig[sigma[v]]] = pred[lig[v]];
    best = std::min(best, ligand_rmsd(permuted, truth, kinds, chirality_blind).rmsd);
  }
  res.rmsd = best;
  return res;
}

std::optional<double> lddt_pli(const Coords& pred, const Coords& truth,
                               const std::vector<TokenKind>& kinds, double radius,
                               const std::vector<double>& thresholds) {
  if (pred.size() != truth.size() || pred.size() != kinds.size())
    throw InputError("lddt_pli: size mismatch");
  if (!truth.size()) throw InputError("lddt_pli: empty structures");

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    if (kinds[i] != TokenKind::Ligand) continue;
    for (std::size_t j = 0; j < kinds.size(); ++j) {
      if (kinds[j] != TokenKind::Protein) continue;
      if (distance(truth[i], truth[j]) < radius) pairs.emplace_back(i, j);
    }
  }
  if (pairs.empty()) return std::nullopt;

  double score = 0.0;
  for (const double t : thresholds) {
    std::size_t preserved = 0;
    for (const auto& [i, j] : pairs) {
      const double delta = std::abs(distance(pred[i], pred[j]) - distance(truth[i], truth[j]));
      if (delta <= t) ++preserved;
    }
    score += static_cast<double>(preserved) / static_cast<double>(pairs.size());
  }
  return score / static_cast<double>(thresholds.size());
}

SuccessRates success_rates(const std::vector<EvalRecord>& results) {
  if (results.empty()) throw InputError("success_rates: empty input");
  std::size_t a = 0, b = 0;
  for (const auto& r : results) {
    if (r.rmsd < 2.0) {
      ++a;
      if (r.lddt > 0.8) ++b;
    }
  }
  const auto n = static_cast<double>(results.size());
  return {static_cast<double>(a) / n, static_cast<double>(b) / n};
}

CalibrationReport entropy_calibration(const std::vector<double>& h_values,
                                      const std::vector<bool>& successes,
                                      const std::vector<double>& edges) {
  if (h_values.size() != successes.size()) throw InputError("entropy_calibration: size mismatch");
  if (edges.size() < 2) throw InputError("entropy_calibration: need at least one bin");
  CalibrationReport rep;
  rep.bin_edges = edges;
  const std::size_t n_bins = edges.size() - 1;
  rep.counts.assign(n_bins, 0);
  std::vector<std::size_t> wins(n_bins, 0);
  for (std::size_t i = 0; i < h_values.size(); ++i) {
    const double h = h_values[i];
    for (std::size_t b = 0; b < n_bins; ++b) {
      const bool last = b + 1 == n_bins;
      if (h >= edges[b] && (h < edges[b + 1] || (last && h <= edges[b + 1]))) {
        ++rep.counts[b];
        if (successes[i]) ++wins[b];
        break;
      }
    }
  }
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (rep.counts[b] == 0)
      rep.success_rate.push_back(std::nullopt);
    else
      rep.success_rate.push_back(static_cast<double>(wins[b]) /
                                 static_cast<double>(rep.counts[b]));
  }
  return rep;
}

}  // namespace coarsebind::metrics
