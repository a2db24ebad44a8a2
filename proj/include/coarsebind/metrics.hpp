#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "coarsebind/complexes.hpp"
#include "coarsebind/geom.hpp"

namespace coarsebind::metrics {

struct Alignment {
  std::array<std::array<double, 3>, 3> rotation{}; // proper rotation, det = +1
  Vec3 translation{};
  double weighted_rmsd = 0.0;

  Vec3 apply(const Vec3& x) const {
    Vec3 y{translation};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) y[r] += rotation[r][c] * x[c];
    return y;
  }
};

struct CalibrationReport {
  std::vector<double> bin_edges;
  std::vector<std::size_t> counts;
  std::vector<std::optional<double>> success_rate; // absent for empty bins
};

struct RmsdResult {
  double rmsd = 0.0;
  bool pocket_missing = false; // aligned on the ligand alone
};

// Weighted least-squares superposition of pred onto truth (proper rotation
// only; callers handle mirroring explicitly).
Alignment kabsch_align(const Coords& pred, const Coords& truth,
                       const std::vector<double>& weights);

// Align on ligand + truth-defined 15 A pocket with equal weights, report
// RMSD over ligand tokens only. chirality_blind takes the min over the
// mirrored prediction.
RmsdResult ligand_rmsd(const Coords& pred, const Coords& truth,
                       const std::vector<TokenKind>& kinds, bool chirality_blind = true);

// Element- and bond-preserving automorphisms of the ligand graph. Vertices
// are ligand-local indices. Enumeration stops at `cap`; an empty result
// means the cap was hit.
std::vector<std::vector<std::size_t>> ligand_automorphisms(
    std::size_t n_vertices, const std::vector<Bond>& bonds,
    const std::vector<std::string>& elements, std::size_t cap = 10000);

struct SymRmsdResult {
  double rmsd = 0.0;
  bool fallback_uncorrected = false; // automorphism cap hit
  std::size_t n_automorphisms = 0;
};

// Min over ligand-graph automorphisms of ligand_rmsd under the permuted
// correspondence. Bonds use ligand-local vertex indices.
SymRmsdResult symmetry_corrected_rmsd(const Coords& pred, const Coords& truth,
                                      const std::vector<TokenKind>& kinds,
                                      const std::vector<Bond>& ligand_bonds,
                                      const std::vector<std::string>& elements,
                                      bool chirality_blind = true, std::size_t cap = 10000);

// LDDT restricted to ligand-protein pairs within `radius` in the truth
// structure; fraction preserved averaged over the thresholds.
std::optional<double> lddt_pli(const Coords& pred, const Coords& truth,
                               const std::vector<TokenKind>& kinds, double radius = 6.0,
                               const std::vector<double>& thresholds = {0.5, 1.0, 2.0, 4.0});

struct EvalRecord {
  double rmsd = 0.0;
  double lddt = 0.0;
};

struct SuccessRates {
  double rate_rmsd2 = 0.0;    // rmsd < 2
  double rate_combined = 0.0; // rmsd < 2 and lddt > 0.8
};

SuccessRates success_rates(const std::vector<EvalRecord>& results);

// Per-entropy-bin success rates. Bins are [e_k, e_{k+1}) with the last bin
// closed on the right.
CalibrationReport entropy_calibration(const std::vector<double>& h_values,
                                      const std::vector<bool>& successes,
                                      const std::vector<double>& edges = {0.0, 0.25, 0.5, 0.75,
                                                                          1.0});

}  // namespace coarsebind::metrics
