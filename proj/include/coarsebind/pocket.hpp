#pragma once

#include <cstddef>
#include <vector>

#include "coarsebind/complexes.hpp"
#include "coarsebind/geom.hpp"

namespace coarsebind::pocket {

enum class Provenance { Ligand, Pocket, Expansion };

struct PocketCrop {
  std::vector<std::size_t> kept; // ascending token indices
  std::vector<Provenance> provenance; // parallel to kept
  bool over_budget = false; // ligand alone exceeds the budget
};

// Protein tokens with expected distance strictly below cutoff to some
// ligand token.
std::vector<std::size_t> pocket_residues(const Mat& expected, const std::vector<TokenKind>& kinds,
                                         double cutoff);

// Budgeted pocket crop: whole ligand always kept; pocket residues kept
// (nearest-to-ligand first when over budget); remaining budget filled by
// contiguous sequence expansion around pocket clusters (residue gap <= 3)
// on chains already intersecting the crop. Ties break by ascending token
// index.
PocketCrop crop(const TokenizedComplex& c, std::size_t budget,
                const std::vector<std::size_t>& pocket, const Mat& expected);

// Sub-complex with only the kept tokens and the induced bonds.
TokenizedComplex apply_crop(const TokenizedComplex& c, const PocketCrop& crop);

}  // namespace coarsebind::pocket
