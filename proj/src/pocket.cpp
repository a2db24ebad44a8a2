#include "coarsebind/pocket.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "coarsebind/errors.hpp"

namespace coarsebind::pocket {

std::vector<std::size_t> pocket_residues(const Mat& expected, const std::vector<TokenKind>& kinds,
                                         double cutoff) {
  if (expected.rows != expected.cols || expected.rows != kinds.size())
    throw InputError("pocket_residues: shape mismatch");
  if (!(cutoff > 0)) throw InputError("pocket_residues: cutoff must be positive");
  std::vector<std::size_t> lig;
  for (std::size_t i = 0; i < kinds.size(); ++i)
    if (kinds[i] == TokenKind::Ligand) lig.push_back(i);
  if (lig.empty()) throw InputError("pocket_residues: no ligand tokens");

  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < kinds.size(); ++j) {
    if (kinds[j] != TokenKind::Protein) continue;
    for (const auto i : lig) {
      if (expected(i, j) < cutoff) { // strict
        out.push_back(j);
        break;
      }
    }
  }
  return out;
}

PocketCrop crop(const TokenizedComplex& c, std::size_t budget,
                const std::vector<std::size_t>& pocket, const Mat& expected) {
  if (budget < 1) throw InputError("crop: budget must be >= 1");
  const std::size_t n = c.size();
  if (expected.rows != n || expected.cols != n) throw InputError("crop: expected matrix shape");
  for (const auto j : pocket)
    if (j >= n || c.tokens[j].kind != TokenKind::Protein)
      throw InputError("crop: pocket must contain protein token indices");

  const std::vector<std::size_t> lig = c.ligand_indices();

  std::set<std::size_t> kept(lig.begin(), lig.end());
  std::map<std::size_t, Provenance> prov;
  for (const auto i : lig) prov[i] = Provenance::Ligand;

  PocketCrop result;
  result.over_budget = lig.size() > budget;

  // step 2: pocket residues, truncated by expected distance to ligand
  if (!result.over_budget) {
    if (lig.size() + pocket.size() > budget) {
      const std::size_t pocket_budget = budget - lig.size();
      std::vector<std::pair<double, std::size_t>> order;
      order.reserve(pocket.size());
      for (const auto j : pocket) {
        double dmin = 1e300;
        for (const auto k : lig) dmin = std::min(dmin, expected(j, k));
        order.emplace_back(dmin, j);
      }
      std::sort(order.begin(), order.end());
      for (std::size_t r = 0; r < pocket_budget && r < order.size(); ++r) {
        kept.insert(order[r].second);
        prov[order[r].second] = Provenance::Pocket;
      }
    } else {
      for (const auto j : pocket) {
        kept.insert(j);
        prov[j] = Provenance::Pocket;
      }
    }
  }

  // step 3: contiguous sequence expansion on chains intersecting the crop
  if (kept.size() < budget) {
    std::set<std::string> chains;
    for (const auto i : kept)
      if (c.tokens[i].kind == TokenKind::Protein) chains.insert(c.tokens[i].chain_id);

    std::vector<std::pair<int, std::size_t>> candidates; // (sequence distance, token index)
    for (const auto& chain : chains) {
      std::vector<int> in_chain_res;
      for (const auto i : kept)
        if (c.tokens[i].kind == TokenKind::Protein && c.tokens[i].chain_id == chain)
          in_chain_res.push_back(*c.tokens[i].residue_index);
      std::sort(in_chain_res.begin(), in_chain_res.end());

      // merge residues separated by <= 3 into clusters [(start, end)]
      std::vector<std::pair<int, int>> clusters;
      for (const int r : in_chain_res) {
        if (!clusters.empty() && r - clusters.back().second <= 3)
          clusters.back().second = r;
        else
          clusters.emplace_back(r, r);
      }

      for (std::size_t t = 0; t < n; ++t) {
        if (c.tokens[t].kind != TokenKind::Protein || c.tokens[t].chain_id != chain) continue;
        if (kept.count(t)) continue;
        const int r = *c.tokens[t].residue_index;
        int dseq = std::numeric_limits<int>::max();
        for (const auto& [s, e] : clusters)
          dseq = std::min(dseq, std::min(std::abs(r - s), std::abs(r - e)));
        candidates.emplace_back(dseq, t);
      }
    }
    std::sort(candidates.begin(), candidates.end());
    for (const auto& [dseq, t] : candidates) {
      if (kept.size() >= budget) break;
      kept.insert(t);
      prov[t] = Provenance::Expansion;
    }
  }

  result.kept.assign(kept.begin(), kept.end());
  result.provenance.reserve(result.kept.size());
  for (const auto i : result.kept) result.provenance.push_back(prov.at(i));
  return result;
}

TokenizedComplex apply_crop(const TokenizedComplex& c, const PocketCrop& cr) {
  TokenizedComplex out;
  out.id = c.id;
  std::map<std::size_t, std::size_t> remap;
  Coords coords;
  for (const auto i : cr.kept) {
    remap[i] = out.tokens.size();
    out.tokens.push_back(c.tokens[i]);
    if (c.coords) coords.push_back((*c.coords)[i]);
  }
  if (c.coords) out.coords = std::move(coords);
  for (const Bond& b : c.bonds) {
    const auto ia = remap.find(b.a);
    const auto ib = remap.find(b.b);
    if (ia != remap.end() && ib != remap.end()) out.bonds.push_back({ia->second, ib->second, b.order});
  }
  out.validate();
  return out;
}

}  // namespace coarsebind::pocket
