#include <algorithm>
#include <set>
#include <vector>

#include "coarsebind/complexes.hpp"
#include "coarsebind/errors.hpp"
#include "coarsebind/pocket.hpp"
#include "coarsebind/rng.hpp"
#include "doctest.h"

using namespace coarsebind;
using namespace coarsebind::pocket;

namespace {

TokenizedComplex make_fixture(std::size_t n_lig, const std::vector<std::pair<char, int>>& residues) {
  TokenizedComplex c;
  c.id = "fixture";
  for (std::size_t i = 0; i < n_lig; ++i) {
    Token t;
    t.kind = TokenKind::Ligand;
    t.chain_id = "L";
    t.element = "C";
    t.embedding = {0.0};
    c.tokens.push_back(t);
  }
  for (const auto& [chain, res] : residues) {
    Token t;
    t.kind = TokenKind::Protein;
    t.chain_id = std::string(1, chain);
    t.residue_index = res;
    t.embedding = {0.0};
    c.tokens.push_back(t);
  }
  return c;
}

// Straight-line re-transcription of the cropping procedure, kept separate
// from the implementation on purpose: plain vectors, stable sorts, no
// shared helpers.
std::set<std::size_t> crop_oracle(const TokenizedComplex& c, std::size_t budget,
                                  const std::vector<std::size_t>& pocket, const Mat& expected) {
  std::set<std::size_t> kept;
  std::vector<std::size_t> ligand;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (c.tokens[i].kind == TokenKind::Ligand) ligand.push_back(i);

  // step 1: always include the entire ligand
  for (const auto i : ligand) kept.insert(i);
  if (ligand.size() > budget) return kept;

  // step 2: pocket residues, truncated by distance to ligand if needed
  if (ligand.size() + pocket.size() > budget) {
    std::vector<std::pair<double, std::size_t>> sorted;
    for (const auto j : pocket) {
      double best = 1e18;
      for (const auto l : ligand) best = std::min(best, expected(j, l));
      sorted.push_back({best, j});
    }
    std::stable_sort(sorted.begin(), sorted.end());
    for (std::size_t r = 0; r < budget - ligand.size() && r < sorted.size(); ++r)
      kept.insert(sorted[r].second);
  } else {
    for (const auto j : pocket) kept.insert(j);
  }

  // step 3: contiguous sequence expansion
  if (kept.size() < budget) {
    std::set<std::string> chains;
    for (const auto i : kept)
      if (c.tokens[i].kind == TokenKind::Protein) chains.insert(c.tokens[i].chain_id);
    std::vector<std::pair<int, std::size_t>> candidates;
    for (const auto& chain : chains) {
      std::vector<int> members;
      for (const auto i : kept)
        if (c.tokens[i].kind == TokenKind::Protein && c.tokens[i].chain_id == chain)
          members.push_back(*c.tokens[i].residue_index);
      std::sort(members.begin(), members.end());
      std::vector<std::pair<int, int>> clusters;
      for (const int r : members) {
        if (clusters.empty() || r - clusters.back().second > 3)
          clusters.push_back({r, r});
        else
          clusters.back().second = r;
      }
      for (std::size_t t = 0; t < c.size(); ++t) {
        if (c.tokens[t].kind != TokenKind::Protein) continue;
        if (c.tokens[t].chain_id != chain) continue;
        if (kept.count(t)) continue;
        int d = 1 << 30;
        for (const auto& [s, e] : clusters) {
          d = std::min(d, std::abs(*c.tokens[t].residue_index - s));
          d = std::min(d, std::abs(*c.tokens[t].residue_index - e));
        }
        candidates.push_back({d, t});
      }
    }
    std::stable_sort(candidates.begin(), candidates.end());
    for (const auto& [d, t] : candidates) {
      if (kept.size() >= budget) break;
      kept.insert(t);
    }
  }
  return kept;
}

}  // namespace

TEST_CASE("pocket_residues threshold is strict") {
  TokenizedComplex c = make_fixture(1, {{'A', 1}, {'A', 2}});
  Mat expected(3, 3);
  expected(0, 1) = expected(1, 0) = 14.9;
  expected(0, 2) = expected(2, 0) = 15.0;
  const auto pocket = pocket_residues(expected, c.kinds(), 15.0);
  REQUIRE(pocket.size() == 1);
  CHECK(pocket[0] == 1); // 14.9 in, exactly 15.0 out

  Mat no_lig(2, 2);
  CHECK_THROWS_AS(
      pocket_residues(no_lig, std::vector<TokenKind>(2, TokenKind::Protein), 15.0),
      InputError);
}

TEST_CASE("pocket_residues matches the double-loop oracle on random fixtures") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    SyntheticGenConfig cfg;
    cfg.n_ligand = 1 + rng.uniform_index(5);
    cfg.n_protein = 5 + rng.uniform_index(30);
    cfg.seed = rng.next_u64();
    cfg.pocket_fraction = 0.3 + 0.6 * rng.uniform();
    const TokenizedComplex c = generate_synthetic_complex(cfg);
    const Mat dist = distance_matrix(*c.coords);
    const auto got = pocket_residues(dist, c.kinds(), 15.0);

    std::vector<std::size_t> want;
    for (std::size_t j = 0; j < c.size(); ++j) {
      if (c.tokens[j].kind != TokenKind::Protein) continue;
      bool in = false;
      for (std::size_t i = 0; i < c.size(); ++i)
        if (c.tokens[i].kind == TokenKind::Ligand && dist(i, j) < 15.0) in = true;
      if (in) want.push_back(j);
    }
    CHECK(got == want);
  }
}

TEST_CASE("crop keeps everything when the budget allows") {
  const TokenizedComplex c = make_fixture(2, {{'A', 1}, {'A', 2}, {'A', 3}, {'B', 1}});
  Mat expected(c.size(), c.size());
  const PocketCrop crop_all = crop(c, 100, {2, 3}, expected);
  CHECK(crop_all.kept.size() == 5); // ligand + pocket + expansion within chain A
  // chain B never intersects the crop, so it is not expanded
  for (const auto i : crop_all.kept) CHECK(c.tokens[i].chain_id != "B");
}

TEST_CASE("crop truncates pocket residues by expected distance") {
  const TokenizedComplex c =
      make_fixture(2, {{'A', 1}, {'A', 2}, {'A', 3}, {'A', 4}, {'A', 5}});
  Mat expected(c.size(), c.size(), 100.0);
  // pocket = all five residues; distances to ligand: token 2 -> 9, 3 -> 5, 4 -> 7, 5 -> 3, 6 -> 11
  const double dists[5] = {9, 5, 7, 3, 11};
  for (std::size_t j = 0; j < 5; ++j) {
    expected(2 + j, 0) = dists[j];
    expected(0, 2 + j) = dists[j];
    expected(2 + j, 1) = dists[j] + 1;
    expected(1, 2 + j) = dists[j] + 1;
  }
  const PocketCrop cr = crop(c, 2 + 3, {2, 3, 4, 5, 6}, expected);
  const std::set<std::size_t> kept(cr.kept.begin(), cr.kept.end());
  CHECK(kept == std::set<std::size_t>{0, 1, 3, 4, 5}); // the three nearest pocket residues
  CHECK(!cr.over_budget);
}

TEST_CASE("ligand alone over budget sets the flag") {
  const TokenizedComplex c = make_fixture(4, {{'A', 1}});
  Mat expected(c.size(), c.size());
  const PocketCrop cr = crop(c, 2, {}, expected);
  CHECK(cr.over_budget);
  CHECK(cr.kept.size() == 4); // whole ligand kept unconditionally
  CHECK_THROWS_AS(crop(c, 0, {}, expected), InputError);
}

TEST_CASE("crop matches the independent transcription on random instances") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    SyntheticGenConfig cfg;
    cfg.n_ligand = 1 + rng.uniform_index(8);
    cfg.n_protein = 10 + rng.uniform_index(140);
    cfg.seed = rng.next_u64();
    cfg.pocket_fraction = 0.2 + 0.7 * rng.uniform();
    cfg.geometry = trial % 4 == 0 ? Geometry::Helix : Geometry::FoldedBlob;
    const TokenizedComplex c = generate_synthetic_complex(cfg);
    const Mat dist = distance_matrix(*c.coords);
    const double cutoff = trial % 2 == 0 ? 15.0 : 22.0;
    const auto pocket = pocket_residues(dist, c.kinds(), cutoff);
    const std::size_t budget = 1 + rng.uniform_index(c.size() + 10);

    const PocketCrop got = crop(c, budget, pocket, dist);
    const auto want = crop_oracle(c, budget, pocket, dist);
    CHECK(std::set<std::size_t>(got.kept.begin(), got.kept.end()) == want);
  }
}

TEST_CASE("196-token budget on a 10-ligand / 300-protein complex") {
  SyntheticGenConfig cfg;
  cfg.n_ligand = 10;
  cfg.n_protein = 300;
  cfg.seed = 1234;
  cfg.pocket_fraction = 0.4;
  const TokenizedComplex c = generate_synthetic_complex(cfg);
  const Mat dist = distance_matrix(*c.coords);
  const auto pocket = pocket_residues(dist, c.kinds(), 22.0);
  const PocketCrop got = crop(c, 196, pocket, dist);
  CHECK(got.kept.size() == 196);
  for (std::size_t i = 0; i < 10; ++i)
    CHECK(std::find(got.kept.begin(), got.kept.end(), i) != got.kept.end());
  CHECK(std::set<std::size_t>(got.kept.begin(), got.kept.end()) ==
        crop_oracle(c, 196, pocket, dist));

  const TokenizedComplex sub = apply_crop(c, got);
  CHECK(sub.size() == 196);
}

TEST_CASE("pocket residues are kept before any expansion residue") {
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    SyntheticGenConfig cfg;
    cfg.n_ligand = 3;
    cfg.n_protein = 40;
    cfg.seed = rng.next_u64();
    cfg.pocket_fraction = 0.4;
    const TokenizedComplex c = generate_synthetic_complex(cfg);
    const Mat dist = distance_matrix(*c.coords);
    const auto pocket = pocket_residues(dist, c.kinds(), 15.0);
    const PocketCrop cr = crop(c, 3 + pocket.size() + 5, pocket, dist);
    const std::set<std::size_t> kept(cr.kept.begin(), cr.kept.end());
    for (const auto j : pocket) CHECK(kept.count(j) == 1);
  }
}
