#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "coarsebind/geom.hpp"

namespace coarsebind {

enum class TokenKind { Ligand, Protein };

// One coarse-grained site: a ligand heavy atom or a protein residue center.
struct Token {
  TokenKind kind = TokenKind::Ligand;
  std::string chain_id;
  std::optional<int> residue_index;   // protein only, 1-based within chain
  std::optional<std::string> element; // ligand only
  std::vector<double> embedding;      // frozen per-token features, length E
};

struct Bond {
  std::size_t a = 0, b = 0; // ligand token indices
  int order = 1;
};

struct TokenizedComplex {
  std::string id;
  std::vector<Token> tokens; // ligand tokens first, then protein tokens
  std::vector<Bond> bonds;
  std::optional<Coords> coords; // N x 3, Angstrom

  std::size_t size() const { return tokens.size(); }

  std::vector<std::size_t> ligand_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < tokens.size(); ++i)
      if (tokens[i].kind == TokenKind::Ligand) out.push_back(i);
    return out;
  }
  std::vector<std::size_t> protein_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < tokens.size(); ++i)
      if (tokens[i].kind == TokenKind::Protein) out.push_back(i);
    return out;
  }
  std::vector<TokenKind> kinds() const {
    std::vector<TokenKind> out(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) out[i] = tokens[i].kind;
    return out;
  }

  // Throws InputError if a structural invariant is violated.
  void validate() const;
};

enum class Geometry { FoldedBlob, Helix, Cliff };

struct SyntheticGenConfig {
  std::size_t n_ligand = 8;
  std::size_t n_protein = 40;
  std::size_t embedding_dim = 32;
  Geometry geometry = Geometry::FoldedBlob;
  std::uint64_t seed = 0;
  double pocket_fraction = 0.75; // fraction of protein tokens within 15 A of the ligand

  void validate() const;
};

// Deterministic synthetic complex with ground-truth coordinates. The ligand
// is placed so that exactly ceil(pocket_fraction * n_protein) protein tokens
// lie strictly within 15 A of some ligand atom. Cliff-geometry complexes
// with seeds 2m and 2m+1 carry near-identical embeddings.
TokenizedComplex generate_synthetic_complex(const SyntheticGenConfig& cfg);

// Synthetic ground-truth affinity signal for a generated complex: a fixed
// linear readout (seeded by readout_seed) of the mean ligand embedding. For
// Cliff geometry, odd seeds get a planted jump relative to their even-seed
// partner, which is what makes Cliff pools hard for point predictions.
double planted_affinity(const TokenizedComplex& c, const SyntheticGenConfig& cfg,
                        std::uint64_t readout_seed);

// Symmetric Euclidean distance matrix in Angstrom.
Mat distance_matrix(const Coords& coords);

// UTF-8 JSON codec, format per the complex file schema. decode rejects
// unknown keys and validates structural invariants.
std::string encode_complex(const TokenizedComplex& c);
TokenizedComplex decode_complex(const std::string& bytes);

}  // namespace coarsebind
