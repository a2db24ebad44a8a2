#include "coarsebind/complexes.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "coarsebind/rng.hpp"
#include "json.hpp"

namespace coarsebind {

using nlohmann::json;

void TokenizedComplex::validate() const {
  std::size_t emb_dim = tokens.empty() ? 0 : tokens.front().embedding.size();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Token& t = tokens[i];
    if (t.kind == TokenKind::Protein && !t.residue_index)
      throw InputError("token " + std::to_string(i) + ": protein token without residue_index");
    if (t.kind == TokenKind::Ligand && t.residue_index)
      throw InputError("token " + std::to_string(i) + ": ligand token with residue_index");
    if (t.kind == TokenKind::Ligand && !t.element)
      throw InputError("token " + std::to_string(i) + ": ligand token without element");
    if (t.kind == TokenKind::Protein && t.element)
      throw InputError("token " + std::to_string(i) + ": protein token with element");
    if (t.embedding.size() != emb_dim)
      throw InputError("token " + std::to_string(i) + ": embedding length mismatch");
  }
  for (const Bond& b : bonds) {
    if (b.a >= tokens.size() || b.b >= tokens.size() || b.a == b.b)
      throw InputError("bond endpoints out of range or identical");
    if (tokens[b.a].kind != TokenKind::Ligand || tokens[b.b].kind != TokenKind::Ligand)
      throw InputError("bond endpoints must be ligand tokens");
  }
  if (coords && coords->size() != tokens.size())
    throw InputError("coords row count does not match token count");
}

void SyntheticGenConfig::validate() const {
  if (n_ligand < 1 || n_protein < 1) throw InputError("token counts must be >= 1");
  if (embedding_dim < 1) throw InputError("embedding_dim must be >= 1");
  if (!(pocket_fraction > 0.0 && pocket_fraction <= 1.0))
    throw InputError("pocket_fraction must be in (0, 1]");
}

namespace {

Vec3 random_unit(Rng& rng) {
  // rejection sample inside the unit ball
  for (;;) {
    Vec3 v{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double n = norm(v);
    if (n > 1e-3 && n <= 1.0) return (1.0 / n) * v;
  }
}

Coords protein_backbone(Geometry geometry, std::size_t n, Rng& rng) {
  Coords xs(n);
  if (geometry == Geometry::Helix) {
    // ideal helix parameters: rise 1.5 A, 100 degrees per residue, radius 2.3 A
    const double omega = 100.0 * M_PI / 180.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double a = omega * static_cast<double>(k);
      xs[k] = {2.3 * std::cos(a), 2.3 * std::sin(a), 1.5 * static_cast<double>(k)};
    }
  } else {
    // confined smooth walk: 3.8 A steps, direction persistence, quadratic
    // inward pull keeps the chain inside a compact blob
    const double radius = 2.2 * std::cbrt(static_cast<double>(n)) + 3.0;
    Vec3 x{0, 0, 0};
    Vec3 dir = random_unit(rng);
    for (std::size_t k = 0; k < n; ++k) {
      xs[k] = x;
      const double r = norm(x);
      const Vec3 pull = r > 1e-9 ? (-(r / radius) * (r / radius) / r) * x : Vec3{0, 0, 0};
      dir = normalized(dir + 0.9 * random_unit(rng) + 1.4 * pull);
      x = x + 3.8 * dir;
    }
  }
  // recentre at the origin
  Vec3 c{0, 0, 0};
  for (const auto& p : xs) c = c + p;
  c = (1.0 / static_cast<double>(n)) * c;
  for (auto& p : xs) p = p - c;
  return xs;
}

Coords ligand_local(std::size_t n, const std::vector<Bond>& bonds, Rng& rng) {
  Coords xs(n, Vec3{0, 0, 0});
  for (std::size_t i = 1; i < n; ++i) {
    const Vec3 parent = xs[bonds[i - 1].a]; // bonds[i-1] connects i to its tree parent
    Vec3 cand{};
    for (int attempt = 0; attempt < 40; ++attempt) {
      cand = parent + 1.5 * random_unit(rng);
      double closest = 1e30;
      for (std::size_t j = 0; j < i; ++j) closest = std::min(closest, distance(cand, xs[j]));
      if (closest > 1.1) break;
    }
    xs[i] = cand;
  }
  Vec3 c{0, 0, 0};
  for (const auto& p : xs) c = c + p;
  c = (1.0 / static_cast<double>(n)) * c;
  for (auto& p : xs) p = p - c;
  return xs;
}

const char* element_table[] = {"C", "C", "C", "N", "O", "S"};

std::vector<double> token_embedding(std::uint64_t seed, Geometry geometry, TokenKind kind,
                                    std::size_t index, std::size_t dim) {
  const std::uint64_t kind_tag = kind == TokenKind::Ligand ? 1 : 2;
  if (geometry == Geometry::Cliff) {
    // seeds 2m and 2m+1 share a base embedding; the jitter keeps them distinct
    Rng base = Rng(seed >> 1).fork("embed", kind_tag * 1000003 + index);
    Rng jitter = Rng(seed).fork("embed-jitter", kind_tag * 1000003 + index);
    std::vector<double> e = base.normal_vector(dim);
    for (auto& v : e) v += 0.02 * jitter.normal();
    return e;
  }
  Rng rng = Rng(seed).fork("embed", kind_tag * 1000003 + index);
  return rng.normal_vector(dim);
}

// Count protein tokens strictly within 15 A of any ligand atom when the
// ligand is rigidly placed at offset t * v.
std::size_t pocket_count_at(const Coords& lig, const Coords& prot, const Vec3& v, double t) {
  std::size_t count = 0;
  for (const auto& p : prot) {
    bool in = false;
    for (const auto& a : lig) {
      if (distance(p, a + t * v) < 15.0) {
        in = true;
        break;
      }
    }
    if (in) ++count;
  }
  return count;
}

// Find an offset along v giving exactly K pocket residues. The count only
// changes where some (residue, atom) distance crosses 15 A, so scanning
// midpoints between consecutive crossing roots covers every attainable value.
std::optional<double> find_exact_offset(const Coords& lig, const Coords& prot, const Vec3& v,
                                        std::size_t want) {
  std::vector<double> roots;
  for (const auto& p : prot) {
    for (const auto& a : lig) {
      const Vec3 w = p - a;
      const double b = dot(w, v);
      const double disc = b * b - dot(w, w) + 225.0;
      if (disc > 0.0) {
        const double s = std::sqrt(disc);
        roots.push_back(b - s);
        roots.push_back(b + s);
      }
    }
  }
  if (roots.empty()) return want == 0 ? std::optional<double>(0.0) : std::nullopt;
  std::sort(roots.begin(), roots.end());
  std::vector<double> candidates;
  candidates.push_back(roots.front() - 1.0);
  for (std::size_t i = 0; i + 1 < roots.size(); ++i)
    candidates.push_back(0.5 * (roots[i] + roots[i + 1]));
  candidates.push_back(roots.back() + 1.0);
  // prefer the largest (most surface-like) placement
  for (auto it = candidates.rbegin(); it != candidates.rend(); ++it)
    if (pocket_count_at(lig, prot, v, *it) == want) return *it;
  return std::nullopt;
}

}  // namespace

TokenizedComplex generate_synthetic_complex(const SyntheticGenConfig& cfg) {
  cfg.validate();
  Rng root(cfg.seed);

  // ligand bond graph: random spanning tree plus up to two ring closures
  Rng bond_rng = root.fork("bonds");
  std::vector<Bond> bonds;
  for (std::size_t i = 1; i < cfg.n_ligand; ++i) {
    const auto parent = static_cast<std::size_t>(bond_rng.uniform_index(i));
    bonds.push_back({parent, i, 1});
  }
  std::vector<Bond> tree = bonds;
  if (cfg.n_ligand >= 4) {
    const int n_rings = static_cast<int>(bond_rng.uniform_index(3)); // 0..2
    for (int r = 0; r < n_rings; ++r) {
      const auto i = static_cast<std::size_t>(bond_rng.uniform_index(cfg.n_ligand));
      const auto j = static_cast<std::size_t>(bond_rng.uniform_index(cfg.n_ligand));
      if (i == j) continue;
      const bool dup = std::any_of(bonds.begin(), bonds.end(), [&](const Bond& b) {
        return (b.a == std::min(i, j) && b.b == std::max(i, j));
      });
      if (!dup) bonds.push_back({std::min(i, j), std::max(i, j), 1});
    }
  }

  Rng lig_rng = root.fork("ligand_coords");
  const Coords lig = ligand_local(cfg.n_ligand, tree, lig_rng);

  Rng prot_rng = root.fork("protein_coords");
  Coords prot = protein_backbone(cfg.geometry, cfg.n_protein, prot_rng);

  // rigid ligand placement with an exact pocket size
  const auto want = static_cast<std::size_t>(
      std::ceil(cfg.pocket_fraction * static_cast<double>(cfg.n_protein)));
  Rng place_rng = root.fork("placement");
  Vec3 v = random_unit(place_rng);
  std::optional<double> offset;
  for (int attempt = 0; attempt < 64 && !offset; ++attempt) {
    offset = find_exact_offset(lig, prot, v, want);
    if (!offset) {
      if (attempt % 2 == 0) {
        v = random_unit(place_rng);
      } else {
        // blob too wide for the requested pocket: shrink it
        for (auto& p : prot) p = 0.92 * p;
      }
    }
  }
  if (!offset) throw NumericError("synthetic placement failed to reach requested pocket size");

  TokenizedComplex out;
  out.id = "synth-" +
           std::string(cfg.geometry == Geometry::Helix
                           ? "helix"
                           : (cfg.geometry == Geometry::Cliff ? "cliff" : "blob")) +
           "-" + std::to_string(cfg.seed);
  out.bonds = bonds;
  Coords coords;
  coords.reserve(cfg.n_ligand + cfg.n_protein);

  Rng elem_rng = root.fork("elements");
  for (std::size_t i = 0; i < cfg.n_ligand; ++i) {
    Token t;
    t.kind = TokenKind::Ligand;
    t.chain_id = "L";
    t.element = element_table[elem_rng.uniform_index(6)];
    t.embedding = token_embedding(cfg.seed, cfg.geometry, TokenKind::Ligand, i, cfg.embedding_dim);
    out.tokens.push_back(std::move(t));
    coords.push_back(lig[i] + *offset * v);
  }
  // protein tokens split into chains of at most 60 residues
  const std::size_t chain_len = 60;
  for (std::size_t i = 0; i < cfg.n_protein; ++i) {
    Token t;
    t.kind = TokenKind::Protein;
    t.chain_id = std::string(1, static_cast<char>('A' + (i / chain_len) % 26));
    t.residue_index = static_cast<int>(i % chain_len) + 1;
    t.embedding = token_embedding(cfg.seed, cfg.geometry, TokenKind::Protein, i, cfg.embedding_dim);
    out.tokens.push_back(std::move(t));
    coords.push_back(prot[i]);
  }
  out.coords = std::move(coords);
  out.validate();
  return out;
}

double planted_affinity(const TokenizedComplex& c, const SyntheticGenConfig& cfg,
                        std::uint64_t readout_seed) {
  Rng readout_rng = Rng(readout_seed).fork("affinity_readout");
  const std::vector<double> u = readout_rng.normal_vector(cfg.embedding_dim);
  std::vector<double> mean(cfg.embedding_dim, 0.0);
  std::size_t n_lig = 0;
  for (const Token& t : c.tokens) {
    if (t.kind != TokenKind::Ligand) continue;
    ++n_lig;
    for (std::size_t d = 0; d < cfg.embedding_dim; ++d) mean[d] += t.embedding[d];
  }
  if (n_lig == 0) throw InputError("planted_affinity: complex has no ligand tokens");
  double y = 0.0;
  for (std::size_t d = 0; d < cfg.embedding_dim; ++d)
    y += u[d] * mean[d] / static_cast<double>(n_lig);
  y = 6.0 + 1.2 * y; // centred near typical pIC50 values
  if (cfg.geometry == Geometry::Cliff && (cfg.seed & 1)) {
    Rng jump_rng = Rng(cfg.seed >> 1).fork("cliff_jump");
    y += 2.0 + 1.5 * jump_rng.uniform(); // activity cliff
  }
  return y;
}

Mat distance_matrix(const Coords& coords) {
  const std::size_t n = coords.size();
  for (const auto& p : coords)
    for (const double x : p)
      if (!std::isfinite(x)) throw InputError("distance_matrix: non-finite coordinate");
  Mat d(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dij = distance(coords[i], coords[j]);
      d(i, j) = dij;
      d(j, i) = dij;
    }
  }
  return d;
}

namespace {

json token_to_json(const Token& t) {
  json j;
  j["kind"] = t.kind == TokenKind::Ligand ? "ligand" : "protein";
  j["chain"] = t.chain_id;
  if (t.residue_index) j["residue_index"] = *t.residue_index;
  if (t.element) j["element"] = *t.element;
  j["embedding"] = t.embedding;
  return j;
}

Token token_from_json(const json& j, std::size_t idx) {
  static const std::set<std::string> allowed = {"kind", "chain", "residue_index", "element",
                                                "embedding"};
  if (!j.is_object()) throw ParseError("token " + std::to_string(idx) + " is not an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw ParseError("token " + std::to_string(idx) + ": unknown key '" + key + "'");
  Token t;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "ligand")
    t.kind = TokenKind::Ligand;
  else if (kind == "protein")
    t.kind = TokenKind::Protein;
  else
    throw ParseError("token " + std::to_string(idx) + ": bad kind '" + kind + "'");
  t.chain_id = j.at("chain").get<std::string>();
  if (j.contains("residue_index")) t.residue_index = j.at("residue_index").get<int>();
  if (j.contains("element")) t.element = j.at("element").get<std::string>();
  t.embedding = j.at("embedding").get<std::vector<double>>();
  return t;
}

}  // namespace

std::string encode_complex(const TokenizedComplex& c) {
  json j;
  j["id"] = c.id;
  json toks = json::array();
  for (const Token& t : c.tokens) toks.push_back(token_to_json(t));
  j["tokens"] = std::move(toks);
  json bonds = json::array();
  for (const Bond& b : c.bonds) bonds.push_back(json::array({b.a, b.b, b.order}));
  j["bonds"] = std::move(bonds);
  if (c.coords) {
    json rows = json::array();
    for (const Vec3& p : *c.coords) rows.push_back(json::array({p[0], p[1], p[2]}));
    j["coords"] = std::move(rows);
  }
  return j.dump();
}

TokenizedComplex decode_complex(const std::string& bytes) {
  json j;
  try {
    j = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("complex: ") + e.what(), static_cast<std::ptrdiff_t>(e.byte));
  } catch (const json::exception& e) {
    throw ParseError(std::string("complex: ") + e.what());
  }
  try {
    if (!j.is_object()) throw ParseError("complex document is not an object");
    static const std::set<std::string> allowed = {"id", "tokens", "bonds", "coords"};
    for (const auto& [key, _] : j.items())
      if (!allowed.count(key)) throw ParseError("complex: unknown key '" + key + "'");
    TokenizedComplex c;
    c.id = j.at("id").get<std::string>();
    const json& toks = j.at("tokens");
    if (!toks.is_array()) throw ParseError("tokens is not an array");
    for (std::size_t i = 0; i < toks.size(); ++i) c.tokens.push_back(token_from_json(toks[i], i));
    const json& bonds = j.at("bonds");
    if (!bonds.is_array()) throw ParseError("bonds is not an array");
    for (const auto& b : bonds) {
      if (!b.is_array() || b.size() != 3) throw ParseError("bond entries must be [i, j, order]");
      c.bonds.push_back({b[0].get<std::size_t>(), b[1].get<std::size_t>(), b[2].get<int>()});
    }
    if (j.contains("coords")) {
      Coords coords;
      for (const auto& row : j.at("coords")) {
        if (!row.is_array() || row.size() != 3) throw ParseError("coords rows must have 3 entries");
        coords.push_back({row[0].get<double>(), row[1].get<double>(), row[2].get<double>()});
      }
      c.coords = std::move(coords);
    }
    c.validate();
    return c;
  } catch (const ParseError&) {
    throw;
  } catch (const InputError& e) {
    throw ParseError(std::string("complex: ") + e.what());
  } catch (const json::exception& e) {
    throw ParseError(std::string("complex: ") + e.what());
  }
}

}  // namespace coarsebind
