#include <array>
#include <cmath>

#include "coarsebind/complexes.hpp"
#include "coarsebind/errors.hpp"
#include "coarsebind/metrics.hpp"
#include "coarsebind/rng.hpp"
#include "doctest.h"

using namespace coarsebind;
using namespace coarsebind::metrics;

namespace {

// Independent superposition oracle: Horn's closed-form quaternion method.
// Builds the 4x4 key matrix from the cross-covariance and extracts its top
// eigenvector by power iteration; shares no code with the SVD route.
std::array<std::array<double, 3>, 3> horn_rotation(const Coords& pred, const Coords& truth,
                                                   const std::vector<double>& w) {
  const std::size_t m = pred.size();
  double wsum = 0.0;
  Vec3 cp{0, 0, 0}, ct{0, 0, 0};
  for (std::size_t i = 0; i < m; ++i) {
    wsum += w[i];
    cp = cp + w[i] * pred[i];
    ct = ct + w[i] * truth[i];
  }
  cp = (1.0 / wsum) * cp;
  ct = (1.0 / wsum) * ct;

  double s[3][3] = {};
  for (std::size_t i = 0; i < m; ++i) {
    const Vec3 a = pred[i] - cp;
    const Vec3 b = truth[i] - ct;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) s[r][c] += w[i] * a[r] * b[c];
  }
  const double key[4][4] = {
      {s[0][0] + s[1][1] + s[2][2], s[1][2] - s[2][1], s[2][0] - s[0][2], s[0][1] - s[1][0]},
      {s[1][2] - s[2][1], s[0][0] - s[1][1] - s[2][2], s[0][1] + s[1][0], s[2][0] + s[0][2]},
      {s[2][0] - s[0][2], s[0][1] + s[1][0], -s[0][0] + s[1][1] - s[2][2], s[1][2] + s[2][1]},
      {s[0][1] - s[1][0], s[2][0] + s[0][2], s[1][2] + s[2][1], -s[0][0] - s[1][1] + s[2][2]}};

  // full eigendecomposition by cyclic Jacobi sweeps, then take the top
  // eigenvector
  double a[4][4], v[4][4] = {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) a[r][c] = key[r][c];
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < 4; ++p)
      for (int qi = p + 1; qi < 4; ++qi) off += a[p][qi] * a[p][qi];
    if (off < 1e-28) break;
    for (int p = 0; p < 4; ++p) {
      for (int qi = p + 1; qi < 4; ++qi) {
        if (std::abs(a[p][qi]) < 1e-300) continue;
        const double theta = 0.5 * std::atan2(2.0 * a[p][qi], a[qi][qi] - a[p][p]);
        const double c = std::cos(theta), sn = std::sin(theta);
        for (int k = 0; k < 4; ++k) {
          const double akp = a[k][p], akq = a[k][qi];
          a[k][p] = c * akp - sn * akq;
          a[k][qi] = sn * akp + c * akq;
        }
        for (int k = 0; k < 4; ++k) {
          const double apk = a[p][k], aqk = a[qi][k];
          a[p][k] = c * apk - sn * aqk;
          a[qi][k] = sn * apk + c * aqk;
          const double vkp = v[k][p], vkq = v[k][qi];
          v[k][p] = c * vkp - sn * vkq;
          v[k][qi] = sn * vkp + c * vkq;
        }
      }
    }
  }
  int top = 0;
  for (int k = 1; k < 4; ++k)
    if (a[k][k] > a[top][top]) top = k;
  const double qw = v[0][top], qx = v[1][top], qy = v[2][top], qz = v[3][top];
  return {{{1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)},
           {2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)},
           {2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)}}};
}

Coords rotate_translate(const Coords& xs, double angle_z, double angle_x, const Vec3& t) {
  Coords out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Vec3& p = xs[i];
    const Vec3 r1{p[0] * std::cos(angle_z) - p[1] * std::sin(angle_z),
                  p[0] * std::sin(angle_z) + p[1] * std::cos(angle_z), p[2]};
    const Vec3 r2{r1[0], r1[1] * std::cos(angle_x) - r1[2] * std::sin(angle_x),
                  r1[1] * std::sin(angle_x) + r1[2] * std::cos(angle_x)};
    out[i] = r2 + t;
  }
  return out;
}

}  // namespace

TEST_CASE("kabsch on identical clouds") {
  Coords xs = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0.3, 0.4, 1.2}};
  const Alignment a = kabsch_align(xs, xs, std::vector<double>(4, 1.0));
  CHECK(a.weighted_rmsd < 1e-12);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      CHECK(a.rotation[r][c] == doctest::Approx(r == c ? 1.0 : 0.0).epsilon(1e-9));
}

TEST_CASE("kabsch recovers a rigid motion") {
  Rng rng(10);
  Coords xs(9);
  for (auto& p : xs) p = {rng.normal() * 3, rng.normal() * 3, rng.normal() * 3};
  const Coords moved = rotate_translate(xs, 0.9, -0.4, {5, -2, 9});
  const Alignment a = kabsch_align(xs, moved, std::vector<double>(9, 1.0));
  CHECK(a.weighted_rmsd < 1e-9);

  // proper rotation
  double det = 0.0;
  const auto& r = a.rotation;
  det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) -
        r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0]) +
        r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
  CHECK(det == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("kabsch matches Horn's quaternion oracle on weighted fixtures") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 4 + rng.uniform_index(8);
    Coords pred(m), truth(m);
    std::vector<double> w(m);
    for (std::size_t i = 0; i < m; ++i) {
      pred[i] = {rng.normal() * 2, rng.normal() * 2, rng.normal() * 2};
      truth[i] = {rng.normal() * 2, rng.normal() * 2, rng.normal() * 2};
      w[i] = 0.2 + rng.uniform();
    }
    const Alignment got = kabsch_align(pred, truth, w);
    const auto want = horn_rotation(pred, truth, w);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) CHECK(got.rotation[r][c] == doctest::Approx(want[r][c]).epsilon(1e-7));
  }
}

TEST_CASE("kabsch rmsd is invariant under pre-applied rigid motion") {
  Rng rng(14);
  Coords pred(7), truth(7);
  for (std::size_t i = 0; i < 7; ++i) {
    pred[i] = {rng.normal() * 2, rng.normal() * 2, rng.normal() * 2};
    truth[i] = {rng.normal() * 2, rng.normal() * 2, rng.normal() * 2};
  }
  const std::vector<double> w(7, 1.0);
  const double base = kabsch_align(pred, truth, w).weighted_rmsd;
  const double moved = kabsch_align(rotate_translate(pred, 1.1, 0.3, {3, 3, 3}), truth, w).weighted_rmsd;
  CHECK(moved == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("kabsch rejects degenerate clouds") {
  Coords line = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
  Coords fine = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  CHECK_THROWS_AS(kabsch_align(line, fine, std::vector<double>(4, 1.0)), InputError);
  CHECK_THROWS_AS(kabsch_align(fine, line, std::vector<double>(4, 1.0)), InputError);
  CHECK_THROWS_AS(kabsch_align(Coords{{0, 0, 0}, {1, 1, 1}}, Coords{{0, 0, 0}, {1, 1, 1}},
                               std::vector<double>(2, 1.0)),
                  InputError);
}

namespace {

// fixture: L ligand points and P pocket points, both centered at the
// origin, protein confined to radius 7 so every residue sits inside the
// 15 A truth pocket
void shift_fixture(std::size_t n_lig, std::size_t n_prot, Coords& truth,
                   std::vector<TokenKind>& kinds, Rng& rng) {
  truth.clear();
  kinds.clear();
  const auto bounded = [&](double scale) {
    Vec3 p{rng.normal(), rng.normal(), rng.normal()};
    const double n = norm(p);
    return (scale * std::cbrt(rng.uniform()) / (n > 1e-9 ? n : 1.0)) * p;
  };
  // mirror pairs keep both group centroids exactly at the origin while
  // every point stays inside the 15 A pocket radius
  Coords lig;
  for (std::size_t i = 0; i < n_lig / 2; ++i) {
    const Vec3 p = bounded(1.5);
    lig.push_back(p);
    lig.push_back(Vec3{0, 0, 0} - p);
  }
  if (lig.size() < n_lig) lig.push_back({0, 0, 0});
  Coords prot;
  for (std::size_t i = 0; i < n_prot / 2; ++i) {
    const Vec3 p = bounded(7.0);
    prot.push_back(p);
    prot.push_back(Vec3{0, 0, 0} - p);
  }
  if (prot.size() < n_prot) prot.push_back({0, 0, 0});
  for (const auto& p : lig) {
    truth.push_back(p);
    kinds.push_back(TokenKind::Ligand);
  }
  for (const auto& p : prot) {
    truth.push_back(p);
    kinds.push_back(TokenKind::Protein);
  }
}

}  // namespace

TEST_CASE("ligand_rmsd of a perfect pose is zero") {
  Rng rng(15);
  Coords truth;
  std::vector<TokenKind> kinds;
  shift_fixture(3, 12, truth, kinds, rng);
  CHECK(ligand_rmsd(truth, truth, kinds).rmsd < 1e-12);
}

TEST_CASE("ligand_rmsd of a rigidly shifted ligand matches the closed form") {
  // with ligand and pocket centroids at the origin the optimal rotation is
  // the identity and the alignment absorbs L/(L+P) of the shift, leaving
  // RMSD = P/(L+P) * |delta|
  Rng rng(16);
  Coords truth;
  std::vector<TokenKind> kinds;
  const std::size_t n_lig = 3, n_prot = 96;
  shift_fixture(n_lig, n_prot, truth, kinds, rng);
  Coords pred = truth;
  const Vec3 delta{3.0, 0.0, 0.0};
  for (std::size_t i = 0; i < n_lig; ++i) pred[i] = pred[i] + delta;

  const double want = 3.0 * static_cast<double>(n_prot) / static_cast<double>(n_lig + n_prot);
  // note: with mirror pairs every protein token lies in the truth pocket
  const RmsdResult res = ligand_rmsd(pred, truth, kinds, /*chirality_blind=*/false);
  CHECK(!res.pocket_missing);
  CHECK(res.rmsd == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("chirality-blind mode takes the mirror minimum") {
  Rng rng(17);
  Coords truth;
  std::vector<TokenKind> kinds;
  shift_fixture(5, 30, truth, kinds, rng);
  Coords mirrored = truth;
  for (auto& p : mirrored) p[0] = -p[0];
  const double strict = ligand_rmsd(mirrored, truth, kinds, false).rmsd;
  const double blind = ligand_rmsd(mirrored, truth, kinds, true).rmsd;
  CHECK(blind < 1e-9);
  CHECK(strict > blind);
}

TEST_CASE("automorphism enumeration on labeled graphs") {
  // path of 3 with uniform labels: identity + reversal
  std::vector<Bond> path = {{0, 1, 1}, {1, 2, 1}};
  auto autos = ligand_automorphisms(3, path, {"C", "C", "C"});
  CHECK(autos.size() == 2);

  // distinct end labels kill the reversal
  autos = ligand_automorphisms(3, path, {"C", "C", "N"});
  CHECK(autos.size() == 1);

  // 6-cycle with uniform labels: the dihedral group, order 12
  std::vector<Bond> cycle;
  for (std::size_t i = 0; i < 6; ++i) cycle.push_back({i, (i + 1) % 6, 1});
  autos = ligand_automorphisms(6, cycle, std::vector<std::string>(6, "C"));
  CHECK(autos.size() == 12);

  // bond orders matter: alternating single/double bonds halve the group
  std::vector<Bond> kekulized;
  for (std::size_t i = 0; i < 6; ++i) kekulized.push_back({i, (i + 1) % 6, i % 2 == 0 ? 2 : 1});
  autos = ligand_automorphisms(6, kekulized, std::vector<std::string>(6, "C"));
  CHECK(autos.size() == 6);

  // cap: a star with 9 uniform leaves has 9! > 10000 automorphisms
  std::vector<Bond> star;
  for (std::size_t i = 1; i <= 9; ++i) star.push_back({0, i, 1});
  autos = ligand_automorphisms(10, star, std::vector<std::string>(10, "C"), 10000);
  CHECK(autos.empty());
}

TEST_CASE("symmetry-corrected rmsd basics") {
  Rng rng(18);
  // asymmetric ligand: correction equals the plain value
  Coords truth;
  std::vector<TokenKind> kinds;
  shift_fixture(3, 20, truth, kinds, rng);
  std::vector<Bond> chain = {{0, 1, 1}, {1, 2, 1}};
  Coords pred = truth;
  for (std::size_t i = 0; i < 3; ++i)
    pred[i] = pred[i] + Vec3{0.5 * rng.normal(), 0.5 * rng.normal(), 0.5 * rng.normal()};
  const double plain = ligand_rmsd(pred, truth, kinds).rmsd;
  const SymRmsdResult corr =
      symmetry_corrected_rmsd(pred, truth, kinds, chain, {"C", "N", "O"});
  CHECK(corr.rmsd == doctest::Approx(plain).epsilon(1e-12));
  CHECK(corr.n_automorphisms == 1);
}

TEST_CASE("6-cycle rotated relabeling is recognized as exact") {
  Rng rng(19);
  // hexagon ligand in the xy plane plus a protein pocket context
  Coords truth;
  std::vector<TokenKind> kinds;
  for (std::size_t i = 0; i < 6; ++i) {
    const double a = M_PI / 3.0 * static_cast<double>(i);
    truth.push_back({1.4 * std::cos(a), 1.4 * std::sin(a), 0.0});
    kinds.push_back(TokenKind::Ligand);
  }
  for (int i = 0; i < 20; ++i) {
    truth.push_back({6 * rng.normal(), 6 * rng.normal(), 6 * rng.normal()});
    kinds.push_back(TokenKind::Protein);
  }
  std::vector<Bond> cycle;
  for (std::size_t i = 0; i < 6; ++i) cycle.push_back({i, (i + 1) % 6, 1});

  // the pose places atom v at truth position v+1: a pure relabeling
  Coords pred = truth;
  for (std::size_t v = 0; v < 6; ++v) pred[v] = truth[(v + 1) % 6];

  const double plain = ligand_rmsd(pred, truth, kinds).rmsd;
  const SymRmsdResult corr =
      symmetry_corrected_rmsd(pred, truth, kinds, cycle, std::vector<std::string>(6, "C"));
  CHECK(plain > 0.1);
  CHECK(corr.rmsd < 1e-9);
  CHECK(corr.rmsd <= plain);
}

TEST_CASE("two-fold symmetric ligand picks the better correspondence") {
  Rng rng(20);
  Coords truth;
  std::vector<TokenKind> kinds;
  // symmetric 4-atom ligand: 0-1-2-3 path with a 2-fold flip (0<->3, 1<->2)
  truth = {{-2.25, 0, 0}, {-0.75, 0, 0}, {0.75, 0, 0}, {2.25, 0, 0}};
  kinds.assign(4, TokenKind::Ligand);
  for (int i = 0; i < 25; ++i) {
    truth.push_back({5 * rng.normal(), 5 * rng.normal(), 5 * rng.normal()});
    kinds.push_back(TokenKind::Protein);
  }
  std::vector<Bond> path = {{0, 1, 1}, {1, 2, 1}, {2, 3, 1}};

  Coords pred = truth;
  pred[0] = truth[3];
  pred[1] = truth[2];
  pred[2] = truth[1];
  pred[3] = truth[0]; // flipped correspondence
  const double plain = ligand_rmsd(pred, truth, kinds, false).rmsd;
  const SymRmsdResult corr = symmetry_corrected_rmsd(pred, truth, kinds, path,
                                                     std::vector<std::string>(4, "C"), false);
  CHECK(corr.n_automorphisms == 2);
  CHECK(corr.rmsd < 1e-9);
  CHECK(corr.rmsd <= plain);
}

TEST_CASE("lddt_pli endpoint values") {
  Rng rng(22);
  Coords truth;
  std::vector<TokenKind> kinds;
  // one ligand atom surrounded by protein tokens at ~4 A
  truth.push_back({0, 0, 0});
  kinds.push_back(TokenKind::Ligand);
  for (int i = 0; i < 8; ++i) {
    const double a = M_PI / 4.0 * i;
    truth.push_back({4.0 * std::cos(a), 4.0 * std::sin(a), 0.1 * i});
    kinds.push_back(TokenKind::Protein);
  }
  CHECK(*lddt_pli(truth, truth, kinds) == doctest::Approx(1.0));

  // every interface distance off by 10 A: all thresholds fail
  Coords far = truth;
  far[0] = {0, 0, 100};
  // keep inclusion from truth but wreck predicted distances
  CHECK(*lddt_pli(far, truth, kinds) == doctest::Approx(0.0));

  // no interface pairs within the radius: undefined
  Coords sparse = {{0, 0, 0}, {100, 0, 0}};
  CHECK(!lddt_pli(sparse, sparse, {TokenKind::Ligand, TokenKind::Protein}).has_value());
}

TEST_CASE("lddt_pli fractional fixture") {
  // 4 interface pairs in truth; prediction keeps half perfect and moves the
  // other half off by 3 A (within only the 4 A threshold): 0.5*1 + 0.5*(1/4)
  Coords truth = {{0, 0, 0}, {3, 0, 0}, {-3, 0, 0}, {0, 3, 0}, {0, -3, 0}};
  const std::vector<TokenKind> kinds = {TokenKind::Ligand, TokenKind::Protein, TokenKind::Protein,
                                        TokenKind::Protein, TokenKind::Protein};
  Coords pred = truth;
  pred[3] = {0, 6, 0};
  pred[4] = {0, -6, 0};
  CHECK(*lddt_pli(pred, truth, kinds) == doctest::Approx(0.625).epsilon(1e-12));
}

TEST_CASE("lddt_pli is invariant under rigid motion of the prediction") {
  Rng rng(24);
  // find a seed whose complex has interface pairs inside the 6 A radius
  TokenizedComplex c;
  bool found = false;
  for (std::uint64_t seed = 90; seed < 120 && !found; ++seed) {
    SyntheticGenConfig cfg;
    cfg.n_ligand = 5;
    cfg.n_protein = 20;
    cfg.pocket_fraction = 1.0;
    cfg.seed = seed;
    c = generate_synthetic_complex(cfg);
    const Mat dist = distance_matrix(*c.coords);
    for (std::size_t i = 0; i < 5 && !found; ++i)
      for (std::size_t j = 5; j < c.size(); ++j)
        if (dist(i, j) < 6.0) found = true;
  }
  REQUIRE(found);
  Coords pred = *c.coords;
  for (auto& p : pred) p = p + Vec3{0.4 * rng.normal(), 0.4 * rng.normal(), 0.4 * rng.normal()};
  const auto base = lddt_pli(pred, *c.coords, c.kinds());
  const auto moved = lddt_pli(rotate_translate(pred, 0.8, 1.2, {10, 0, -4}), *c.coords, c.kinds());
  REQUIRE(base.has_value());
  CHECK(*moved == doctest::Approx(*base).epsilon(1e-9));
}

TEST_CASE("success_rates strict thresholds") {
  std::vector<EvalRecord> all_good(4, {0.5, 0.95});
  auto rates = success_rates(all_good);
  CHECK(rates.rate_rmsd2 == 1.0);
  CHECK(rates.rate_combined == 1.0);

  // rmsd 1.9 with lddt 0.79 counts only toward the first rate
  std::vector<EvalRecord> edge = {{1.9, 0.79}};
  rates = success_rates(edge);
  CHECK(rates.rate_rmsd2 == 1.0);
  CHECK(rates.rate_combined == 0.0);

  // exact thresholds are excluded
  std::vector<EvalRecord> at = {{2.0, 0.8}};
  rates = success_rates(at);
  CHECK(rates.rate_rmsd2 == 0.0);
  CHECK(rates.rate_combined == 0.0);

  std::vector<EvalRecord> mixed = {{0.5, 0.9},  {1.5, 0.7},  {2.5, 0.95}, {1.0, 0.85},
                                   {3.0, 0.2},  {1.99, 0.81}, {0.1, 0.99}, {2.01, 0.9},
                                   {1.2, 0.79}, {0.9, 0.81}};
  rates = success_rates(mixed);
  std::size_t a = 0, b = 0;
  for (const auto& r : mixed) {
    if (r.rmsd < 2.0) ++a;
    if (r.rmsd < 2.0 && r.lddt > 0.8) ++b;
  }
  CHECK(rates.rate_rmsd2 == doctest::Approx(a / 10.0));
  CHECK(rates.rate_combined == doctest::Approx(b / 10.0));
}

TEST_CASE("entropy_calibration binning") {
  // all samples in the first bin, all successful
  metrics::CalibrationReport rep =
      entropy_calibration({0.1, 0.2, 0.05}, {true, true, true});
  CHECK(rep.counts[0] == 3);
  CHECK(*rep.success_rate[0] == 1.0);
  CHECK(!rep.success_rate[1].has_value());
  CHECK(!rep.success_rate[3].has_value());

  // hand-binned fixture
  const std::vector<double> h = {0.1, 0.3, 0.3, 0.6, 0.9, 1.0};
  const std::vector<bool> s = {true, true, false, false, true, false};
  rep = entropy_calibration(h, s);
  CHECK(rep.counts == std::vector<std::size_t>{1, 2, 1, 2});
  CHECK(*rep.success_rate[0] == doctest::Approx(1.0));
  CHECK(*rep.success_rate[1] == doctest::Approx(0.5));
  CHECK(*rep.success_rate[2] == doctest::Approx(0.0));
  CHECK(*rep.success_rate[3] == doctest::Approx(0.5)); // H = 1.0 falls in the last bin
}
