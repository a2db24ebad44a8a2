#include <algorithm>
#include <cmath>

#include "coarsebind/affinity.hpp"
#include "coarsebind/epinet.hpp"
#include "coarsebind/errors.hpp"
#include "coarsebind/rng.hpp"
#include "doctest.h"

using namespace coarsebind;
using namespace coarsebind::epinet;

namespace {

EpinetConfig tiny_epinet(std::size_t latent_dim = 4, bool in_body = true) {
  EpinetConfig cfg;
  cfg.index_dim = 8;
  cfg.hidden = {16, 16};
  cfg.latent_dim = latent_dim;
  cfg.index_in_body = in_body;
  cfg.seed = 5;
  return cfg;
}

// toy regression task with a residual the epinet can actually learn from
// the latent, plus a little irreducible noise
std::vector<EpinetRecord> toy_records(std::size_t n, std::uint64_t seed, double spread = 1.0) {
  Rng rng(seed);
  std::vector<EpinetRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    EpinetRecord r;
    r.assay_id = "assay" + std::to_string(i % 3);
    r.latent = {spread * rng.normal(), spread * rng.normal(), spread * rng.normal(),
                spread * rng.normal()};
    r.y_true = 2.0 * std::sin(r.latent[0]) + r.latent[1];
    r.y_base = r.y_true - 0.8 * std::sin(2.0 * r.latent[0]) - 0.05 * rng.normal();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

TEST_CASE("zero index gives zero residual") {
  const EpinetConfig cfg = tiny_epinet();
  const EpinetParams params = epinet_init(cfg);
  Rng rng(1);
  const std::vector<double> g = rng.normal_vector(cfg.latent_dim);
  const std::vector<double> z(cfg.index_dim, 0.0);
  CHECK(epinet_forward(g, z, params, cfg) == 0.0);
}

TEST_CASE("residual is linear in the index at the head") {
  // with the index kept out of the MLP body the whole map is linear in z
  const EpinetConfig cfg = tiny_epinet(4, /*in_body=*/false);
  const EpinetParams params = epinet_init(cfg);
  Rng rng(2);
  const std::vector<double> g = rng.normal_vector(cfg.latent_dim);
  const std::vector<double> z1 = rng.normal_vector(cfg.index_dim);
  const std::vector<double> z2 = rng.normal_vector(cfg.index_dim);

  const double r1 = epinet_forward(g, z1, params, cfg);
  const double r2 = epinet_forward(g, z2, params, cfg);
  std::vector<double> sum(cfg.index_dim);
  for (std::size_t i = 0; i < cfg.index_dim; ++i) sum[i] = z1[i] + z2[i];
  CHECK(epinet_forward(g, sum, params, cfg) == doctest::Approx(r1 + r2).epsilon(1e-9));

  std::vector<double> scaled(cfg.index_dim);
  for (std::size_t i = 0; i < cfg.index_dim; ++i) scaled[i] = 3.5 * z1[i];
  CHECK(epinet_forward(g, scaled, params, cfg) == doctest::Approx(3.5 * r1).epsilon(1e-9));
}

TEST_CASE("with the index in the body, linearity holds at the inner product") {
  const EpinetConfig cfg = tiny_epinet(4, /*in_body=*/true);
  const EpinetParams params = epinet_init(cfg);
  Rng rng(3);
  const std::vector<double> g = rng.normal_vector(cfg.latent_dim);
  const std::vector<double> z = rng.normal_vector(cfg.index_dim);

  // fixed features dotted with a scaled index scale linearly
  const std::vector<double> ft = epinet_features(g, z, params.trainable, cfg);
  double dot1 = 0.0;
  for (std::size_t i = 0; i < cfg.index_dim; ++i) dot1 += ft[i] * z[i];
  double dot2 = 0.0;
  for (std::size_t i = 0; i < cfg.index_dim; ++i) dot2 += ft[i] * (2.0 * z[i]);
  CHECK(dot2 == doctest::Approx(2.0 * dot1).epsilon(1e-12));
}

TEST_CASE("prior contributes even when the trainable network is zeroed") {
  const EpinetConfig cfg = tiny_epinet();
  EpinetParams params = epinet_init(cfg);
  for (auto& e : params.trainable.entries()) e.tensor.fill(0.0);
  Rng rng(4);
  const std::vector<double> g = rng.normal_vector(cfg.latent_dim);
  const std::vector<double> z = rng.normal_vector(cfg.index_dim);
  const double r = epinet_forward(g, z, params, cfg);
  CHECK(r != 0.0);

  // and the prior scale is a pure multiplier of that contribution
  EpinetConfig scaled = cfg;
  scaled.prior_scale = 2.5;
  CHECK(epinet_forward(g, z, params, scaled) == doctest::Approx(2.5 * r).epsilon(1e-12));
}

TEST_CASE("training leaves the prior bit-identical and reduces the loss") {
  const EpinetConfig cfg = tiny_epinet();
  const auto data = toy_records(30, 6);

  const EpinetParams before = epinet_init(cfg);
  EpinetTrainOptions opts;
  opts.steps = 800;
  opts.learning_rate = 3e-3;
  opts.seed = 7;
  const EpinetTrainResult result = train_epinet(data, cfg, opts);

  for (std::size_t e = 0; e < before.prior.entries().size(); ++e)
    CHECK(before.prior.entries()[e].tensor.data ==
          result.params.prior.entries()[e].tensor.data);

  // training loss drops by at least half between the first and last stretch
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    head += result.step_loss[i];
    tail += result.step_loss[result.step_loss.size() - 1 - i];
  }
  CHECK(tail < 0.5 * head);
}

TEST_CASE("sample paths are deterministic, shared, and prefix-stable") {
  const EpinetConfig cfg = tiny_epinet();
  const EpinetParams params = epinet_init(cfg);
  Rng rng(8);
  std::vector<std::vector<double>> latents;
  for (int i = 0; i < 4; ++i) latents.push_back(rng.normal_vector(cfg.latent_dim));
  latents.push_back(latents[1]); // identical latent pair
  const std::vector<double> base = {1.0, 2.0, 3.0, 4.0, 2.0};

  const EpinetPosterior p100 = sample_posterior(latents, base, 100, 42, params, cfg);
  const EpinetPosterior p30 = sample_posterior(latents, base, 30, 42, params, cfg);
  for (std::size_t r = 0; r < 30; ++r)
    for (std::size_t c = 0; c < 5; ++c) CHECK(p100.samples(r, c) == p30.samples(r, c));

  // identical latents with identical bases give identical columns
  for (std::size_t r = 0; r < 100; ++r)
    CHECK(p100.samples(r, 1) == p100.samples(r, 4));

  // K = 1 with a fixed seed is one deterministic path
  const EpinetPosterior one_a = sample_posterior(latents, base, 1, 9, params, cfg);
  const EpinetPosterior one_b = sample_posterior(latents, base, 1, 9, params, cfg);
  CHECK(one_a.samples.v == one_b.samples.v);
}

TEST_CASE("column means of an out-of-body epinet sit near the base predictions") {
  // with z outside the body, residuals are odd in z, so the sample mean
  // converges to the base prediction
  const EpinetConfig cfg = tiny_epinet(4, /*in_body=*/false);
  const EpinetParams params = epinet_init(cfg);
  Rng rng(10);
  std::vector<std::vector<double>> latents = {rng.normal_vector(4), rng.normal_vector(4)};
  const std::vector<double> base = {5.0, 7.0};
  const std::size_t k = 20000;
  const EpinetPosterior post = sample_posterior(latents, base, k, 11, params, cfg);
  for (std::size_t c = 0; c < 2; ++c) {
    const MarginalStats stats = marginal_stats(post, c);
    const double se = stats.std_dev / std::sqrt(static_cast<double>(k));
    CHECK(std::abs(stats.mean - base[c]) < 5.0 * se);
  }
}

TEST_CASE("marginal statistics") {
  EpinetPosterior post;
  post.samples = Mat(6, 2);
  for (std::size_t r = 0; r < 6; ++r) {
    post.samples(r, 0) = 3.5; // constant column
    post.samples(r, 1) = static_cast<double>(r);
  }
  const MarginalStats c0 = marginal_stats(post, 0);
  CHECK(c0.std_dev == 0.0);
  CHECK(*c0.iqr == 0.0);

  // sorted {1..1000}/1000: IQR is 0.5 up to the interpolation convention
  EpinetPosterior grid;
  grid.samples = Mat(1000, 1);
  for (std::size_t r = 0; r < 1000; ++r)
    grid.samples(r, 0) = static_cast<double>(r + 1) / 1000.0;
  const MarginalStats gs = marginal_stats(grid, 0);
  CHECK(*gs.iqr == doctest::Approx(0.5).epsilon(2e-3));
  CHECK(*gs.iqr == doctest::Approx(0.4995).epsilon(1e-12)); // linear interpolation

  // agreement with the direct formulas on random columns
  Rng rng(12);
  EpinetPosterior rnd;
  rnd.samples = Mat(257, 1);
  std::vector<double> col(257);
  for (std::size_t r = 0; r < 257; ++r) {
    col[r] = rng.normal();
    rnd.samples(r, 0) = col[r];
  }
  const MarginalStats rs = marginal_stats(rnd, 0);
  double mean = 0.0;
  for (const double v : col) mean += v;
  mean /= 257.0;
  double ss = 0.0;
  for (const double v : col) ss += (v - mean) * (v - mean);
  CHECK(rs.mean == doctest::Approx(mean).epsilon(1e-12));
  CHECK(rs.std_dev == doctest::Approx(std::sqrt(ss / 256.0)).epsilon(1e-12));
  CHECK(*rs.iqr == doctest::Approx(quantile(col, 0.75) - quantile(col, 0.25)).epsilon(1e-12));

  // IQR needs at least 4 paths
  EpinetPosterior few;
  few.samples = Mat(3, 1);
  CHECK(!marginal_stats(few, 0).iqr.has_value());
}

TEST_CASE("training shrinks sample spread near the data but not far away") {
  const EpinetConfig cfg = tiny_epinet();
  const auto train_data = toy_records(40, 20, 0.8);
  EpinetTrainOptions opts;
  opts.steps = 1500;
  opts.learning_rate = 3e-3;
  opts.seed = 21;
  const EpinetParams params = train_epinet(train_data, cfg, opts).params;

  std::vector<std::vector<double>> latents;
  std::vector<double> base;
  for (const auto& rec : train_data) {
    latents.push_back(rec.latent);
    base.push_back(rec.y_base);
  }
  const std::size_t n_train = latents.size();
  Rng rng(22);
  for (std::size_t i = 0; i < n_train; ++i) {
    // far out-of-distribution latents
    std::vector<double> g = rng.normal_vector(cfg.latent_dim);
    for (auto& v : g) v = 6.0 + 2.0 * std::abs(v);
    latents.push_back(g);
    base.push_back(0.0);
  }
  const EpinetPosterior post = sample_posterior(latents, base, 400, 23, params, cfg);

  std::vector<double> train_std, ood_std;
  for (std::size_t c = 0; c < n_train; ++c)
    train_std.push_back(marginal_stats(post, c).std_dev);
  for (std::size_t c = n_train; c < 2 * n_train; ++c)
    ood_std.push_back(marginal_stats(post, c).std_dev);
  std::sort(train_std.begin(), train_std.end());
  std::sort(ood_std.begin(), ood_std.end());
  CHECK(train_std[n_train / 2] < ood_std[n_train / 2]);
}

TEST_CASE("iqr calibration fixtures") {
  const std::vector<double> edges = {0.0, 0.5, 1.0, 2.0};
  // all predictions exact: every occupied bin rate is 1
  metrics::CalibrationReport rep =
      iqr_calibration({5.0, 6.0, 7.0}, {5.0, 6.0, 7.0}, {0.1, 0.7, 1.5}, edges);
  for (std::size_t b = 0; b < 3; ++b) {
    REQUIRE(rep.success_rate[b].has_value());
    CHECK(*rep.success_rate[b] == 1.0);
  }

  // counting oracle: success means |pred - truth| <= 1
  rep = iqr_calibration({5.0, 5.0, 5.0, 5.0}, {5.5, 6.5, 5.9, 7.0}, {0.2, 0.3, 1.5, 1.7}, edges);
  CHECK(rep.counts == std::vector<std::size_t>{2, 0, 2});
  CHECK(*rep.success_rate[0] == doctest::Approx(0.5)); // 0.5 ok, 1.5 off
  CHECK(!rep.success_rate[1].has_value());
  CHECK(*rep.success_rate[2] == doctest::Approx(0.5)); // 0.9 ok, 2.0 off
}
