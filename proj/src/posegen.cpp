#include "coarsebind/posegen.hpp"

#include <cmath>
#include <limits>

#include "coarsebind/errors.hpp"
#include "coarsebind/pocket.hpp"
#include "coarsebind/rng.hpp"
#include "coarsebind/tensor.hpp"

namespace coarsebind::pose {

double optimization_loss_grad(const Coords& coords, const Mat& ref, const Mat* weights,
                              std::vector<double>& grad) {
  const std::size_t m = coords.size();
  if (m < 2) throw InputError("optimization_loss: need at least 2 points");
  if (ref.rows != m || ref.cols != m) throw InputError("optimization_loss: ref shape mismatch");
  if (weights && (weights->rows != m || weights->cols != m))
    throw InputError("optimization_loss: weight shape mismatch");

  const bool want_grad = !grad.empty();
  if (want_grad) {
    if (grad.size() != 3 * m) throw InputError("optimization_loss: gradient buffer size");
    std::fill(grad.begin(), grad.end(), 0.0);
  }

  const double scale = 1.0 / (static_cast<double>(m) * static_cast<double>(m - 1));
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      const double w = weights ? (*weights)(i, j) : 1.0;
      if (w == 0.0) continue;
      const Vec3 diff = coords[i] - coords[j];
      const double dij = norm(diff);
      const double r = dij - ref(i, j);
      loss += 2.0 * scale * w * r * r; // ordered pairs (i,j) and (j,i)
      if (want_grad) {
        const double coef = 4.0 * scale * w * r / std::max(dij, 1e-12);
        for (int k = 0; k < 3; ++k) {
          grad[3 * i + k] += coef * diff[k];
          grad[3 * j + k] -= coef * diff[k];
        }
      }
    }
  }
  return loss;
}

double optimization_loss(const Coords& coords, const Mat& ref, const Mat* weights) {
  std::vector<double> no_grad;
  return optimization_loss_grad(coords, ref, weights, no_grad);
}

Reference build_reference(const distogram::Distogram& d, double pocket_cutoff) {
  std::vector<std::size_t> lig;
  for (std::size_t i = 0; i < d.kinds.size(); ++i)
    if (d.kinds[i] == TokenKind::Ligand) lig.push_back(i);
  if (lig.empty()) throw InputError("build_reference: no ligand tokens");

  const Mat expected = distogram::expected_distance_matrix(d);
  const std::vector<std::size_t> pocket =
      pocket::pocket_residues(expected, d.kinds, pocket_cutoff);

  Reference out;
  out.n_ligand = lig.size();
  out.ligand_only = pocket.empty();
  out.tokens = lig;
  out.tokens.insert(out.tokens.end(), pocket.begin(), pocket.end());

  const std::size_t m = out.tokens.size();
  out.ref = Mat(m, m);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a + 1; b < m; ++b) {
      // symmetrized expected distance between the original tokens
      const double v =
          0.5 * (expected(out.tokens[a], out.tokens[b]) + expected(out.tokens[b], out.tokens[a]));
      out.ref(a, b) = v;
      out.ref(b, a) = v;
    }
  }
  return out;
}

namespace {

PoseSample run_one(const Mat& ref, const OptConfig& cfg, std::uint64_t sample_seed) {
  const std::size_t m = ref.rows;
  Rng rng = Rng(cfg.seed).fork("pose_init", sample_seed);
  Coords x(m);
  for (auto& p : x) p = {rng.normal(), rng.normal(), rng.normal()};

  Adam adam;
  ConvergenceDetector detector(cfg.tol, cfg.patience);
  std::vector<double> grad(3 * m, 0.0);
  std::vector<double> flat(3 * m);

  PoseSample sample;
  for (std::size_t t = 1; t <= cfg.max_iters; ++t) {
    const double loss = optimization_loss_grad(x, ref, nullptr, grad);
    if (!std::isfinite(loss)) {
      sample.failed = true;
      sample.final_loss = std::numeric_limits<double>::infinity();
      sample.iters = t;
      return sample;
    }
    for (std::size_t i = 0; i < m; ++i)
      for (int k = 0; k < 3; ++k) flat[3 * i + k] = x[i][k];
    adam.step(flat, grad, cfg.learning_rate);
    for (std::size_t i = 0; i < m; ++i)
      for (int k = 0; k < 3; ++k) x[i][k] = flat[3 * i + k];
    sample.final_loss = loss;
    sample.iters = t;
    if (detector.update(loss)) {
      sample.converged = true;
      break;
    }
  }
  sample.coords = std::move(x);
  return sample;
}

}  // namespace

std::vector<PoseSample> optimize_pose(const Mat& ref, const OptConfig& cfg) {
  if (ref.rows != ref.cols || ref.rows < 2) throw InputError("optimize_pose: bad reference");
  for (std::size_t i = 0; i < ref.rows; ++i)
    for (std::size_t j = 0; j < ref.cols; ++j)
      if (!std::isfinite(ref(i, j))) throw InputError("optimize_pose: non-finite reference");

  std::vector<PoseSample> samples;
  samples.reserve(cfg.n_samples);
  for (std::size_t s = 0; s < cfg.n_samples; ++s) {
    PoseSample sample = run_one(ref, cfg, s);
    if (sample.failed) {
      // one reseeded retry, then give up on this sample
      sample = run_one(ref, cfg, s + 0x9e3779b97f4a7c15ULL);
    }
    samples.push_back(std::move(sample));
  }
  return samples;
}

std::size_t select_best_index(const std::vector<PoseSample>& samples) {
  if (samples.empty()) throw InputError("select_best: no samples");
  std::size_t best = samples.size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].failed) continue;
    if (best == samples.size() || samples[i].final_loss < samples[best].final_loss) best = i;
  }
  if (best == samples.size()) throw InputError("select_best: all samples failed");
  return best;
}

const PoseSample& select_best(const std::vector<PoseSample>& samples) {
  return samples[select_best_index(samples)];
}

}  // namespace coarsebind::pose
