#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "coarsebind/distogram.hpp"
#include "coarsebind/geom.hpp"

namespace coarsebind::pose {

struct OptConfig {
  double learning_rate = 1.0;
  std::size_t max_iters = 5000;
  double tol = 1e-3;
  std::size_t patience = 20; // consecutive small-change iterations
  std::size_t n_samples = 10;
  std::uint64_t seed = 0;
  double pocket_cutoff = 15.0;
};

struct PoseSample {
  Coords coords;
  double final_loss = 0.0;
  std::size_t iters = 0;
  bool converged = false;
  bool failed = false; // non-finite loss even after one reseeded retry
};

struct Reference {
  Mat ref;                         // symmetric target distances, ligand block first
  std::vector<std::size_t> tokens; // original token indices (ligand then pocket)
  std::size_t n_ligand = 0;
  bool ligand_only = false; // empty pocket, proceeding with the ligand block alone
};

// Counts consecutive iterations with |loss change| < tol; fires once the
// count reaches `patience`.
class ConvergenceDetector {
 public:
  ConvergenceDetector(double tol, std::size_t patience) : tol_(tol), patience_(patience) {}
  bool update(double loss) {
    if (std::abs(loss - prev_) < tol_)
      ++stable_;
    else
      stable_ = 0;
    prev_ = loss;
    return stable_ >= patience_;
  }

 private:
  double tol_;
  std::size_t patience_;
  double prev_ = std::numeric_limits<double>::infinity();
  std::size_t stable_ = 0;
};

// Mean squared distance error over ordered pairs:
//   1/(M(M-1)) * sum_{i != j} w_ij (||x_i - x_j|| - ref_ij)^2
// weights == nullptr means w_ij = 1.
double optimization_loss(const Coords& coords, const Mat& ref, const Mat* weights = nullptr);

// Loss plus gradient with respect to the coordinates.
double optimization_loss_grad(const Coords& coords, const Mat& ref, const Mat* weights,
                              std::vector<double>& grad);

// Expected distances assembled blockwise over ligand + pocket tokens.
Reference build_reference(const distogram::Distogram& d, double pocket_cutoff = 15.0);

// Multi-start Adam optimization of a random point cloud against ref.
// Sample s is seeded with cfg.seed + s; a sample whose loss goes non-finite
// is restarted once with a fresh seed and marked failed if it recurs.
std::vector<PoseSample> optimize_pose(const Mat& ref, const OptConfig& cfg);

// Index of the lowest-loss non-failed sample; ties go to the lowest index.
std::size_t select_best_index(const std::vector<PoseSample>& samples);
const PoseSample& select_best(const std::vector<PoseSample>& samples);

}  // namespace coarsebind::pose
