#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lrlgf/dplr.hpp"
#include "lrlgf/mlp.hpp"
#include "lrlgf/tasks.hpp"

namespace lrlgf {

enum class BeliefTag { Filtered, Predicted, Smoothed };

struct GaussianBelief {
  VectorXd mean;
  DplrSym precision;
  BeliefTag tag = BeliefTag::Filtered;
};

// Affine-in-task-index regularization strength: lambda(t) = intercept +
// slope * (t - 1), t counting from 1.
struct LambdaSchedule {
  double intercept = 1.0;
  double slope = 0.0;

  double operator()(int t) const { return intercept + slope * (t - 1); }
};

struct FilterConfig {
  LambdaSchedule lambda;
  int rank = 10;
  ProcessNoise q;
  double initial_precision = 1e-4;  // scale of the isotropic initial prior
  TrainConfig train;
  int curvature_samples = 32;
  int chunk_size = 4;
  // Off by default: fold the energy of the discarded SVD tail into the
  // diagonal instead of dropping it.
  bool absorb_svd_tail = false;
};

// Ordered filtered beliefs, one per task, plus everything the smoother needs.
struct FilterTrace {
  std::vector<GaussianBelief> beliefs;
  std::vector<bool> gap;  // true where the update was skipped
  ProcessNoise q;
  MlpArch arch;
  FilterConfig config;

  int tasks() const { return static_cast<int>(beliefs.size()); }
};

// Predict step: mean carries over, precision through predict_precision.
GaussianBelief predict(const GaussianBelief& b, const ProcessNoise& q);

// Update step: regularized training anchored at the predicted belief, GGN
// curvature columns appended to the carried-over low-rank square root, then a
// rank-k truncation. The diagonal passes through unchanged.
GaussianBelief update(const GaussianBelief& pred, const TaskDataset& data, const MlpArch& arch,
                      const FilterConfig& cfg, int task_index);

// Runs predict/update over the whole task sequence starting from the
// isotropic prior. Gap-marked tasks get predict-only treatment.
FilterTrace run_filter(const std::vector<TaskPair>& tasks, const MlpArch& arch,
                       const FilterConfig& cfg);

// Trace persistence: one belief file per task plus metadata.json.
void save_trace(const std::string& dir, const FilterTrace& trace);
FilterTrace load_trace(const std::string& dir);

void save_belief(std::ostream& out, const GaussianBelief& b);
GaussianBelief load_belief(std::istream& in);

}  // namespace lrlgf
