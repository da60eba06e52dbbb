#pragma once

#include <vector>

#include "lrlgf/filter.hpp"

namespace lrlgf {

// Backward Rauch-Tung-Striebel smoothing in diagonal plus low-rank
// information form. The smoother sees only the trace (beliefs and Q), never
// any task data.

// Smoothing gain G = (I + Q P)^-1, realized as diag + low-rank:
//   d' = 1 + q d,   D^G = 1/d',
//   U^G = diag(q/d') U,   V^G = diag(1/d') U,
//   S^G = -(S^-1 + U^T diag(q/d') U)^-1.
// Q = 0 yields the exact identity (rank 0).
DplrGain smoother_gain(const DplrSym& p, const ProcessNoise& q);

// m_t + G (m_next_smoothed - m_t); the random-walk predicted mean is m_t.
VectorXd smooth_mean_step(const VectorXd& m_t, const VectorXd& m_next_smoothed,
                          const DplrGain& gain);

// One backward covariance recursion
//   C^s_t = C_t - G C_t G^T + G (C^s_{t+1} - Q) G^T,
// carried out on the covariance-side DPLR forms (both precisions are inverted
// first), expanded exactly into a diagonal plus low-rank sum, truncated to
// rank k, and inverted back to a precision. Negative entries of the
// (C^s_{t+1} diagonal - Q) term are clamped to zero.
DplrSym smooth_precision_step(const DplrSym& p_t, const DplrSym& p_next_smoothed,
                              const ProcessNoise& q, const DplrGain& gain, Eigen::Index k);

// Full backward sweep; returns one smoothed belief per task.
std::vector<GaussianBelief> run_smoother(const FilterTrace& trace, Eigen::Index k);

struct GapInference {
  int task_index = 0;             // 1-based position in the sequence
  GaussianBelief predict_only;    // the filtered (predict-only) belief at the gap
  GaussianBelief smoothed;        // the smoothed belief at the gap
};

// Smoothed vs predict-only beliefs at every gap slot of the trace.
std::vector<GapInference> infer_between(const FilterTrace& trace, Eigen::Index k);

}  // namespace lrlgf
