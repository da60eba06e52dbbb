#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lrlgf/dplr.hpp"

namespace lrlgf {

using Eigen::VectorXi;

enum class Activation : uint32_t { Tanh = 0 };

struct MlpArch {
  int input = 0;
  std::vector<int> hidden;
  int output = 0;
  Activation activation = Activation::Tanh;

  // [input, hidden..., output]
  std::vector<int> layer_sizes() const;
  int num_layers() const { return static_cast<int>(hidden.size()) + 1; }
  Eigen::Index param_count() const;

  bool operator==(const MlpArch&) const = default;
};

// Flat parameter layout. Layer l (fan_in -> fan_out) occupies a contiguous
// slice: first the weight matrix, column-major as fan_out x fan_in, then the
// bias. locate/flatten form the bijection between flat indices and structured
// coordinates.
class ParamLayout {
 public:
  explicit ParamLayout(const MlpArch& arch);

  struct Site {
    int layer = 0;
    bool is_bias = false;
    int row = 0;  // output unit
    int col = 0;  // input unit; 0 for biases
    bool operator==(const Site&) const = default;
  };

  Eigen::Index weight_offset(int layer) const { return weight_off_[layer]; }
  Eigen::Index bias_offset(int layer) const { return bias_off_[layer]; }
  int fan_in(int layer) const { return fan_in_[layer]; }
  int fan_out(int layer) const { return fan_out_[layer]; }
  int num_layers() const { return static_cast<int>(fan_in_.size()); }
  Eigen::Index total() const { return total_; }

  Site locate(Eigen::Index flat) const;
  Eigen::Index flatten(const Site& site) const;

 private:
  std::vector<Eigen::Index> weight_off_, bias_off_;
  std::vector<int> fan_in_, fan_out_;
  Eigen::Index total_ = 0;
};

struct MlpParams {
  MlpArch arch;
  VectorXd theta;

  Eigen::Index dim() const { return theta.size(); }
};

// One curvature chunk: columns [J_i Hhat_i^{1/2}] for the samples packed into
// the chunk, so block * block^T is that chunk's GGN contribution.
struct CurvatureFactor {
  MatrixXd block;  // D x (samples_in_chunk * C)
};

// Quadratic penalty (lambda/2) (theta - anchor)^T precision (theta - anchor),
// applied through DPLR matvecs.
struct Regularizer {
  VectorXd anchor;
  DplrSym precision;
  double strength = 0.0;
};

struct TrainConfig {
  int epochs = 10;
  int batch_size = 128;
  double lr_start = 1e-3;
  double lr_end = 1e-4;
  std::string optimizer = "adam";
  uint64_t seed = 0;
};

// Glorot-uniform weights, zero biases; deterministic in the seed.
MlpParams init_params(const MlpArch& arch, uint64_t seed);

// x: n x d_in, returns logits n x C. Hidden activations use arch.activation,
// the output layer is linear.
MatrixXd forward(const MlpParams& p, const MatrixXd& x);

// Mean softmax cross-entropy over the batch and its gradient.
std::pair<double, VectorXd> loss_and_grad(const MlpParams& p, const MatrixXd& x,
                                          const VectorXi& labels);

// loss_and_grad plus the quadratic penalty; the precision is applied with a
// DPLR matvec and is never densified.
std::pair<double, VectorXd> reg_loss_and_grad(const MlpParams& p, const MatrixXd& x,
                                              const VectorXi& labels, const Regularizer& reg);

// D x C Jacobian of the logits for one input row, one reverse sweep per class.
MatrixXd per_sample_jacobian(const MlpParams& p, const VectorXd& x);

// R with R R^T = diag(p) - p p^T for p = softmax(logits).
MatrixXd output_hessian_sqrt(const VectorXd& logits);

// Draws curvature_samples input rows without replacement and packs their
// J_i Hhat_i^{1/2} blocks into chunks of chunk_size samples. The summed outer
// products equal the GGN of the summed (not averaged) loss over the sample.
std::vector<CurvatureFactor> ggn_factors(const MlpParams& p, const MatrixXd& inputs,
                                         int curvature_samples, int chunk_size, uint64_t seed);

// Mini-batch Adam on the (optionally regularized) loss. Shuffling is seeded
// from cfg.seed + epoch index; the learning rate interpolates linearly from
// lr_start to lr_end across epochs. Throws training_error on non-finite loss.
MlpParams train_task(const MlpParams& p0, const MatrixXd& x, const VectorXi& labels,
                     const std::optional<Regularizer>& reg, const TrainConfig& cfg);

// Checkpoint container: magic "MLPW", version u32, layer-size list, activation
// tag, then theta as little-endian f64.
void save_params(std::ostream& out, const MlpParams& p);
MlpParams load_params(std::istream& in);

}  // namespace lrlgf
