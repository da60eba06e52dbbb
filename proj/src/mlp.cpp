#include "lrlgf/mlp.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "lrlgf/rng.hpp"

namespace lrlgf {

std::vector<int> MlpArch::layer_sizes() const {
  std::vector<int> s;
  s.push_back(input);
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(output);
  return s;
}

Eigen::Index MlpArch::param_count() const {
  auto sizes = layer_sizes();
  Eigen::Index d = 0;
  for (size_t l = 0; l + 1 < sizes.size(); ++l) {
    d += static_cast<Eigen::Index>(sizes[l] + 1) * sizes[l + 1];
  }
  return d;
}

ParamLayout::ParamLayout(const MlpArch& arch) {
  if (arch.input <= 0 || arch.output <= 0) throw contract_violation("ParamLayout: invalid arch");
  for (int h : arch.hidden) {
    if (h <= 0) throw contract_violation("ParamLayout: invalid hidden width");
  }
  auto sizes = arch.layer_sizes();
  Eigen::Index off = 0;
  for (size_t l = 0; l + 1 < sizes.size(); ++l) {
    fan_in_.push_back(sizes[l]);
    fan_out_.push_back(sizes[l + 1]);
    weight_off_.push_back(off);
    off += static_cast<Eigen::Index>(sizes[l]) * sizes[l + 1];
    bias_off_.push_back(off);
    off += sizes[l + 1];
  }
  total_ = off;
}

ParamLayout::Site ParamLayout::locate(Eigen::Index flat) const {
  if (flat < 0 || flat >= total_) throw contract_violation("locate: index out of range");
  for (int l = num_layers() - 1; l >= 0; --l) {
    if (flat >= bias_off_[l]) {
      return Site{l, true, static_cast<int>(flat - bias_off_[l]), 0};
    }
    if (flat >= weight_off_[l]) {
      Eigen::Index rel = flat - weight_off_[l];
      return Site{l, false, static_cast<int>(rel % fan_out_[l]),
                  static_cast<int>(rel / fan_out_[l])};
    }
  }
  throw contract_violation("locate: unreachable");
}

Eigen::Index ParamLayout::flatten(const Site& site) const {
  if (site.layer < 0 || site.layer >= num_layers()) {
    throw contract_violation("flatten: bad layer");
  }
  if (site.is_bias) return bias_off_[site.layer] + site.row;
  return weight_off_[site.layer] + static_cast<Eigen::Index>(site.col) * fan_out_[site.layer] +
         site.row;
}

namespace {

using ConstMat = Eigen::Map<const MatrixXd>;
using ConstVec = Eigen::Map<const VectorXd>;
using MutMat = Eigen::Map<MatrixXd>;
using MutVec = Eigen::Map<VectorXd>;

ConstMat weight(const VectorXd& theta, const ParamLayout& lay, int l) {
  return ConstMat(theta.data() + lay.weight_offset(l), lay.fan_out(l), lay.fan_in(l));
}

ConstVec bias(const VectorXd& theta, const ParamLayout& lay, int l) {
  return ConstVec(theta.data() + lay.bias_offset(l), lay.fan_out(l));
}

MutMat weight_mut(VectorXd& theta, const ParamLayout& lay, int l) {
  return MutMat(theta.data() + lay.weight_offset(l), lay.fan_out(l), lay.fan_in(l));
}

MutVec bias_mut(VectorXd& theta, const ParamLayout& lay, int l) {
  return MutVec(theta.data() + lay.bias_offset(l), lay.fan_out(l));
}

// Forward pass storing post-activation values per layer; acts[0] is the input
// batch, acts.back() the logits.
std::vector<MatrixXd> forward_cached(const MlpParams& p, const MatrixXd& x,
                                     const ParamLayout& lay) {
  if (x.cols() != p.arch.input) throw contract_violation("forward: input width mismatch");
  std::vector<MatrixXd> acts;
  acts.reserve(lay.num_layers() + 1);
  acts.push_back(x);
  for (int l = 0; l < lay.num_layers(); ++l) {
    MatrixXd z = acts.back() * weight(p.theta, lay, l).transpose();
    z.rowwise() += bias(p.theta, lay, l).transpose();
    if (l + 1 < lay.num_layers()) z = z.array().tanh();
    acts.push_back(std::move(z));
  }
  return acts;
}

// Row-wise softmax with the usual max-shift. Returns probabilities and the
// mean cross-entropy against the labels.
std::pair<MatrixXd, double> softmax_and_loss(const MatrixXd& logits, const VectorXi& labels) {
  const Eigen::Index n = logits.rows(), c = logits.cols();
  MatrixXd probs(n, c);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double m = logits.row(i).maxCoeff();
    Eigen::ArrayXd e = (logits.row(i).array() - m).exp();
    double z = e.sum();
    probs.row(i) = (e / z).matrix();
    int y = labels[i];
    if (y < 0 || y >= c) throw contract_violation("labels must lie in [0, C)");
    loss -= (logits(i, y) - m) - std::log(z);
  }
  return {std::move(probs), loss / static_cast<double>(n)};
}

// Backward pass from d(loss)/d(logits); writes the flat gradient.
void backward(const MlpParams& p, const ParamLayout& lay, const std::vector<MatrixXd>& acts,
              MatrixXd delta, VectorXd& grad) {
  for (int l = lay.num_layers() - 1; l >= 0; --l) {
    weight_mut(grad, lay, l).noalias() = delta.transpose() * acts[l];
    bias_mut(grad, lay, l) = delta.colwise().sum().transpose();
    if (l > 0) {
      MatrixXd back = delta * weight(p.theta, lay, l);
      delta = back.array() * (1.0 - acts[l].array().square());
    }
  }
}

}  // namespace

MlpParams init_params(const MlpArch& arch, uint64_t seed) {
  ParamLayout lay(arch);
  MlpParams p;
  p.arch = arch;
  p.theta = VectorXd::Zero(lay.total());
  SplitMix64 g(seed);
  for (int l = 0; l < lay.num_layers(); ++l) {
    double bound = std::sqrt(6.0 / (lay.fan_in(l) + lay.fan_out(l)));
    auto w = weight_mut(p.theta, lay, l);
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        w(r, c) = g.next_uniform(-bound, bound);
      }
    }
  }
  return p;
}

MatrixXd forward(const MlpParams& p, const MatrixXd& x) {
  ParamLayout lay(p.arch);
  return forward_cached(p, x, lay).back();
}

std::pair<double, VectorXd> loss_and_grad(const MlpParams& p, const MatrixXd& x,
                                          const VectorXi& labels) {
  if (x.rows() != labels.size()) throw contract_violation("loss_and_grad: batch size mismatch");
  if (x.rows() == 0) throw contract_violation("loss_and_grad: empty batch");
  ParamLayout lay(p.arch);
  auto acts = forward_cached(p, x, lay);
  auto [probs, loss] = softmax_and_loss(acts.back(), labels);
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  MatrixXd delta = probs;
  for (Eigen::Index i = 0; i < labels.size(); ++i) delta(i, labels[i]) -= 1.0;
  delta *= inv_n;
  VectorXd grad(lay.total());
  backward(p, lay, acts, std::move(delta), grad);
  return {loss, std::move(grad)};
}

std::pair<double, VectorXd> reg_loss_and_grad(const MlpParams& p, const MatrixXd& x,
                                              const VectorXi& labels, const Regularizer& reg) {
  if (reg.anchor.size() != p.dim() || reg.precision.dim() != p.dim()) {
    throw contract_violation("reg_loss_and_grad: regularizer dimension mismatch");
  }
  auto [loss, grad] = loss_and_grad(p, x, labels);
  VectorXd diff = p.theta - reg.anchor;
  VectorXd pv = matvec(reg.precision, diff);
  loss += 0.5 * reg.strength * diff.dot(pv);
  grad += reg.strength * pv;
  return {loss, std::move(grad)};
}

MatrixXd per_sample_jacobian(const MlpParams& p, const VectorXd& x) {
  ParamLayout lay(p.arch);
  auto acts = forward_cached(p, x.transpose(), lay);
  const int c = p.arch.output;

  // All C reverse sweeps share the cached activations, so the seed matrix is
  // the C x C identity and delta stays C x (layer width) throughout.
  MatrixXd jac(lay.total(), c);
  MatrixXd delta = MatrixXd::Identity(c, c);
  for (int l = lay.num_layers() - 1; l >= 0; --l) {
    const Eigen::Index out = lay.fan_out(l);
    const Eigen::Index w_off = lay.weight_offset(l);
    for (int j = 0; j < lay.fan_in(l); ++j) {
      jac.block(w_off + static_cast<Eigen::Index>(j) * out, 0, out, c) =
          delta.transpose() * acts[l](0, j);
    }
    jac.block(lay.bias_offset(l), 0, out, c) = delta.transpose();
    if (l > 0) {
      MatrixXd back = delta * weight(p.theta, lay, l);
      delta = back.array().rowwise() * (1.0 - acts[l].array().square()).row(0);
    }
  }
  return jac;
}

MatrixXd output_hessian_sqrt(const VectorXd& logits) {
  if (!logits.allFinite()) throw contract_violation("output_hessian_sqrt: non-finite logits");
  double m = logits.maxCoeff();
  Eigen::ArrayXd e = (logits.array() - m).exp();
  VectorXd prob = (e / e.sum()).matrix();
  MatrixXd h = MatrixXd(prob.asDiagonal()) - prob * prob.transpose();
  return sqrt_core(h);
}

std::vector<CurvatureFactor> ggn_factors(const MlpParams& p, const MatrixXd& inputs,
                                         int curvature_samples, int chunk_size, uint64_t seed) {
  if (curvature_samples < 0 || curvature_samples > inputs.rows()) {
    throw contract_violation("ggn_factors: curvature_samples out of range");
  }
  if (chunk_size <= 0) throw contract_violation("ggn_factors: chunk_size must be positive");
  const int c = p.arch.output;
  auto picks = sample_without_replacement(static_cast<uint32_t>(inputs.rows()),
                                          static_cast<uint32_t>(curvature_samples), seed);
  std::vector<CurvatureFactor> factors;
  ParamLayout lay(p.arch);
  for (int start = 0; start < curvature_samples; start += chunk_size) {
    int m = std::min(chunk_size, curvature_samples - start);
    CurvatureFactor f;
    f.block.resize(lay.total(), static_cast<Eigen::Index>(m) * c);
    for (int i = 0; i < m; ++i) {
      VectorXd x = inputs.row(picks[start + i]).transpose();
      MatrixXd jac = per_sample_jacobian(p, x);
      VectorXd logits = forward(p, x.transpose()).row(0).transpose();
      f.block.middleCols(static_cast<Eigen::Index>(i) * c, c).noalias() =
          jac * output_hessian_sqrt(logits);
    }
    factors.push_back(std::move(f));
  }
  return factors;
}

MlpParams train_task(const MlpParams& p0, const MatrixXd& x, const VectorXi& labels,
                     const std::optional<Regularizer>& reg, const TrainConfig& cfg) {
  if (cfg.epochs < 0 || cfg.batch_size <= 0 || cfg.lr_start <= 0.0 || cfg.lr_end <= 0.0) {
    throw contract_violation("train_task: invalid config");
  }
  if (cfg.optimizer != "adam") throw contract_violation("train_task: unknown optimizer");
  if (reg && reg->strength <= 0.0) throw contract_violation("train_task: strength must be > 0");

  MlpParams p = p0;
  const Eigen::Index d = p.dim();
  VectorXd m = VectorXd::Zero(d), v = VectorXd::Zero(d);
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  long step = 0;

  const Eigen::Index n = x.rows();
  std::vector<uint32_t> order(n);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.epochs > 1 ? cfg.lr_start + (cfg.lr_end - cfg.lr_start) * epoch /
                                     static_cast<double>(cfg.epochs - 1)
                               : cfg.lr_start;
    std::iota(order.begin(), order.end(), 0u);
    SplitMix64 g(mix_seed(cfg.seed, static_cast<uint64_t>(epoch)));
    g.shuffle(order);

    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      Eigen::Index bsz = std::min<Eigen::Index>(cfg.batch_size, n - start);
      MatrixXd bx(bsz, x.cols());
      VectorXi by(bsz);
      for (Eigen::Index i = 0; i < bsz; ++i) {
        bx.row(i) = x.row(order[start + i]);
        by[i] = labels[order[start + i]];
      }
      auto [loss, grad] = reg ? reg_loss_and_grad(p, bx, by, *reg) : loss_and_grad(p, bx, by);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "train_task: non-finite loss at epoch " << epoch << ", step " << step
            << " (lr " << lr << ")";
        throw training_error(msg.str());
      }
      ++step;
      m = beta1 * m + (1.0 - beta1) * grad;
      v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
      double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      p.theta -= (lr / bc1) * m.cwiseQuotient(((v / bc2).cwiseSqrt().array() + adam_eps).matrix());
    }
  }
  return p;
}

void save_params(std::ostream& out, const MlpParams& p) {
  out.write("MLPW", 4);
  uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  auto sizes = p.arch.layer_sizes();
  uint64_t n_sizes = sizes.size();
  out.write(reinterpret_cast<const char*>(&n_sizes), sizeof n_sizes);
  for (int s : sizes) {
    uint64_t v = static_cast<uint64_t>(s);
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  uint32_t act = static_cast<uint32_t>(p.arch.activation);
  out.write(reinterpret_cast<const char*>(&act), sizeof act);
  uint64_t d = static_cast<uint64_t>(p.theta.size());
  out.write(reinterpret_cast<const char*>(&d), sizeof d);
  out.write(reinterpret_cast<const char*>(p.theta.data()),
            static_cast<std::streamsize>(sizeof(double) * d));
}

MlpParams load_params(std::istream& in) {
  auto read = [&](void* ptr, size_t n) {
    in.read(static_cast<char*>(ptr), static_cast<std::streamsize>(n));
    if (!in) throw parse_error("mlp checkpoint: truncated payload");
  };
  char magic[4];
  read(magic, 4);
  if (std::memcmp(magic, "MLPW", 4) != 0) {
    throw parse_error("mlp checkpoint: bad magic '" + std::string(magic, 4) + "'");
  }
  uint32_t version = 0;
  read(&version, sizeof version);
  if (version != 1) throw parse_error("mlp checkpoint: unsupported version");
  uint64_t n_sizes = 0;
  read(&n_sizes, sizeof n_sizes);
  if (n_sizes < 2 || n_sizes > 64) throw parse_error("mlp checkpoint: bad layer count");
  std::vector<int> sizes(n_sizes);
  for (auto& s : sizes) {
    uint64_t v = 0;
    read(&v, sizeof v);
    s = static_cast<int>(v);
  }
  uint32_t act = 0;
  read(&act, sizeof act);
  MlpParams p;
  p.arch.input = sizes.front();
  p.arch.output = sizes.back();
  p.arch.hidden.assign(sizes.begin() + 1, sizes.end() - 1);
  p.arch.activation = static_cast<Activation>(act);
  uint64_t d = 0;
  read(&d, sizeof d);
  if (static_cast<Eigen::Index>(d) != p.arch.param_count()) {
    throw parse_error("mlp checkpoint: theta size does not match arch");
  }
  p.theta.resize(static_cast<Eigen::Index>(d));
  read(p.theta.data(), sizeof(double) * d);
  return p;
}

}  // namespace lrlgf
