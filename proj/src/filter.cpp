#include "lrlgf/filter.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "lrlgf/rng.hpp"

namespace lrlgf {

using json = nlohmann::json;

GaussianBelief predict(const GaussianBelief& b, const ProcessNoise& q) {
  if (b.tag != BeliefTag::Filtered) throw contract_violation("predict: expects a filtered belief");
  GaussianBelief out;
  out.mean = b.mean;
  out.precision = predict_precision(b.precision, q);
  out.tag = BeliefTag::Predicted;
  return out;
}

GaussianBelief update(const GaussianBelief& pred, const TaskDataset& data, const MlpArch& arch,
                      const FilterConfig& cfg, int task_index) {
  if (pred.tag != BeliefTag::Predicted) {
    throw contract_violation("update: expects a predicted belief");
  }
  const double lambda = cfg.lambda(task_index);
  if (lambda <= 0.0) throw contract_violation("update: lambda schedule must stay positive");

  // Training warm-starts at the predicted mean, anchored there by the penalty.
  TrainConfig tc = cfg.train;
  tc.seed = mix_seed(cfg.train.seed, static_cast<uint64_t>(task_index));

  MlpParams p0{arch, pred.mean};
  Regularizer reg{pred.mean, pred.precision, lambda};
  MlpParams trained = data.size() > 0 ? train_task(p0, data.inputs, data.labels, reg, tc) : p0;

  auto factors =
      data.size() > 0
          ? ggn_factors(trained, data.inputs,
                        std::min<int>(cfg.curvature_samples, static_cast<int>(data.size())),
                        cfg.chunk_size, mix_seed(tc.seed, 0x9999))
          : std::vector<CurvatureFactor>{};

  // W = [ U^- (S^-)^{1/2} | J_1 Hhat_1^{1/2} | ... ]  (Eq. (9)-style assembly).
  const DplrSym& prior = pred.precision;
  Eigen::Index cols = prior.rank() > 0 ? prior.rank() : 0;
  for (const auto& f : factors) cols += f.block.cols();

  GaussianBelief out;
  out.mean = trained.theta;
  out.tag = BeliefTag::Filtered;

  if (cols == 0) {
    out.precision = DplrSym::diagonal(prior.diag);
    return out;
  }

  MatrixXd w(prior.dim(), cols);
  Eigen::Index at = 0;
  if (prior.rank() > 0) {
    w.middleCols(0, prior.rank()).noalias() = prior.factor * sqrt_core(prior.core);
    at = prior.rank();
  }
  for (const auto& f : factors) {
    w.middleCols(at, f.block.cols()) = f.block;
    at += f.block.cols();
  }

  auto compressed = compress(w, std::min<Eigen::Index>(cfg.rank, std::min(w.rows(), w.cols())));
  out.precision.diag = prior.diag;
  out.precision.factor = compressed.basis;
  out.precision.core =
      MatrixXd(compressed.singular_values.array().square().matrix().asDiagonal());

  if (cfg.absorb_svd_tail) {
    // Per-coordinate energy of the discarded directions; keeps the represented
    // matrix's diagonal exact.
    VectorXd total = w.rowwise().squaredNorm();
    VectorXd kept = compressed.basis.array().square().matrix() *
                    compressed.singular_values.array().square().matrix();
    out.precision.diag += (total - kept).cwiseMax(0.0);
  }
  return out;
}

FilterTrace run_filter(const std::vector<TaskPair>& tasks, const MlpArch& arch,
                       const FilterConfig& cfg) {
  if (tasks.empty()) throw contract_violation("run_filter: need at least one task");

  FilterTrace trace;
  trace.q = cfg.q.dim() > 0 ? cfg.q : ProcessNoise::zero(arch.param_count());
  trace.arch = arch;
  trace.config = cfg;
  if (trace.q.dim() != arch.param_count()) {
    throw contract_violation("run_filter: process noise dimension mismatch");
  }
  if (cfg.initial_precision <= 0.0) {
    throw contract_violation("run_filter: initial precision must be positive");
  }
  if (cfg.rank < 1) throw contract_violation("run_filter: rank must be at least 1");
  for (int t = 1; t <= static_cast<int>(tasks.size()); ++t) {
    if (cfg.lambda(t) <= 0.0) {
      throw contract_violation("run_filter: lambda schedule must stay positive through task " +
                               std::to_string(t));
    }
  }

  GaussianBelief belief;
  belief.mean = init_params(arch, cfg.train.seed).theta;
  belief.precision = DplrSym::scaled_identity(arch.param_count(), cfg.initial_precision);
  belief.tag = BeliefTag::Filtered;

  for (size_t i = 0; i < tasks.size(); ++i) {
    int t = static_cast<int>(i) + 1;
    GaussianBelief pred = predict(belief, trace.q);
    if (tasks[i].train.gap) {
      // Between-task slot: no data, the posterior is the prior.
      belief = GaussianBelief{pred.mean, pred.precision, BeliefTag::Filtered};
      trace.gap.push_back(true);
    } else {
      belief = update(pred, tasks[i].train, arch, cfg, t);
      trace.gap.push_back(false);
    }
    trace.beliefs.push_back(belief);
  }
  return trace;
}

void save_belief(std::ostream& out, const GaussianBelief& b) {
  out.write("BLF1", 4);
  uint32_t tag = static_cast<uint32_t>(b.tag);
  out.write(reinterpret_cast<const char*>(&tag), sizeof tag);
  uint64_t d = static_cast<uint64_t>(b.mean.size());
  out.write(reinterpret_cast<const char*>(&d), sizeof d);
  out.write(reinterpret_cast<const char*>(b.mean.data()),
            static_cast<std::streamsize>(sizeof(double) * d));
  save_dplr(out, b.precision);
}

GaussianBelief load_belief(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "BLF1", 4) != 0) throw parse_error("belief file: bad magic");
  uint32_t tag = 0;
  in.read(reinterpret_cast<char*>(&tag), sizeof tag);
  uint64_t d = 0;
  in.read(reinterpret_cast<char*>(&d), sizeof d);
  if (!in) throw parse_error("belief file: truncated header");
  GaussianBelief b;
  b.tag = static_cast<BeliefTag>(tag);
  b.mean.resize(static_cast<Eigen::Index>(d));
  in.read(reinterpret_cast<char*>(b.mean.data()),
          static_cast<std::streamsize>(sizeof(double) * d));
  if (!in) throw parse_error("belief file: truncated mean");
  b.precision = load_dplr(in);
  return b;
}

void save_trace(const std::string& dir, const FilterTrace& trace) {
  std::filesystem::create_directories(dir);
  json meta;
  meta["tasks"] = trace.tasks();
  meta["gap"] = trace.gap;
  meta["q"] = std::vector<double>(trace.q.q().data(), trace.q.q().data() + trace.q.dim());
  meta["arch"] = {{"input", trace.arch.input},
                  {"hidden", trace.arch.hidden},
                  {"output", trace.arch.output}};
  meta["config"] = {{"lambda_intercept", trace.config.lambda.intercept},
                    {"lambda_slope", trace.config.lambda.slope},
                    {"rank", trace.config.rank},
                    {"initial_precision", trace.config.initial_precision},
                    {"curvature_samples", trace.config.curvature_samples},
                    {"chunk_size", trace.config.chunk_size},
                    {"seed", trace.config.train.seed},
                    {"epochs", trace.config.train.epochs},
                    {"batch_size", trace.config.train.batch_size}};
  std::ofstream meta_out(dir + "/metadata.json");
  meta_out << meta.dump(2) << "\n";

  for (int t = 0; t < trace.tasks(); ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "/belief_%03d.blf", t + 1);
    std::ofstream out(dir + name, std::ios::binary);
    save_belief(out, trace.beliefs[t]);
  }
}

FilterTrace load_trace(const std::string& dir) {
  std::ifstream meta_in(dir + "/metadata.json");
  if (!meta_in) throw parse_error("trace: missing metadata.json in " + dir);
  json meta = json::parse(meta_in, nullptr, false);
  if (meta.is_discarded()) throw parse_error("trace: malformed metadata.json");

  FilterTrace trace;
  int tasks = meta.at("tasks").get<int>();
  trace.gap = meta.at("gap").get<std::vector<bool>>();
  std::vector<double> qv = meta.at("q").get<std::vector<double>>();
  trace.q = ProcessNoise(Eigen::Map<const VectorXd>(qv.data(), static_cast<Eigen::Index>(qv.size())));
  trace.arch.input = meta.at("arch").at("input").get<int>();
  trace.arch.hidden = meta.at("arch").at("hidden").get<std::vector<int>>();
  trace.arch.output = meta.at("arch").at("output").get<int>();
  const auto& c = meta.at("config");
  trace.config.lambda = {c.at("lambda_intercept").get<double>(), c.at("lambda_slope").get<double>()};
  trace.config.rank = c.at("rank").get<int>();
  trace.config.initial_precision = c.at("initial_precision").get<double>();
  trace.config.curvature_samples = c.at("curvature_samples").get<int>();
  trace.config.chunk_size = c.at("chunk_size").get<int>();
  trace.config.train.seed = c.at("seed").get<uint64_t>();
  trace.config.train.epochs = c.at("epochs").get<int>();
  trace.config.train.batch_size = c.at("batch_size").get<int>();
  trace.config.q = trace.q;

  for (int t = 1; t <= tasks; ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "/belief_%03d.blf", t);
    std::ifstream in(dir + name, std::ios::binary);
    if (!in) throw parse_error("trace: missing belief file " + dir + name);
    trace.beliefs.push_back(load_belief(in));
  }
  return trace;
}

}  // namespace lrlgf
