#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lrlgf/filter.hpp"
#include "lrlgf/smoother.hpp"
#include "lrlgf/tasks.hpp"

namespace lrlgf {

// Process-noise specification, compiled against the parameter layout.
struct QSpec {
  enum class Kind { Zero, Scalar, Structured };
  Kind kind = Kind::Zero;
  double value = 0.0;
  // (layer index, value) pairs; a layer covers its weights and biases.
  std::vector<std::pair<int, double>> layers;
};

ProcessNoise compile_q(const QSpec& spec, const MlpArch& arch);

struct TaskSpec {
  std::string kind = "synthetic";  // permuted | disjoint | brightness | synthetic
  int count = 1;
  int subsample = 0;
  int test_subsample = 0;
  std::vector<double> shifts;  // brightness
  double mu = 0.5, sigma = 0.5;
  std::string data_dir;         // IDX directory for MNIST-format bases
  std::vector<int> gaps;        // 1-based task positions emptied to gaps
  SyntheticSpec synthetic;
};

struct ExperimentConfig {
  TaskSpec tasks;
  std::vector<int> hidden;
  FilterConfig filter;
  QSpec q_spec;
  std::vector<uint64_t> seeds;
  std::string mode = "filter";  // filter | filter+smooth | gaps
  std::string output_dir = "results";
  bool save_traces = false;
};

// Strict JSON parsing: unknown keys are errors.
ExperimentConfig parse_config_file(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

struct ResultRow {
  uint64_t seed = 0;
  int after_task = 0;
  int eval_task = 0;
  std::string tag;  // filtered | smoothed | predicted | baseline | failed
  double accuracy = 0.0;
};

struct ResultTable {
  std::vector<ResultRow> rows;
};

// Fraction of argmax-correct predictions; ties resolve to the lowest class.
double eval_accuracy(const MlpParams& p, const TaskDataset& data);

// Builds tasks per seed, runs the filter (and smoother / gap inference per
// mode), evaluates every stored belief mean, and writes results.csv plus
// summary.json into output_dir. A failing seed contributes a `failed` row and
// the remaining seeds continue.
ResultTable run_experiment(const ExperimentConfig& cfg);

// Same seeds twice: the regularized filter and a no-regularizer baseline that
// keeps training the same network across tasks. Emits paired rows.
ResultTable compare_regularizers(const ExperimentConfig& cfg);

// Recomputes aggregates from results.csv and renders the per-task accuracy
// matrix with the average-accuracy curve.
std::string summarize(const std::string& results_dir);

void write_results(const std::string& dir, const ResultTable& table);
ResultTable read_results_csv(const std::string& path);

// Builds the per-seed task sequence for a config (shared by both arms).
std::vector<TaskPair> build_tasks(const TaskSpec& spec, uint64_t seed);

}  // namespace lrlgf
