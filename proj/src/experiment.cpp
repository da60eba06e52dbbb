#include "lrlgf/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lrlgf/rng.hpp"

namespace lrlgf {

using json = nlohmann::json;
namespace fs = std::filesystem;

ProcessNoise compile_q(const QSpec& spec, const MlpArch& arch) {
  const Eigen::Index d = arch.param_count();
  switch (spec.kind) {
    case QSpec::Kind::Zero:
      return ProcessNoise::zero(d);
    case QSpec::Kind::Scalar:
      return ProcessNoise::isotropic(d, spec.value);
    case QSpec::Kind::Structured: {
      VectorXd q = VectorXd::Zero(d);
      ParamLayout lay(arch);
      for (auto [layer, value] : spec.layers) {
        if (layer < 0 || layer >= lay.num_layers()) {
          throw contract_violation("compile_q: layer index out of range");
        }
        Eigen::Index begin = lay.weight_offset(layer);
        Eigen::Index count =
            static_cast<Eigen::Index>(lay.fan_in(layer) + 1) * lay.fan_out(layer);
        q.segment(begin, count).setConstant(value);
      }
      return ProcessNoise(q);
    }
  }
  throw contract_violation("compile_q: unknown kind");
}

double eval_accuracy(const MlpParams& p, const TaskDataset& data) {
  if (data.size() == 0) throw contract_violation("eval_accuracy: empty dataset");
  MatrixXd logits = forward(p, data.inputs);
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c) {
      if (logits(i, c) > logits(i, best)) best = static_cast<int>(c);
    }
    if (best == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

std::vector<TaskPair> build_tasks(const TaskSpec& spec, uint64_t seed) {
  if (spec.kind == "synthetic") {
    SyntheticSpec s = spec.synthetic;
    s.tasks = spec.count;
    s.seed = seed;
    auto tasks = make_synthetic(s);
    return spec.gaps.empty() ? tasks : insert_gaps(std::move(tasks), spec.gaps);
  }
  auto [train, test] = load_mnist(spec.data_dir);
  std::vector<TaskPair> tasks;
  if (spec.kind == "permuted") {
    tasks = make_permuted(train, test, spec.count, seed, spec.subsample, spec.test_subsample);
  } else if (spec.kind == "disjoint") {
    tasks = make_disjoint(train, test, spec.subsample, spec.test_subsample, seed);
  } else if (spec.kind == "brightness") {
    std::vector<double> shifts = spec.shifts;
    if (shifts.empty()) {
      shifts = {-0.2, -0.1, 0.0, 0.1, 0.2};
      shifts.resize(spec.count, 0.2);
    }
    tasks = make_brightness(train, test, shifts, spec.mu, spec.sigma, spec.subsample,
                            spec.test_subsample, seed);
  } else {
    throw contract_violation("build_tasks: unknown task kind '" + spec.kind + "'");
  }
  return spec.gaps.empty() ? tasks : insert_gaps(std::move(tasks), spec.gaps);
}

namespace {

MlpArch make_arch(const std::vector<int>& hidden, const std::vector<TaskPair>& tasks) {
  MlpArch arch;
  arch.input = static_cast<int>(tasks.front().train.inputs.cols());
  arch.hidden = hidden;
  arch.output = tasks.front().train.num_classes;
  for (const auto& t : tasks) {
    if (t.train.inputs.cols() != arch.input || t.train.num_classes != arch.output) {
      throw contract_violation("tasks disagree on input/output dimensions");
    }
  }
  return arch;
}

void append_filtered_rows(ResultTable& table, uint64_t seed, const FilterTrace& trace,
                          const std::vector<TaskPair>& tasks, const std::string& tag) {
  for (int t = 0; t < trace.tasks(); ++t) {
    MlpParams p{trace.arch, trace.beliefs[t].mean};
    for (int j = 0; j <= t; ++j) {
      table.rows.push_back(
          ResultRow{seed, t + 1, j + 1, tag, eval_accuracy(p, tasks[j].test)});
    }
  }
}

std::string format_row(const ResultRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%llu,%d,%d,%s,%.17g",
                static_cast<unsigned long long>(r.seed), r.after_task, r.eval_task,
                r.tag.c_str(), r.accuracy);
  return buf;
}

void atomic_write(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << content;
  }
  fs::rename(tmp, path);
}

struct CellStats {
  std::vector<double> values;
  double mean() const {
    double s = 0.0;
    for (double v : values) s += v;
    return values.empty() ? 0.0 : s / static_cast<double>(values.size());
  }
  double min() const { return *std::min_element(values.begin(), values.end()); }
  double max() const { return *std::max_element(values.begin(), values.end()); }
  double stddev() const {
    if (values.size() < 2) return 0.0;
    double m = mean(), s = 0.0;
    for (double v : values) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(values.size() - 1));
  }
};

json summary_from_rows(const ResultTable& table) {
  std::map<std::tuple<int, int, std::string>, CellStats> cells;
  int failures = 0;
  for (const auto& r : table.rows) {
    if (r.tag == "failed") {
      ++failures;
      continue;
    }
    cells[{r.after_task, r.eval_task, r.tag}].values.push_back(r.accuracy);
  }
  json cells_json = json::array();
  for (const auto& [key, stats] : cells) {
    auto [after, evalt, tag] = key;
    cells_json.push_back({{"after_task", after},
                          {"eval_task", evalt},
                          {"tag", tag},
                          {"mean", stats.mean()},
                          {"min", stats.min()},
                          {"max", stats.max()},
                          {"std", stats.stddev()},
                          {"n", stats.values.size()}});
  }

  // Average accuracy over seen tasks after each task, per tag.
  std::map<std::pair<std::string, int>, CellStats> avg;
  for (const auto& r : table.rows) {
    if (r.tag == "failed" || r.eval_task > r.after_task) continue;
    avg[{r.tag, r.after_task}].values.push_back(r.accuracy);
  }
  json avg_json = json::array();
  for (const auto& [key, stats] : avg) {
    avg_json.push_back({{"tag", key.first},
                        {"after_task", key.second},
                        {"average_accuracy", stats.mean()}});
  }
  return json{{"cells", cells_json}, {"average_over_seen", avg_json}, {"failures", failures}};
}

}  // namespace

void write_results(const std::string& dir, const ResultTable& table) {
  fs::create_directories(dir);
  std::string csv = "seed,after_task,eval_task,tag,accuracy\n";
  for (const auto& r : table.rows) csv += format_row(r) + "\n";
  atomic_write(dir + "/results.csv", csv);
  atomic_write(dir + "/summary.json", summary_from_rows(table).dump(2) + "\n");
}

ResultTable read_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("missing file: " + path);
  ResultTable table;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line != "seed,after_task,eval_task,tag,accuracy") {
        throw parse_error(path + ":1: unexpected header");
      }
      continue;
    }
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 5) {
      throw parse_error(path + ":" + std::to_string(line_no) + ": expected 5 fields");
    }
    try {
      ResultRow r;
      r.seed = std::stoull(fields[0]);
      r.after_task = std::stoi(fields[1]);
      r.eval_task = std::stoi(fields[2]);
      r.tag = fields[3];
      r.accuracy = std::stod(fields[4]);
      table.rows.push_back(std::move(r));
    } catch (const std::exception&) {
      throw parse_error(path + ":" + std::to_string(line_no) + ": malformed value");
    }
  }
  return table;
}

ResultTable run_experiment(const ExperimentConfig& cfg) {
  ResultTable table;
  for (uint64_t seed : cfg.seeds) {
    try {
      auto tasks = build_tasks(cfg.tasks, seed);
      MlpArch arch = make_arch(cfg.hidden, tasks);
      FilterConfig fc = cfg.filter;
      fc.train.seed = seed;
      fc.q = compile_q(cfg.q_spec, arch);
      FilterTrace trace = run_filter(tasks, arch, fc);
      append_filtered_rows(table, seed, trace, tasks, "filtered");

      if (cfg.mode == "filter+smooth" || cfg.mode == "gaps") {
        auto smoothed = run_smoother(trace, fc.rank);
        for (int t = 0; t < trace.tasks(); ++t) {
          MlpParams p{arch, smoothed[t].mean};
          table.rows.push_back(ResultRow{seed, trace.tasks(), t + 1, "smoothed",
                                         eval_accuracy(p, tasks[t].test)});
        }
      }
      if (cfg.mode == "gaps") {
        for (const auto& g : infer_between(trace, fc.rank)) {
          MlpParams p{arch, g.predict_only.mean};
          table.rows.push_back(ResultRow{seed, trace.tasks(), g.task_index, "predicted",
                                         eval_accuracy(p, tasks[g.task_index - 1].test)});
        }
      }
      if (cfg.save_traces) {
        save_trace(cfg.output_dir + "/trace_seed" + std::to_string(seed), trace);
      }
    } catch (const std::exception& e) {
      table.rows.push_back(ResultRow{seed, -1, -1, "failed", std::nan("")});
      std::ofstream log(cfg.output_dir + "/errors.log", std::ios::app);
      log << "seed " << seed << ": " << e.what() << "\n";
    }
  }
  write_results(cfg.output_dir, table);
  return table;
}

ResultTable compare_regularizers(const ExperimentConfig& cfg) {
  ResultTable table = run_experiment(cfg);

  // Baseline arm: keep training the same network across tasks, no penalty, no
  // curvature bookkeeping. Seeds and task construction match the filter arm.
  for (uint64_t seed : cfg.seeds) {
    try {
      auto tasks = build_tasks(cfg.tasks, seed);
      MlpArch arch = make_arch(cfg.hidden, tasks);
      MlpParams p = init_params(arch, seed);
      for (size_t i = 0; i < tasks.size(); ++i) {
        int t = static_cast<int>(i) + 1;
        if (!tasks[i].train.gap) {
          TrainConfig tc = cfg.filter.train;
          tc.seed = mix_seed(seed, static_cast<uint64_t>(t));
          p = train_task(p, tasks[i].train.inputs, tasks[i].train.labels, std::nullopt, tc);
        }
        for (int j = 0; j < t; ++j) {
          table.rows.push_back(
              ResultRow{seed, t, j + 1, "baseline", eval_accuracy(p, tasks[j].test)});
        }
      }
    } catch (const std::exception& e) {
      table.rows.push_back(ResultRow{seed, -1, -1, "failed", std::nan("")});
      std::ofstream log(cfg.output_dir + "/errors.log", std::ios::app);
      log << "baseline seed " << seed << ": " << e.what() << "\n";
    }
  }
  write_results(cfg.output_dir, table);
  return table;
}

std::string summarize(const std::string& results_dir) {
  ResultTable table = read_results_csv(results_dir + "/results.csv");
  if (table.rows.empty()) return "no rows\n";

  json summary = summary_from_rows(table);
  std::ostringstream out;

  std::vector<std::string> tags;
  for (const auto& cell : summary["cells"]) {
    std::string tag = cell["tag"];
    if (std::find(tags.begin(), tags.end(), tag) == tags.end()) tags.push_back(tag);
  }
  for (const auto& tag : tags) {
    int t_max = 0;
    for (const auto& cell : summary["cells"]) {
      if (cell["tag"] == tag) t_max = std::max(t_max, cell["after_task"].get<int>());
    }
    out << "[" << tag << "] accuracy matrix (rows: after task, cols: eval task)\n";
    for (int t = 1; t <= t_max; ++t) {
      out << "  t=" << t << ":";
      for (int j = 1; j <= t_max; ++j) {
        bool found = false;
        for (const auto& cell : summary["cells"]) {
          if (cell["tag"] == tag && cell["after_task"] == t && cell["eval_task"] == j) {
            char buf[16];
            std::snprintf(buf, sizeof buf, " %.4f", cell["mean"].get<double>());
            out << buf;
            found = true;
            break;
          }
        }
        if (!found) out << "      -";
      }
      out << "\n";
    }
    out << "  average over seen tasks:";
    for (const auto& a : summary["average_over_seen"]) {
      if (a["tag"] == tag) {
        char buf[32];
        std::snprintf(buf, sizeof buf, " %.4f", a["average_accuracy"].get<double>());
        out << buf;
      }
    }
    out << "\n";
  }
  if (summary["failures"].get<int>() > 0) {
    out << "failures: " << summary["failures"].get<int>() << "\n";
  }
  return out.str();
}

namespace {

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw parse_error("config: unknown key '" + it.key() + "' in " + where);
    }
  }
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw parse_error("config: malformed JSON");

  check_keys(j, {"tasks", "model", "filter", "q", "seeds", "mode", "output_dir", "save_traces"},
             "top level");
  ExperimentConfig cfg;

  const json& jt = j.at("tasks");
  check_keys(jt,
             {"kind", "count", "subsample", "test_subsample", "shifts", "mu", "sigma", "data_dir",
              "gaps", "synthetic"},
             "tasks");
  cfg.tasks.kind = jt.at("kind").get<std::string>();
  cfg.tasks.count = jt.value("count", 1);
  cfg.tasks.subsample = jt.value("subsample", 0);
  cfg.tasks.test_subsample = jt.value("test_subsample", 0);
  if (jt.contains("shifts")) cfg.tasks.shifts = jt.at("shifts").get<std::vector<double>>();
  cfg.tasks.mu = jt.value("mu", 0.5);
  cfg.tasks.sigma = jt.value("sigma", 0.5);
  cfg.tasks.data_dir = jt.value("data_dir", std::string());
  if (jt.contains("gaps")) cfg.tasks.gaps = jt.at("gaps").get<std::vector<int>>();
  if (jt.contains("synthetic")) {
    const json& js = jt.at("synthetic");
    check_keys(js, {"classes", "train_per_class", "test_per_class", "separation", "drift"},
               "tasks.synthetic");
    cfg.tasks.synthetic.classes = js.value("classes", 2);
    cfg.tasks.synthetic.train_per_class = js.value("train_per_class", 64);
    cfg.tasks.synthetic.test_per_class = js.value("test_per_class", 64);
    cfg.tasks.synthetic.separation = js.value("separation", 4.0);
    cfg.tasks.synthetic.drift = js.value("drift", 0.0);
  }

  const json& jm = j.at("model");
  check_keys(jm, {"hidden"}, "model");
  cfg.hidden = jm.at("hidden").get<std::vector<int>>();

  const json& jf = j.at("filter");
  check_keys(jf,
             {"lambda", "rank", "initial_lambda", "train", "curvature_samples", "chunk_size",
              "absorb_svd_tail"},
             "filter");
  const json& jl = jf.at("lambda");
  check_keys(jl, {"intercept", "slope"}, "filter.lambda");
  cfg.filter.lambda.intercept = jl.at("intercept").get<double>();
  cfg.filter.lambda.slope = jl.value("slope", 0.0);
  cfg.filter.rank = jf.at("rank").get<int>();
  cfg.filter.initial_precision = jf.value("initial_lambda", 1e-4);
  cfg.filter.curvature_samples = jf.value("curvature_samples", 32);
  cfg.filter.chunk_size = jf.value("chunk_size", 4);
  cfg.filter.absorb_svd_tail = jf.value("absorb_svd_tail", false);
  if (jf.contains("train")) {
    const json& jtr = jf.at("train");
    check_keys(jtr, {"epochs", "batch_size", "lr_start", "lr_end"}, "filter.train");
    cfg.filter.train.epochs = jtr.value("epochs", 10);
    cfg.filter.train.batch_size = jtr.value("batch_size", 128);
    cfg.filter.train.lr_start = jtr.value("lr_start", 1e-3);
    cfg.filter.train.lr_end = jtr.value("lr_end", 1e-4);
  }

  if (j.contains("q")) {
    const json& jq = j.at("q");
    check_keys(jq, {"kind", "value", "layers"}, "q");
    std::string kind = jq.at("kind").get<std::string>();
    if (kind == "zero") {
      cfg.q_spec.kind = QSpec::Kind::Zero;
    } else if (kind == "scalar") {
      cfg.q_spec.kind = QSpec::Kind::Scalar;
      cfg.q_spec.value = jq.at("value").get<double>();
    } else if (kind == "structured") {
      cfg.q_spec.kind = QSpec::Kind::Structured;
      for (const auto& pair : jq.at("layers")) {
        cfg.q_spec.layers.emplace_back(pair.at(0).get<int>(), pair.at(1).get<double>());
      }
    } else {
      throw parse_error("config: unknown q kind '" + kind + "'");
    }
  }

  cfg.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  if (cfg.seeds.empty()) throw parse_error("config: need at least one seed");
  cfg.mode = j.value("mode", std::string("filter"));
  if (cfg.mode != "filter" && cfg.mode != "filter+smooth" && cfg.mode != "gaps") {
    throw parse_error("config: unknown mode '" + cfg.mode + "'");
  }
  cfg.output_dir = j.value("output_dir", std::string("results"));
  cfg.save_traces = j.value("save_traces", false);
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("config: missing file " + path);
  std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_config_text(text);
}

}  // namespace lrlgf
