// Experiment runner for the low-rank Laplace-Gaussian filter library.
//
// Subcommands:
//   run <config.json>        filter (and optionally smoother) experiment
//   compare <config.json>    regularized filter vs no-regularizer baseline
//   smooth <trace_dir>       backward smoothing pass over a stored trace
//   summarize <results_dir>  recompute and print aggregates from results.csv
//   fetch-mnist <dir>        download the four MNIST IDX files
//
// Exit codes: 0 success, 1 config error, 2 runtime/numerical failure.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "lrlgf/experiment.hpp"
#include "lrlgf/smoother.hpp"

#ifdef LRLGF_HAVE_TLS
#include <httplib.h>
#endif

namespace {

using namespace lrlgf;

int cmd_run(const std::string& config_path, bool compare) {
  ExperimentConfig cfg;
  try {
    cfg = parse_config_file(config_path);
    if (const char* dir = std::getenv("LRLGF_DATA_DIR")) cfg.tasks.data_dir = dir;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }
  try {
    ResultTable table = compare ? compare_regularizers(cfg) : run_experiment(cfg);
    size_t failed = 0;
    for (const auto& r : table.rows) {
      if (r.tag == "failed") ++failed;
    }
    std::cout << "wrote " << table.rows.size() << " rows to " << cfg.output_dir
              << "/results.csv\n";
    std::cout << summarize(cfg.output_dir);
    if (failed > 0) {
      std::cerr << failed << " seed(s) failed; see " << cfg.output_dir << "/errors.log\n";
      return 2;
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}

int cmd_smooth(const std::string& trace_dir) {
  try {
    FilterTrace trace = load_trace(trace_dir);
    auto smoothed = run_smoother(trace, trace.config.rank);
    for (size_t t = 0; t < smoothed.size(); ++t) {
      char name[40];
      std::snprintf(name, sizeof name, "/smoothed_%03d.blf", static_cast<int>(t) + 1);
      std::ofstream out(trace_dir + name, std::ios::binary);
      save_belief(out, smoothed[t]);
    }
    std::cout << "wrote " << smoothed.size() << " smoothed beliefs to " << trace_dir << "\n";
    return 0;
  } catch (const parse_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}

int cmd_summarize(const std::string& results_dir) {
  try {
    std::cout << summarize(results_dir);
    return 0;
  } catch (const parse_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

int cmd_fetch_mnist(const std::string& dir) {
#ifndef LRLGF_HAVE_TLS
  std::cerr << "fetch-mnist: built without TLS support\n";
  return 2;
#else
  const char* files[4] = {"train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz",
                          "t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"};
  std::filesystem::create_directories(dir);
  httplib::SSLClient client("ossci-datasets.s3.amazonaws.com");
  client.set_follow_location(true);
  client.set_connection_timeout(20);
  for (const char* f : files) {
    std::string dest = dir + "/" + f;
    if (std::filesystem::exists(dest)) {
      std::cout << f << " already present\n";
      continue;
    }
    auto res = client.Get(std::string("/mnist/") + f);
    if (!res || res->status != 200) {
      std::cerr << "fetch-mnist: download failed for " << f
                << (res ? " (status " + std::to_string(res->status) + ")" : " (no connection)")
                << "\n";
      return 2;
    }
    std::ofstream out(dest, std::ios::binary);
    out << res->body;
    std::cout << "fetched " << f << " (" << res->body.size() << " bytes)\n";
  }
  // Parse immediately so corrupt downloads fail loudly.
  try {
    auto [train, test] = load_mnist(dir);
    std::cout << "verified: " << train.size() << " train / " << test.size() << " test images\n";
  } catch (const std::exception& e) {
    std::cerr << "fetch-mnist: verification failed: " << e.what() << "\n";
    return 2;
  }
  return 0;
#endif
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"low-rank Laplace-Gaussian filter experiments"};
  app.require_subcommand(1);

  std::string config_path, trace_dir, results_dir, mnist_dir;
  auto* run = app.add_subcommand("run", "run a filter/smoother experiment");
  run->add_option("config", config_path, "experiment config JSON")->required();
  auto* compare = app.add_subcommand("compare", "filter vs no-regularizer baseline");
  compare->add_option("config", config_path, "experiment config JSON")->required();
  auto* smooth = app.add_subcommand("smooth", "smooth a stored filter trace");
  smooth->add_option("trace_dir", trace_dir, "trace directory")->required();
  auto* summ = app.add_subcommand("summarize", "recompute aggregates from results.csv");
  summ->add_option("results_dir", results_dir, "results directory")->required();
  auto* fetch = app.add_subcommand("fetch-mnist", "download MNIST IDX files");
  fetch->add_option("dir", mnist_dir, "destination directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (run->parsed()) return cmd_run(config_path, false);
  if (compare->parsed()) return cmd_run(config_path, true);
  if (smooth->parsed()) return cmd_smooth(trace_dir);
  if (summ->parsed()) return cmd_summarize(results_dir);
  if (fetch->parsed()) return cmd_fetch_mnist(mnist_dir);
  return 1;
}
