#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "lrlgf/errors.hpp"

namespace lrlgf {

using Eigen::MatrixXd;
using Eigen::VectorXi;

struct TaskDataset {
  MatrixXd inputs;  // N x d_in
  VectorXi labels;  // N, values in [0, C)
  int task_id = 0;
  std::string split = "train";
  int num_classes = 0;
  bool gap = false;  // true marks an empty between-task slot

  Eigen::Index size() const { return inputs.rows(); }
};

struct TaskPair {
  TaskDataset train;
  TaskDataset test;
};

// IDX-format readers/writers (big-endian, magic 0x00000803 for images and
// 0x00000801 for labels). Readers transparently handle gzip when the path
// ends in .gz. Pixel values come back scaled to [0, 1].
MatrixXd load_idx_images(const std::string& path);
VectorXi load_idx_labels(const std::string& path);
void save_idx_images(const std::string& path, const MatrixXd& images, int rows, int cols);
void save_idx_labels(const std::string& path, const VectorXi& labels);

// Loads the four canonical MNIST files (train-images-idx3-ubyte etc., .gz
// accepted) from dir.
std::pair<TaskDataset, TaskDataset> load_mnist(const std::string& dir);

// Task t applies a fixed seeded pixel permutation to train and test alike;
// task 1 is the identity. subsample > 0 draws that many training points per
// task without replacement (and test_subsample likewise for the test split).
std::vector<TaskPair> make_permuted(const TaskDataset& train, const TaskDataset& test, int count,
                                    uint64_t seed, int subsample = 0, int test_subsample = 0);

// Two tasks: labels 0-4 and labels 5-9. The label space stays 10-way.
std::vector<TaskPair> make_disjoint(const TaskDataset& train, const TaskDataset& test,
                                    int subsample = 0, int test_subsample = 0, uint64_t seed = 0);

// Task t shifts every pixel by delta[t], clips to [0, 1] and normalizes with
// the shared constants (x - mu) / sigma. The shift survives normalization
// because mu and sigma are common to all tasks.
std::vector<TaskPair> make_brightness(const TaskDataset& train, const TaskDataset& test,
                                      const std::vector<double>& shifts, double mu, double sigma,
                                      int subsample = 0, int test_subsample = 0,
                                      uint64_t seed = 0);

struct SyntheticSpec {
  int tasks = 1;
  int classes = 2;
  int train_per_class = 64;
  int test_per_class = 64;
  double separation = 4.0;  // distance between class means
  double drift = 0.0;       // per-task translation of all means
  uint64_t seed = 0;
};

// Seeded 2-D Gaussian-blob classification tasks.
std::vector<TaskPair> make_synthetic(const SyntheticSpec& spec);

// Empties the train split at the given 1-based task positions and marks them
// as gaps; test splits are kept for evaluation.
std::vector<TaskPair> insert_gaps(std::vector<TaskPair> tasks, const std::vector<int>& gap_indices);

// FNV-1a over the raw bytes of inputs and labels; used by determinism tests.
uint64_t dataset_hash(const TaskDataset& d);

}  // namespace lrlgf
