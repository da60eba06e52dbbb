#include "lrlgf/tasks.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "lrlgf/rng.hpp"

namespace lrlgf {

namespace {

constexpr uint32_t kImageMagic = 0x00000803;
constexpr uint32_t kLabelMagic = 0x00000801;

// Whole-file read; .gz paths are inflated through zlib.
std::vector<uint8_t> read_file_bytes(const std::string& path) {
  if (!std::filesystem::exists(path)) throw parse_error("missing file: " + path);
  if (path.size() > 3 && path.substr(path.size() - 3) == ".gz") {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw parse_error("missing file: " + path);
    std::vector<uint8_t> out;
    uint8_t buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof buf)) > 0) out.insert(out.end(), buf, buf + n);
    bool bad = n < 0;
    gzclose(f);
    if (bad) throw parse_error("gzip decode failed: " + path);
    return out;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error("missing file: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

uint32_t read_be32(const std::vector<uint8_t>& b, size_t off, const std::string& path) {
  if (off + 4 > b.size()) throw parse_error("truncated payload: " + path);
  return (uint32_t(b[off]) << 24) | (uint32_t(b[off + 1]) << 16) | (uint32_t(b[off + 2]) << 8) |
         uint32_t(b[off + 3]);
}

void write_be32(std::ostream& out, uint32_t v) {
  uint8_t b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8), uint8_t(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::string find_idx_file(const std::string& dir, const std::string& stem) {
  for (const char* suffix : {"", ".gz"}) {
    std::string p = dir + "/" + stem + suffix;
    if (std::filesystem::exists(p)) return p;
  }
  throw parse_error("missing file: " + dir + "/" + stem + "[.gz]");
}

std::vector<uint32_t> subsample_rows(Eigen::Index n, int count, uint64_t seed) {
  if (count <= 0 || count >= n) {
    std::vector<uint32_t> all(n);
    for (Eigen::Index i = 0; i < n; ++i) all[i] = static_cast<uint32_t>(i);
    return all;
  }
  return sample_without_replacement(static_cast<uint32_t>(n), static_cast<uint32_t>(count), seed);
}

TaskDataset take_rows(const TaskDataset& d, const std::vector<uint32_t>& rows) {
  TaskDataset out;
  out.inputs.resize(static_cast<Eigen::Index>(rows.size()), d.inputs.cols());
  out.labels.resize(static_cast<Eigen::Index>(rows.size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    out.inputs.row(static_cast<Eigen::Index>(i)) = d.inputs.row(rows[i]);
    out.labels[static_cast<Eigen::Index>(i)] = d.labels[rows[i]];
  }
  out.task_id = d.task_id;
  out.split = d.split;
  out.num_classes = d.num_classes;
  return out;
}

}  // namespace

MatrixXd load_idx_images(const std::string& path) {
  auto bytes = read_file_bytes(path);
  uint32_t magic = read_be32(bytes, 0, path);
  if (magic != kImageMagic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "0x%08x (expected 0x%08x)", magic, kImageMagic);
    throw parse_error("bad magic " + std::string(buf) + " in " + path);
  }
  uint32_t n = read_be32(bytes, 4, path);
  uint32_t rows = read_be32(bytes, 8, path);
  uint32_t cols = read_be32(bytes, 12, path);
  size_t need = 16 + size_t(n) * rows * cols;
  if (bytes.size() < need) throw parse_error("truncated payload: " + path);
  MatrixXd images(n, size_t(rows) * cols);
  for (uint32_t i = 0; i < n; ++i) {
    const uint8_t* px = bytes.data() + 16 + size_t(i) * rows * cols;
    for (uint32_t j = 0; j < rows * cols; ++j) {
      images(i, j) = px[j] / 255.0;
    }
  }
  return images;
}

VectorXi load_idx_labels(const std::string& path) {
  auto bytes = read_file_bytes(path);
  uint32_t magic = read_be32(bytes, 0, path);
  if (magic != kLabelMagic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "0x%08x (expected 0x%08x)", magic, kLabelMagic);
    throw parse_error("bad magic " + std::string(buf) + " in " + path);
  }
  uint32_t n = read_be32(bytes, 4, path);
  if (bytes.size() < 8 + size_t(n)) throw parse_error("truncated payload: " + path);
  VectorXi labels(n);
  for (uint32_t i = 0; i < n; ++i) labels[i] = bytes[8 + i];
  return labels;
}

void save_idx_images(const std::string& path, const MatrixXd& images, int rows, int cols) {
  if (images.cols() != static_cast<Eigen::Index>(rows) * cols) {
    throw contract_violation("save_idx_images: rows*cols does not match width");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw parse_error("cannot open for writing: " + path);
  write_be32(out, kImageMagic);
  write_be32(out, static_cast<uint32_t>(images.rows()));
  write_be32(out, static_cast<uint32_t>(rows));
  write_be32(out, static_cast<uint32_t>(cols));
  for (Eigen::Index i = 0; i < images.rows(); ++i) {
    for (Eigen::Index j = 0; j < images.cols(); ++j) {
      double v = std::clamp(images(i, j), 0.0, 1.0);
      uint8_t px = static_cast<uint8_t>(std::lround(v * 255.0));
      out.put(static_cast<char>(px));
    }
  }
}

void save_idx_labels(const std::string& path, const VectorXi& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw parse_error("cannot open for writing: " + path);
  write_be32(out, kLabelMagic);
  write_be32(out, static_cast<uint32_t>(labels.size()));
  for (Eigen::Index i = 0; i < labels.size(); ++i) out.put(static_cast<char>(labels[i]));
}

std::pair<TaskDataset, TaskDataset> load_mnist(const std::string& dir) {
  TaskDataset train, test;
  train.inputs = load_idx_images(find_idx_file(dir, "train-images-idx3-ubyte"));
  train.labels = load_idx_labels(find_idx_file(dir, "train-labels-idx1-ubyte"));
  test.inputs = load_idx_images(find_idx_file(dir, "t10k-images-idx3-ubyte"));
  test.labels = load_idx_labels(find_idx_file(dir, "t10k-labels-idx1-ubyte"));
  if (train.inputs.rows() != train.labels.size() || test.inputs.rows() != test.labels.size()) {
    throw parse_error("mnist: image/label counts disagree in " + dir);
  }
  train.split = "train";
  test.split = "test";
  train.num_classes = test.num_classes = 10;
  return {std::move(train), std::move(test)};
}

std::vector<TaskPair> make_permuted(const TaskDataset& train, const TaskDataset& test, int count,
                                    uint64_t seed, int subsample, int test_subsample) {
  if (count < 1) throw contract_violation("make_permuted: count must be >= 1");
  const Eigen::Index d = train.inputs.cols();
  std::vector<TaskPair> out;
  for (int t = 1; t <= count; ++t) {
    std::vector<uint32_t> perm;
    if (t == 1) {
      perm.resize(d);
      for (Eigen::Index i = 0; i < d; ++i) perm[i] = static_cast<uint32_t>(i);
    } else {
      perm = random_permutation(static_cast<uint32_t>(d), mix_seed(seed, t));
    }
    auto apply = [&](const TaskDataset& src, int sub, uint64_t sub_salt) {
      TaskDataset ds = take_rows(src, subsample_rows(src.size(), sub, mix_seed(seed, sub_salt)));
      MatrixXd permuted(ds.inputs.rows(), d);
      for (Eigen::Index j = 0; j < d; ++j) permuted.col(j) = ds.inputs.col(perm[j]);
      ds.inputs = std::move(permuted);
      ds.task_id = t;
      return ds;
    };
    TaskPair pair;
    pair.train = apply(train, subsample, 1000 + t);
    pair.test = apply(test, test_subsample, 2000 + t);
    out.push_back(std::move(pair));
  }
  return out;
}

std::vector<TaskPair> make_disjoint(const TaskDataset& train, const TaskDataset& test,
                                    int subsample, int test_subsample, uint64_t seed) {
  if (train.num_classes != 10) throw contract_violation("make_disjoint: expects 10-class base");
  auto split_labels = [&](const TaskDataset& src, int lo, int hi, int task_id) {
    std::vector<uint32_t> rows;
    for (Eigen::Index i = 0; i < src.size(); ++i) {
      if (src.labels[i] >= lo && src.labels[i] <= hi) rows.push_back(static_cast<uint32_t>(i));
    }
    TaskDataset ds = take_rows(src, rows);
    ds.task_id = task_id;
    return ds;
  };
  std::vector<TaskPair> out(2);
  out[0].train = split_labels(train, 0, 4, 1);
  out[0].test = split_labels(test, 0, 4, 1);
  out[1].train = split_labels(train, 5, 9, 2);
  out[1].test = split_labels(test, 5, 9, 2);
  for (int t = 0; t < 2; ++t) {
    if (subsample > 0) {
      out[t].train = take_rows(out[t].train, subsample_rows(out[t].train.size(), subsample,
                                                            mix_seed(seed, 1000 + t)));
    }
    if (test_subsample > 0) {
      out[t].test = take_rows(out[t].test, subsample_rows(out[t].test.size(), test_subsample,
                                                          mix_seed(seed, 2000 + t)));
    }
  }
  return out;
}

std::vector<TaskPair> make_brightness(const TaskDataset& train, const TaskDataset& test,
                                      const std::vector<double>& shifts, double mu, double sigma,
                                      int subsample, int test_subsample, uint64_t seed) {
  if (shifts.empty()) throw contract_violation("make_brightness: no shifts");
  if (sigma <= 0.0) throw contract_violation("make_brightness: sigma must be positive");
  for (size_t i = 1; i < shifts.size(); ++i) {
    if (shifts[i] < shifts[i - 1]) {
      throw contract_violation("make_brightness: shifts must run dark to bright");
    }
  }
  std::vector<TaskPair> out;
  for (size_t i = 0; i < shifts.size(); ++i) {
    int t = static_cast<int>(i) + 1;
    auto apply = [&](const TaskDataset& src, int sub, uint64_t salt) {
      TaskDataset ds = take_rows(src, subsample_rows(src.size(), sub, mix_seed(seed, salt)));
      ds.inputs = ((ds.inputs.array() + shifts[i]).cwiseMax(0.0).cwiseMin(1.0) - mu) / sigma;
      ds.task_id = t;
      return ds;
    };
    TaskPair pair;
    pair.train = apply(train, subsample, 1000 + t);
    pair.test = apply(test, test_subsample, 2000 + t);
    out.push_back(std::move(pair));
  }
  return out;
}

std::vector<TaskPair> make_synthetic(const SyntheticSpec& spec) {
  if (spec.tasks < 1 || spec.classes < 2 || spec.classes > 3) {
    throw contract_violation("make_synthetic: tasks >= 1 and classes in {2, 3}");
  }
  std::vector<TaskPair> out;
  for (int t = 1; t <= spec.tasks; ++t) {
    SplitMix64 g(mix_seed(spec.seed, t));
    auto sample = [&](int per_class, const char* split) {
      TaskDataset ds;
      Eigen::Index n = static_cast<Eigen::Index>(per_class) * spec.classes;
      ds.inputs.resize(n, 2);
      ds.labels.resize(n);
      Eigen::Index row = 0;
      for (int c = 0; c < spec.classes; ++c) {
        double angle = 2.0 * 3.14159265358979323846 * c / spec.classes;
        double cx = 0.5 * spec.separation * std::cos(angle) + spec.drift * (t - 1);
        double cy = 0.5 * spec.separation * std::sin(angle) + spec.drift * (t - 1);
        for (int i = 0; i < per_class; ++i, ++row) {
          ds.inputs(row, 0) = cx + g.next_normal();
          ds.inputs(row, 1) = cy + g.next_normal();
          ds.labels[row] = c;
        }
      }
      ds.task_id = t;
      ds.split = split;
      ds.num_classes = spec.classes;
      return ds;
    };
    TaskPair pair;
    pair.train = sample(spec.train_per_class, "train");
    pair.test = sample(spec.test_per_class, "test");
    out.push_back(std::move(pair));
  }
  return out;
}

std::vector<TaskPair> insert_gaps(std::vector<TaskPair> tasks,
                                  const std::vector<int>& gap_indices) {
  for (int idx : gap_indices) {
    if (idx < 1 || idx > static_cast<int>(tasks.size())) {
      throw contract_violation("insert_gaps: index out of range");
    }
    TaskDataset& tr = tasks[idx - 1].train;
    tr.inputs.resize(0, tr.inputs.cols());
    tr.labels.resize(0);
    tr.gap = true;
  }
  return tasks;
}

uint64_t dataset_hash(const TaskDataset& d) {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const uint8_t* p, size_t n) {
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  mix(reinterpret_cast<const uint8_t*>(d.inputs.data()), sizeof(double) * d.inputs.size());
  mix(reinterpret_cast<const uint8_t*>(d.labels.data()), sizeof(int) * d.labels.size());
  return h;
}

}  // namespace lrlgf
