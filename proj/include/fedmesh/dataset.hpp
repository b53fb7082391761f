#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fedmesh/scenario.hpp"

namespace fedmesh {

// Row-major feature matrix with values in [0, 1] plus integer labels.
struct Dataset {
  std::size_t n_features = 0;
  int n_classes = 0;
  std::vector<double> features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * n_features, n_features};
  }

  Dataset subset(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> class_histogram() const;

  bool operator==(const Dataset&) const = default;
};

// Non-owning selection of rows. The Dataset must outlive the view.
struct DatasetView {
  const Dataset* data = nullptr;
  std::vector<std::size_t> indices;

  DatasetView() = default;
  explicit DatasetView(const Dataset& all);
  DatasetView(const Dataset& all, std::vector<std::size_t> idx)
      : data(&all), indices(std::move(idx)) {}

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
  std::span<const double> row(std::size_t i) const {
    return data->row(indices[i]);
  }
  int label(std::size_t i) const { return data->labels[indices[i]]; }
};

struct Partition {
  std::vector<std::vector<std::size_t>> shards;
  std::uint64_t seed = 0;
};

struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> pixels;  // count * rows * cols, scaled by 1/255
};

struct IdxLabels {
  std::vector<int> labels;
};

using IdxData = std::variant<IdxImages, IdxLabels>;

// Unsigned-byte IDX container (magic 00 00 08 nd, big-endian u32 dims).
// Throws FormatError on a bad magic or unsupported type, TruncationError when
// the declared dims exceed the buffer.
IdxData parse_idx(std::span<const std::uint8_t> bytes);
IdxData read_idx_file(const std::filesystem::path& path);

// Standard four-file layout: train-images-idx3-ubyte, train-labels-idx1-ubyte,
// t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte.
struct IdxSplit {
  Dataset train;
  Dataset test;
  std::size_t image_rows = 0;
  std::size_t image_cols = 0;
};
IdxSplit load_idx_directory(const std::filesystem::path& dir);

Dataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Seeded shuffle of 0..n_train-1 cut into n_nodes contiguous chunks whose
// sizes differ by at most one (earlier shards take the remainder).
Partition partition_iid(std::size_t n_train, std::size_t n_nodes,
                        std::uint64_t seed);

// Seeded stratified split. Every class with at least two samples appears on
// both sides; the test side holds round(n * test_fraction) rows.
std::pair<Dataset, Dataset> split_train_test(const Dataset& ds,
                                             double test_fraction,
                                             std::uint64_t seed);

// Everything a node needs from the data side of a scenario. All nodes derive
// identical values from the same config.
struct ScenarioData {
  Dataset train;
  Dataset test;
  Partition partition;
};
ScenarioData load_scenario_data(const ScenarioConfig& cfg);

// label,f0,f1,... with a header line; values printed round-trip exact.
void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path);

}  // namespace fedmesh
