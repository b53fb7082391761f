#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "fedmesh/dataset.hpp"
#include "fedmesh/scenario.hpp"

namespace fedmesh {

// Dense row-major matrix; the batch and probability containers.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * cols, cols};
  }
  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

std::uint64_t arch_digest(const ModelSpec& arch);
std::size_t parameter_count(const ModelSpec& arch);

// MLP parameters, layer-major: W1 (fan_out x fan_in, row-major), b1, W2, b2...
struct ModelParams {
  ModelSpec arch;
  std::vector<double> values;
  std::uint64_t digest = 0;

  bool operator==(const ModelParams&) const = default;
};

struct TrainReport {
  double mean_loss = 0.0;
  std::size_t samples_seen = 0;
  double epoch_wall_ms = 0.0;
};

struct EvalResult {
  double macro_f1 = 0.0;
  std::vector<double> per_class_f1;
};

// Weights uniform in +-sqrt(6 / fan_in), biases zero.
ModelParams init_model(const ModelSpec& arch, std::uint64_t seed);

// ReLU hidden layers, softmax output. Throws ValidationError when
// batch.cols != arch.input_dim.
Matrix forward(const ModelParams& p, const Matrix& batch);

// Mean cross-entropy over the batch.
double loss(const ModelParams& p, const Matrix& batch, std::span<const int> labels);

// Gradient of the mean cross-entropy; same layout as p.values.
std::vector<double> gradient(const ModelParams& p, const Matrix& batch,
                             std::span<const int> labels);

// Minibatch SGD, reshuffling the shard every epoch from `seed`. The final
// short batch is kept.
std::pair<ModelParams, TrainReport> train_epochs(const ModelParams& p,
                                                 const DatasetView& shard,
                                                 int epochs, double lr,
                                                 int batch_size,
                                                 std::uint64_t seed);

// Predictions are argmax with ties to the lowest class. Classes with no
// predictions and no labels score F1 = 0.
EvalResult evaluate(const ModelParams& p, const DatasetView& test);
EvalResult evaluate(const ModelParams& p, const Dataset& test);

// Macro-F1 from plain prediction/label vectors (used by evaluate).
EvalResult macro_f1(std::span<const int> predicted, std::span<const int> actual,
                    int n_classes);

// digest (u64 LE) | count (u32 LE) | values (f64 LE).
std::vector<std::uint8_t> serialize_params(const ModelParams& p);
// Throws IncompatibleArchitecture on digest or count mismatch, TruncationError
// when the buffer length does not match the declared count.
ModelParams deserialize_params(std::span<const std::uint8_t> bytes,
                               const ModelSpec& arch);
std::size_t serialized_size(const ModelSpec& arch);

// FNV-1a over the serialized bytes; compact identity for trajectory checks.
std::uint64_t params_fingerprint(const ModelParams& p);

Matrix gather_rows(const DatasetView& view, std::size_t begin, std::size_t end);

}  // namespace fedmesh
