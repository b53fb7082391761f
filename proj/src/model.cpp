#include "fedmesh/model.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>

#include <fmt/format.h>

#include "fedmesh/error.hpp"
#include "fedmesh/rng.hpp"

namespace fedmesh {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) throw ValidationError("Matrix: value count mismatch");
}

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_mix(std::uint64_t& h, std::uint64_t word, int bytes) {
  for (int i = 0; i < bytes; ++i) {
    h ^= (word >> (8 * i)) & 0xff;
    h *= kFnvPrime;
  }
}

struct Layer {
  std::size_t fan_in;
  std::size_t fan_out;
  std::size_t w_offset;  // into values
  std::size_t b_offset;
};

std::vector<Layer> layers_of(const ModelSpec& arch) {
  std::vector<std::size_t> dims;
  dims.push_back(static_cast<std::size_t>(arch.input_dim));
  for (int h : arch.hidden_dims) dims.push_back(static_cast<std::size_t>(h));
  dims.push_back(static_cast<std::size_t>(arch.output_dim));
  std::vector<Layer> out;
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Layer layer{dims[l], dims[l + 1], offset, offset + dims[l] * dims[l + 1]};
    offset = layer.b_offset + layer.fan_out;
    out.push_back(layer);
  }
  return out;
}

void check_params(const ModelParams& p) {
  if (p.values.size() != parameter_count(p.arch)) {
    throw ValidationError("model parameters do not match architecture");
  }
}

// out = act(in * W^T + b) for one layer.
void dense(const ModelParams& p, const Layer& layer, const Matrix& in, Matrix& out,
           bool relu) {
  out = Matrix(in.rows, layer.fan_out);
  const double* w = p.values.data() + layer.w_offset;
  const double* b = p.values.data() + layer.b_offset;
  for (std::size_t s = 0; s < in.rows; ++s) {
    const double* a = in.data.data() + s * in.cols;
    double* z = out.data.data() + s * out.cols;
    for (std::size_t o = 0; o < layer.fan_out; ++o) {
      const double* wr = w + o * layer.fan_in;
      double acc = b[o];
      for (std::size_t i = 0; i < layer.fan_in; ++i) acc += wr[i] * a[i];
      z[o] = relu ? std::max(acc, 0.0) : acc;
    }
  }
}

void softmax_rows(Matrix& m) {
  for (std::size_t s = 0; s < m.rows; ++s) {
    auto r = m.row(s);
    const double mx = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : r) v /= sum;
  }
}

// Activations per layer boundary: acts[0] = input, acts.back() = softmax.
std::vector<Matrix> forward_trace(const ModelParams& p, const Matrix& batch) {
  check_params(p);
  if (batch.cols != static_cast<std::size_t>(p.arch.input_dim)) {
    throw ValidationError(fmt::format("forward: batch has {} columns, model expects {}",
                                      batch.cols, p.arch.input_dim));
  }
  const auto layers = layers_of(p.arch);
  std::vector<Matrix> acts;
  acts.reserve(layers.size() + 1);
  acts.push_back(batch);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix next;
    dense(p, layers[l], acts.back(), next, l + 1 < layers.size());
    acts.push_back(std::move(next));
  }
  softmax_rows(acts.back());
  return acts;
}

void check_labels(const ModelParams& p, const Matrix& batch, std::span<const int> labels) {
  if (labels.size() != batch.rows) {
    throw ValidationError(fmt::format("{} labels for {} rows", labels.size(), batch.rows));
  }
  for (int y : labels) {
    if (y < 0 || y >= p.arch.output_dim) {
      throw ValidationError(fmt::format("label {} outside 0..{}", y, p.arch.output_dim - 1));
    }
  }
}

double mean_cross_entropy(const Matrix& probs, std::span<const int> labels) {
  double total = 0.0;
  for (std::size_t s = 0; s < probs.rows; ++s) {
    total -= std::log(std::max(probs(s, static_cast<std::size_t>(labels[s])), 1e-300));
  }
  return total / static_cast<double>(probs.rows);
}

// Backprop through a trace; returns the gradient and writes the batch loss.
std::vector<double> backprop(const ModelParams& p, const std::vector<Matrix>& acts,
                             std::span<const int> labels, double* batch_loss) {
  const auto layers = layers_of(p.arch);
  const Matrix& probs = acts.back();
  const std::size_t n = probs.rows;
  if (batch_loss) *batch_loss = mean_cross_entropy(probs, labels);

  std::vector<double> grad(p.values.size(), 0.0);
  // dL/dz at the output: (softmax - onehot) / n.
  Matrix delta = probs;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t s = 0; s < n; ++s) {
    delta(s, static_cast<std::size_t>(labels[s])) -= 1.0;
    for (double& v : delta.row(s)) v *= inv_n;
  }

  for (std::size_t l = layers.size(); l-- > 0;) {
    const Layer& layer = layers[l];
    const Matrix& input = acts[l];
    double* gw = grad.data() + layer.w_offset;
    double* gb = grad.data() + layer.b_offset;
    for (std::size_t s = 0; s < n; ++s) {
      const double* a = input.data.data() + s * input.cols;
      const double* d = delta.data.data() + s * delta.cols;
      for (std::size_t o = 0; o < layer.fan_out; ++o) {
        const double g = d[o];
        if (g == 0.0) continue;
        gb[o] += g;
        double* row = gw + o * layer.fan_in;
        for (std::size_t i = 0; i < layer.fan_in; ++i) row[i] += g * a[i];
      }
    }
    if (l == 0) break;
    // Propagate into the previous layer's ReLU output.
    Matrix prev(n, layer.fan_in);
    const double* w = p.values.data() + layer.w_offset;
    for (std::size_t s = 0; s < n; ++s) {
      const double* d = delta.data.data() + s * delta.cols;
      double* pr = prev.data.data() + s * prev.cols;
      for (std::size_t o = 0; o < layer.fan_out; ++o) {
        const double g = d[o];
        if (g == 0.0) continue;
        const double* wr = w + o * layer.fan_in;
        for (std::size_t i = 0; i < layer.fan_in; ++i) pr[i] += g * wr[i];
      }
      const double* act = input.data.data() + s * input.cols;
      for (std::size_t i = 0; i < layer.fan_in; ++i) {
        if (act[i] <= 0.0) pr[i] = 0.0;
      }
    }
    delta = std::move(prev);
  }
  return grad;
}

}  // namespace

std::uint64_t arch_digest(const ModelSpec& arch) {
  std::uint64_t h = kFnvOffset;
  fnv_mix(h, static_cast<std::uint32_t>(arch.input_dim), 4);
  fnv_mix(h, static_cast<std::uint32_t>(arch.hidden_dims.size()), 4);
  for (int d : arch.hidden_dims) fnv_mix(h, static_cast<std::uint32_t>(d), 4);
  fnv_mix(h, static_cast<std::uint32_t>(arch.output_dim), 4);
  fnv_mix(h, static_cast<std::uint32_t>(arch.init_scheme), 4);
  return h;
}

std::size_t parameter_count(const ModelSpec& arch) {
  std::size_t total = 0;
  for (const auto& l : layers_of(arch)) total += l.fan_in * l.fan_out + l.fan_out;
  return total;
}

ModelParams init_model(const ModelSpec& arch, std::uint64_t seed) {
  ModelParams p;
  p.arch = arch;
  p.digest = arch_digest(arch);
  p.values.assign(parameter_count(arch), 0.0);
  Rng rng(seed);
  for (const auto& layer : layers_of(arch)) {
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.fan_in));
    for (std::size_t i = 0; i < layer.fan_in * layer.fan_out; ++i) {
      p.values[layer.w_offset + i] = rng.uniform(-bound, bound);
    }
  }
  return p;
}

Matrix forward(const ModelParams& p, const Matrix& batch) {
  auto acts = forward_trace(p, batch);
  return std::move(acts.back());
}

double loss(const ModelParams& p, const Matrix& batch, std::span<const int> labels) {
  check_labels(p, batch, labels);
  return mean_cross_entropy(forward(p, batch), labels);
}

std::vector<double> gradient(const ModelParams& p, const Matrix& batch,
                             std::span<const int> labels) {
  check_labels(p, batch, labels);
  if (batch.rows == 0) throw ValidationError("gradient: empty batch");
  return backprop(p, forward_trace(p, batch), labels, nullptr);
}

Matrix gather_rows(const DatasetView& view, std::size_t begin, std::size_t end) {
  Matrix m(end - begin, view.data->n_features);
  for (std::size_t i = begin; i < end; ++i) {
    auto r = view.row(i);
    std::copy(r.begin(), r.end(), m.row(i - begin).begin());
  }
  return m;
}

std::pair<ModelParams, TrainReport> train_epochs(const ModelParams& p,
                                                 const DatasetView& shard,
                                                 int epochs, double lr,
                                                 int batch_size,
                                                 std::uint64_t seed) {
  if (shard.empty()) throw ValidationError("train_epochs: empty shard");
  if (batch_size < 1) throw ValidationError("train_epochs: batch_size must be >= 1");
  const auto started = std::chrono::steady_clock::now();

  ModelParams cur = p;
  Rng rng(seed);
  std::vector<std::size_t> order(shard.size());
  TrainReport report;
  double loss_sum = 0.0;
  const auto bs = static_cast<std::size_t>(batch_size);

  for (int e = 0; e < epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span(order));
    std::vector<std::size_t> picked;
    for (std::size_t i : order) picked.push_back(shard.indices[i]);
    const DatasetView epoch_view(*shard.data, std::move(picked));

    for (std::size_t begin = 0; begin < epoch_view.size(); begin += bs) {
      const std::size_t end = std::min(begin + bs, epoch_view.size());
      Matrix batch = gather_rows(epoch_view, begin, end);
      std::vector<int> labels(end - begin);
      for (std::size_t i = begin; i < end; ++i) labels[i - begin] = epoch_view.label(i);

      double batch_loss = 0.0;
      const auto g = backprop(cur, forward_trace(cur, batch), labels, &batch_loss);
      for (std::size_t k = 0; k < g.size(); ++k) cur.values[k] -= lr * g[k];
      loss_sum += batch_loss * static_cast<double>(end - begin);
      report.samples_seen += end - begin;
    }
  }
  report.mean_loss = report.samples_seen ? loss_sum / static_cast<double>(report.samples_seen) : 0.0;
  const auto elapsed = std::chrono::steady_clock::now() - started;
  report.epoch_wall_ms =
      std::chrono::duration<double, std::milli>(elapsed).count() / std::max(epochs, 1);
  return {std::move(cur), report};
}

EvalResult macro_f1(std::span<const int> predicted, std::span<const int> actual,
                    int n_classes) {
  const auto k = static_cast<std::size_t>(n_classes);
  std::vector<std::size_t> tp(k, 0), fp(k, 0), fn(k, 0);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto pr = static_cast<std::size_t>(predicted[i]);
    const auto ac = static_cast<std::size_t>(actual[i]);
    if (pr == ac) {
      ++tp[pr];
    } else {
      ++fp[pr];
      ++fn[ac];
    }
  }
  EvalResult out;
  out.per_class_f1.resize(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    // F1 = 2PR/(P+R) = 2tp / (2tp + fp + fn); zero when undefined.
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    out.per_class_f1[c] = tp[c] == 0 ? 0.0 : 2.0 * tp[c] / denom;
  }
  out.macro_f1 = k ? std::accumulate(out.per_class_f1.begin(), out.per_class_f1.end(), 0.0) /
                         static_cast<double>(k)
                   : 0.0;
  return out;
}

EvalResult evaluate(const ModelParams& p, const DatasetView& test) {
  if (test.empty()) throw ValidationError("evaluate: empty test set");
  constexpr std::size_t kChunk = 512;
  std::vector<int> predicted(test.size()), actual(test.size());
  for (std::size_t begin = 0; begin < test.size(); begin += kChunk) {
    const std::size_t end = std::min(begin + kChunk, test.size());
    const Matrix probs = forward(p, gather_rows(test, begin, end));
    for (std::size_t i = begin; i < end; ++i) {
      auto r = probs.row(i - begin);
      predicted[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
      actual[i] = test.label(i);
    }
  }
  return macro_f1(predicted, actual, p.arch.output_dim);
}

EvalResult evaluate(const ModelParams& p, const Dataset& test) {
  return evaluate(p, DatasetView(test));
}

std::size_t serialized_size(const ModelSpec& arch) {
  return 8 + 4 + 8 * parameter_count(arch);
}

std::vector<std::uint8_t> serialize_params(const ModelParams& p) {
  std::vector<std::uint8_t> out;
  out.reserve(12 + 8 * p.values.size());
  auto put = [&out](std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put(p.digest, 8);
  put(static_cast<std::uint32_t>(p.values.size()), 4);
  for (double v : p.values) {
    if (!std::isfinite(v)) throw ValidationError("serialize_params: non-finite value");
    put(std::bit_cast<std::uint64_t>(v), 8);
  }
  return out;
}

ModelParams deserialize_params(std::span<const std::uint8_t> bytes,
                               const ModelSpec& arch) {
  auto get = [&bytes](std::size_t off, int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{bytes[off + i]} << (8 * i);
    return v;
  };
  if (bytes.size() < 12) throw TruncationError("model payload shorter than its header");
  ModelParams p;
  p.arch = arch;
  p.digest = arch_digest(arch);
  if (get(0, 8) != p.digest) {
    throw IncompatibleArchitecture("model payload digest does not match local architecture");
  }
  const std::size_t count = get(8, 4);
  if (count != parameter_count(arch)) {
    throw IncompatibleArchitecture(fmt::format(
        "model payload declares {} values, architecture has {}", count, parameter_count(arch)));
  }
  if (bytes.size() != 12 + 8 * count) {
    throw TruncationError(fmt::format("model payload is {} bytes, expected {}", bytes.size(),
                                      12 + 8 * count));
  }
  p.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    p.values[i] = std::bit_cast<double>(get(12 + 8 * i, 8));
  }
  return p;
}

std::uint64_t params_fingerprint(const ModelParams& p) {
  std::uint64_t h = kFnvOffset;
  fnv_mix(h, p.digest, 8);
  for (double v : p.values) fnv_mix(h, std::bit_cast<std::uint64_t>(v), 8);
  return h;
}

}  // namespace fedmesh
