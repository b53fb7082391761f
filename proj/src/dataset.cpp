#include "fedmesh/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include <fmt/format.h>

#include "fedmesh/error.hpp"
#include "fedmesh/rng.hpp"

namespace fedmesh {

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.n_features = n_features;
  out.n_classes = n_classes;
  out.features.reserve(indices.size() * n_features);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    auto r = row(i);
    out.features.insert(out.features.end(), r.begin(), r.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

std::vector<std::size_t> Dataset::class_histogram() const {
  std::vector<std::size_t> hist(static_cast<std::size_t>(std::max(n_classes, 0)), 0);
  for (int y : labels) ++hist.at(static_cast<std::size_t>(y));
  return hist;
}

DatasetView::DatasetView(const Dataset& all) : data(&all), indices(all.size()) {
  std::iota(indices.begin(), indices.end(), std::size_t{0});
}

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("{}: file not found", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

IdxData parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw TruncationError("IDX header truncated");
  if (bytes[0] != 0 || bytes[1] != 0) throw FormatError("IDX: bad magic");
  if (bytes[2] != 0x08) {
    throw FormatError(fmt::format("IDX: unsupported element type 0x{:02x}", bytes[2]));
  }
  const std::size_t n_dims = bytes[3];
  if (n_dims < 1 || n_dims > 3) {
    throw FormatError(fmt::format("IDX: unsupported dimension count {}", n_dims));
  }
  const std::size_t header = 4 + 4 * n_dims;
  if (bytes.size() < header) throw TruncationError("IDX dimension block truncated");
  std::vector<std::size_t> dims(n_dims);
  std::size_t total = 1;
  const std::size_t available = bytes.size() - header;
  for (std::size_t d = 0; d < n_dims; ++d) {
    dims[d] = read_be32(bytes, 4 + 4 * d);
    if (dims[d] != 0 && total > available / dims[d] + 1) total = available + 1;
    else total *= dims[d];
  }
  if (available < total) {
    throw TruncationError(fmt::format("IDX payload truncated: have {} bytes", available));
  }
  const auto payload = bytes.subspan(header, total);

  if (n_dims == 1) {
    IdxLabels out;
    out.labels.assign(payload.begin(), payload.end());
    return out;
  }
  IdxImages img;
  img.count = dims[0];
  img.rows = n_dims == 3 ? dims[1] : 1;
  img.cols = n_dims == 3 ? dims[2] : dims[1];
  img.pixels.resize(total);
  std::transform(payload.begin(), payload.end(), img.pixels.begin(),
                 [](std::uint8_t v) { return static_cast<double>(v) / 255.0; });
  return img;
}

IdxData read_idx_file(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return parse_idx(bytes);
  } catch (const FormatError& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  } catch (const TruncationError& e) {
    throw TruncationError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

namespace {

Dataset assemble(const IdxData& images, const IdxData& labels,
                 const std::string& what) {
  const auto* img = std::get_if<IdxImages>(&images);
  const auto* lab = std::get_if<IdxLabels>(&labels);
  if (!img) throw FormatError(what + ": images file does not hold an image tensor");
  if (!lab) throw FormatError(what + ": labels file does not hold a label vector");
  if (img->count != lab->labels.size()) {
    throw FormatError(fmt::format("{}: {} images but {} labels", what, img->count,
                                  lab->labels.size()));
  }
  Dataset ds;
  ds.n_features = img->rows * img->cols;
  ds.features = img->pixels;
  ds.labels = lab->labels;
  int max_label = 0;
  for (int y : ds.labels) max_label = std::max(max_label, y);
  ds.n_classes = std::max(10, max_label + 1);
  return ds;
}

}  // namespace

IdxSplit load_idx_directory(const std::filesystem::path& dir) {
  IdxSplit out;
  auto train_images = read_idx_file(dir / "train-images-idx3-ubyte");
  out.train = assemble(train_images, read_idx_file(dir / "train-labels-idx1-ubyte"), "train");
  out.test = assemble(read_idx_file(dir / "t10k-images-idx3-ubyte"),
                      read_idx_file(dir / "t10k-labels-idx1-ubyte"), "test");
  const auto& img = std::get<IdxImages>(train_images);
  out.image_rows = img.rows;
  out.image_cols = img.cols;
  const int classes = std::max(out.train.n_classes, out.test.n_classes);
  out.train.n_classes = out.test.n_classes = classes;
  return out;
}

Dataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(spec.n_samples);
  const auto d = static_cast<std::size_t>(spec.n_features);
  const auto k = static_cast<std::size_t>(spec.n_classes);
  Rng rng(seed);

  std::vector<double> centers(k * d);
  for (double& c : centers) c = rng.uniform();

  Dataset ds;
  ds.n_features = d;
  ds.n_classes = spec.n_classes;
  ds.features.resize(n * d);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % k;
    ds.labels[i] = static_cast<int>(cls);
    for (std::size_t j = 0; j < d; ++j) {
      const double center = centers[cls * d + j];
      const double v = spec.cluster_stddev > 0.0
                           ? rng.normal(center, spec.cluster_stddev)
                           : center;
      ds.features[i * d + j] = std::clamp(v, 0.0, 1.0);
    }
  }
  return ds;
}

Partition partition_iid(std::size_t n_train, std::size_t n_nodes,
                        std::uint64_t seed) {
  if (n_nodes == 0) throw ValidationError("partition_iid: n_nodes must be >= 1");
  if (n_train < n_nodes) {
    throw ValidationError(fmt::format("partition_iid: {} samples for {} nodes", n_train, n_nodes));
  }
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span(order));

  Partition part;
  part.seed = seed;
  const std::size_t base = n_train / n_nodes;
  const std::size_t extra = n_train % n_nodes;
  std::size_t offset = 0;
  for (std::size_t s = 0; s < n_nodes; ++s) {
    const std::size_t len = base + (s < extra ? 1 : 0);
    part.shards.emplace_back(order.begin() + offset, order.begin() + offset + len);
    offset += len;
  }
  return part;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& ds,
                                             double test_fraction,
                                             std::uint64_t seed) {
  if (ds.empty()) throw ValidationError("split_train_test: empty dataset");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ValidationError("split_train_test: test_fraction must be in (0,1)");
  }
  const std::size_t n = ds.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span(order));

  std::size_t n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
  if (n >= 2) n_test = std::clamp<std::size_t>(n_test, 1, n - 1);

  // Per-class quotas by largest remainder, kept inside [1, count-1] for
  // classes with two or more samples.
  const auto hist = ds.class_histogram();
  const std::size_t k = hist.size();
  std::vector<std::size_t> quota(k, 0), lo(k, 0), hi(k, 0);
  std::vector<double> frac(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    const double exact = static_cast<double>(hist[c]) * static_cast<double>(n_test) /
                         static_cast<double>(n);
    lo[c] = hist[c] >= 2 ? 1 : 0;
    hi[c] = hist[c] >= 2 ? hist[c] - 1 : 0;
    quota[c] = std::clamp(static_cast<std::size_t>(std::floor(exact)), lo[c], hi[c]);
    frac[c] = exact - std::floor(exact);
  }
  std::vector<std::size_t> by_frac(k);
  std::iota(by_frac.begin(), by_frac.end(), std::size_t{0});
  std::stable_sort(by_frac.begin(), by_frac.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  auto total = [&] { return std::accumulate(quota.begin(), quota.end(), std::size_t{0}); };
  // Grow or shrink quotas one unit at a time until they hit n_test or no class
  // has slack left.
  for (bool moved = true; total() != n_test && moved;) {
    moved = false;
    const bool grow = total() < n_test;
    for (std::size_t c : by_frac) {
      if (total() == n_test) break;
      if (grow && quota[c] < hi[c]) {
        ++quota[c];
        moved = true;
      } else if (!grow && quota[c] > lo[c]) {
        --quota[c];
        moved = true;
      }
    }
  }

  std::vector<std::size_t> train_idx, test_idx;
  std::vector<std::size_t> taken(k, 0);
  for (std::size_t i : order) {
    const auto c = static_cast<std::size_t>(ds.labels[i]);
    if (taken[c] < quota[c]) {
      ++taken[c];
      test_idx.push_back(i);
    } else {
      train_idx.push_back(i);
    }
  }
  return {ds.subset(train_idx), ds.subset(test_idx)};
}

ScenarioData load_scenario_data(const ScenarioConfig& cfg) {
  ScenarioData out;
  const auto& spec = cfg.dataset;
  if (spec.source == DatasetSource::synthetic) {
    if (!spec.synthetic) throw ValidationError("dataset.synthetic: missing");
    Dataset all = gen_synthetic(*spec.synthetic, mix_seed(cfg.master_seed, 1));
    auto [train, test] = split_train_test(all, spec.test_fraction, mix_seed(cfg.master_seed, 2));
    out.train = std::move(train);
    out.test = std::move(test);
  } else {
    auto split = load_idx_directory(spec.data_dir);
    out.train = std::move(split.train);
    out.test = std::move(split.test);
  }
  out.partition = partition_iid(out.train.size(), cfg.participants.size(),
                                mix_seed(cfg.master_seed, 3));
  return out;
}

void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("{}: cannot open for writing", path.string()));
  out << "label";
  for (std::size_t j = 0; j < ds.n_features; ++j) out << ",f" << j;
  out << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    for (double v : ds.row(i)) out << ',' << fmt::format("{}", v);
    out << '\n';
  }
}

}  // namespace fedmesh
