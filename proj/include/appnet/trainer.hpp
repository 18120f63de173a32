#pragma once

// Training and evaluation loops over manifest datasets.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "appnet/checkpoint.hpp"
#include "appnet/data.hpp"
#include "appnet/geometry.hpp"
#include "appnet/network.hpp"
#include "appnet/optim.hpp"
#include "appnet/rng.hpp"
#include "appnet/surface.hpp"

namespace appnet {

struct TrainConfig {
  int epochs = 50;
  std::size_t train_batch = 32;
  std::size_t test_batch = 16;
  LrSchedule schedule{};
  std::uint64_t seed = 0;
  std::size_t normal_k = 16;
  bool augment_rotate = true;
  double augment_jitter = 0.01;
  std::filesystem::path checkpoint;  // best-test checkpoint; empty disables writing
  std::function<void(const std::string&)> log;  // receives one CSV line per epoch

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (train_batch < 1 || test_batch < 1) throw std::invalid_argument("TrainConfig: batch sizes must be >= 1");
    if (normal_k < 3) throw std::invalid_argument("TrainConfig: normal_k must be >= 3");
    if (augment_jitter < 0.0) throw std::invalid_argument("TrainConfig: negative jitter");
    schedule.validate();
  }
};

struct Metrics {
  double oa = 0.0;
  double loss = 0.0;
  std::vector<double> per_class;  // accuracy per class; NaN when a class has no samples
  std::size_t count = 0;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_oa = 0.0;
  double test_oa = 0.0;
};

inline std::string csv_header() { return "epoch,lr,train_loss,train_oa,test_oa"; }

inline std::string csv_line(const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%.6g,%.6f,%.4f,%.4f", r.epoch, r.lr, r.train_loss, r.train_oa, r.test_oa);
  return buf;
}

/// Worker count: APPNET_THREADS if set, else the hardware concurrency.
inline std::size_t worker_count() {
  std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("APPNET_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return std::min<std::size_t>(static_cast<std::size_t>(v), hw);
  }
  return hw;
}

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. Each index is
/// handled independently, so results do not depend on the thread count.
template <class F>
void parallel_for(std::size_t n, F&& fn) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Network input rows for a cloud: raw coordinates, normals, or normals
/// plus curvature.
template <class T>
PointCloud<T> with_descriptors(const PointCloud<T>& cloud, InputMode mode, std::size_t k) {
  PointCloud<T> out;
  out.positions = cloud.positions;
  out.label = cloud.label;
  const std::size_t n = cloud.size();
  out.feature_channels = input_channels(mode);
  if (mode == InputMode::Xyz) {
    out.features = cloud.positions;
    return out;
  }
  const auto desc = estimate_surface<T>(cloud.positions, k);
  out.features.resize(n * out.feature_channels);
  for (std::size_t i = 0; i < n; ++i) {
    for (int d = 0; d < 3; ++d) out.features[i * out.feature_channels + d] = desc.normals[3 * i + d];
    if (mode == InputMode::NormalCurvature) out.features[i * 4 + 3] = desc.curvature[i];
  }
  return out;
}

/// Rotation about z plus per-point Gaussian jitter.
template <class T>
PointCloud<T> augment(const PointCloud<T>& cloud, bool rotate, double jitter, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud<T> out;
  out.label = cloud.label;
  out.positions = cloud.positions;
  const double a = rotate ? rng.uniform(0.0, 2.0 * std::numbers::pi) : 0.0;
  const double c = std::cos(a), s = std::sin(a);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double x = cloud.positions[3 * i], y = cloud.positions[3 * i + 1];
    out.positions[3 * i] = static_cast<T>(c * x - s * y);
    out.positions[3 * i + 1] = static_cast<T>(s * x + c * y);
    if (jitter > 0.0)
      for (int d = 0; d < 3; ++d) out.positions[3 * i + d] += static_cast<T>(jitter * rng.normal());
  }
  return out;
}

/// Loads every manifest entry as positions with its label.
template <class T>
std::vector<PointCloud<T>> load_samples(const DatasetManifest& m) {
  std::vector<PointCloud<T>> out(m.entries.size());
  parallel_for(m.entries.size(), [&](std::size_t i) {
    auto f = read_xyz<T>(m.root / m.entries[i].path);
    out[i].positions = std::move(f.cloud.positions);
    out[i].label = m.entries[i].class_id;
  });
  return out;
}

/// Descriptor-augmented copies of clean samples; computed once and reused.
template <class T>
std::vector<PointCloud<T>> prepare_inputs(const std::vector<PointCloud<T>>& clouds, InputMode mode, std::size_t k) {
  std::vector<PointCloud<T>> out(clouds.size());
  parallel_for(clouds.size(), [&](std::size_t i) { out[i] = with_descriptors(clouds[i], mode, k); });
  return out;
}

namespace detail {

template <class T>
void tally(const Tensor<T>& logits, std::span<const int> labels, std::vector<std::size_t>& hit,
           std::vector<std::size_t>& seen) {
  const std::size_t k = logits.cols();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    ++seen[labels[i]];
    if (static_cast<int>(best) == labels[i]) ++hit[labels[i]];
  }
}

inline Metrics finish_metrics(const std::vector<std::size_t>& hit, const std::vector<std::size_t>& seen,
                              double loss_sum) {
  Metrics m;
  std::size_t h = 0;
  for (std::size_t c = 0; c < seen.size(); ++c) {
    m.count += seen[c];
    h += hit[c];
    m.per_class.push_back(seen[c] ? static_cast<double>(hit[c]) / static_cast<double>(seen[c])
                                  : std::numeric_limits<double>::quiet_NaN());
  }
  m.oa = m.count ? static_cast<double>(h) / static_cast<double>(m.count) : 0.0;
  m.loss = m.count ? loss_sum / static_cast<double>(m.count) : 0.0;
  return m;
}

}  // namespace detail

/// Eval-mode accuracy over prepared inputs; no augmentation, no voting.
template <class T>
Metrics evaluate(AppNet<T>& net, const std::vector<PointCloud<T>>& inputs, std::size_t batch, std::uint64_t seed) {
  const std::size_t k = net.config().num_classes;
  std::vector<std::size_t> hit(k, 0), seen(k, 0);
  double loss_sum = 0.0;
  for (std::size_t b0 = 0; b0 < inputs.size(); b0 += batch) {
    const std::size_t b1 = std::min(inputs.size(), b0 + batch);
    std::vector<PointCloud<T>> part(inputs.begin() + b0, inputs.begin() + b1);
    std::vector<int> labels;
    for (const auto& s : part) {
      if (!s.label || *s.label < 0 || static_cast<std::size_t>(*s.label) >= k)
        throw std::invalid_argument("evaluate: sample label outside the network's class range");
      labels.push_back(*s.label);
    }
    auto logits = net.forward(part, Mode::Eval, derive_seed(seed, {0xe7a1}));
    loss_sum += static_cast<double>(cross_entropy(logits, labels).item()) * static_cast<double>(labels.size());
    detail::tally(logits, labels, hit, seen);
  }
  return detail::finish_metrics(hit, seen, loss_sum);
}

template <class T>
struct TrainResult {
  std::vector<EpochRecord> history;
  double best_test_oa = -1.0;
  int best_epoch = -1;
  std::vector<CheckpointRecord> best_records;
};

/// Mini-batch training with Adam and the warmup + cosine schedule. Keeps
/// (and optionally writes) the weights of the epoch with the best test OA.
template <class T>
TrainResult<T> train(AppNet<T>& net, const TrainConfig& tc, const std::vector<PointCloud<T>>& train_clouds,
                     const std::vector<PointCloud<T>>& test_inputs) {
  tc.validate();
  const InputMode mode = net.config().input;
  const std::size_t classes = net.config().num_classes;
  for (const auto& s : train_clouds)
    if (!s.label || *s.label < 0 || static_cast<std::size_t>(*s.label) >= classes)
      throw std::invalid_argument("train: dataset class ids do not fit the network's class count");
  if (train_clouds.size() < 2) throw std::invalid_argument("train: need at least 2 training samples");

  // clean descriptors, used directly when no augmentation is configured
  const bool augmenting = tc.augment_rotate || tc.augment_jitter > 0.0;
  std::vector<PointCloud<T>> clean;
  if (!augmenting) clean = prepare_inputs(train_clouds, mode, tc.normal_k);

  auto params = net.parameters();
  AdamState adam;
  TrainResult<T> res;
  const std::size_t n = train_clouds.size();
  // a trailing batch of one cannot be normalized with batch statistics
  const std::size_t batches = n / tc.train_batch + (n % tc.train_batch >= 2 ? 1 : 0);

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle(derive_seed(tc.seed, {0x5f1e, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.uniform_index(i)]);

    std::vector<std::size_t> hit(classes, 0), seen(classes, 0);
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t b0 = b * tc.train_batch, b1 = std::min(n, b0 + tc.train_batch);
      std::vector<PointCloud<T>> batch(b1 - b0);
      parallel_for(b1 - b0, [&](std::size_t i) {
        const std::size_t idx = order[b0 + i];
        if (!augmenting) {
          batch[i] = clean[idx];
          return;
        }
        const auto seed = derive_seed(tc.seed, {0xa06, static_cast<std::uint64_t>(epoch), idx});
        batch[i] = with_descriptors(augment(train_clouds[idx], tc.augment_rotate, tc.augment_jitter, seed), mode,
                                    tc.normal_k);
      });
      std::vector<int> labels;
      for (const auto& s : batch) labels.push_back(*s.label);

      lr = lr_at(epoch, tc.schedule, static_cast<int>(b), static_cast<int>(batches));
      net.zero_grad();
      auto logits =
          net.forward(batch, Mode::Train, derive_seed(tc.seed, {0xf0d, static_cast<std::uint64_t>(epoch), b}));
      auto loss = cross_entropy(logits, labels);
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(labels.size());
      detail::tally(logits, labels, hit, seen);
      backward(loss);
      adam_step(params, adam, lr);
    }
    const auto train_m = detail::finish_metrics(hit, seen, loss_sum);
    const auto test_m = evaluate(net, test_inputs, tc.test_batch, tc.seed);
    EpochRecord rec{epoch, lr, train_m.loss, train_m.oa, test_m.oa};
    res.history.push_back(rec);
    if (tc.log) tc.log(csv_line(rec));
    if (test_m.oa > res.best_test_oa) {
      res.best_test_oa = test_m.oa;
      res.best_epoch = epoch;
      res.best_records = net.to_records();
      if (!tc.checkpoint.empty()) {
        write_checkpoint(tc.checkpoint.string(), res.best_records);
        std::ofstream cfg(tc.checkpoint.string() + ".cfg", std::ios::binary);
        cfg << config_to_text(net.config());
        if (!cfg) throw std::runtime_error("cannot write " + tc.checkpoint.string() + ".cfg");
      }
    }
  }
  return res;
}

/// Network restored from a checkpoint and its "<checkpoint>.cfg" side file.
template <class T>
AppNet<T> load_network(const std::filesystem::path& checkpoint) {
  if (!std::filesystem::exists(checkpoint)) throw std::runtime_error("checkpoint not found: " + checkpoint.string());
  std::ifstream f(checkpoint.string() + ".cfg", std::ios::binary);
  if (!f) throw std::runtime_error("missing config file " + checkpoint.string() + ".cfg");
  std::stringstream ss;
  ss << f.rdbuf();
  AppNet<T> net(config_from_text(ss.str()), 0);
  net.load_records(read_checkpoint(checkpoint.string()));
  return net;
}

}  // namespace appnet
