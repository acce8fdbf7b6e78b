#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "npcl/error.hpp"
#include "npcl/matrix.hpp"
#include "npcl/model.hpp"
#include "npcl/random.hpp"
#include "npcl/trainer.hpp"

namespace npcl {

struct EvalConfig {
  std::vector<double> fractions = {0.01, 0.1, 0.2, 1.0};
  int epochs = 15;
  double lr = 0.2;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int batch_size = 512;
  // Used for fractions at or below small_fraction.
  int small_batch_size = 32;
  double small_fraction = 0.01;
  int folds = 5;
  // Z-score features with statistics of each fold's training rows.
  bool standardize = true;
  std::uint64_t seed = 0;

  int batch_size_for(double fraction) const { return fraction <= small_fraction ? small_batch_size : batch_size; }

  void validate() const {
    using detail::require;
    require<config_error>(!fractions.empty(), "lineval.fractions must not be empty");
    for (double f : fractions) require<config_error>(f > 0 && f <= 1, "lineval fractions must lie in (0, 1]");
    require<config_error>(epochs >= 1, "lineval.epochs must be >= 1");
    require<config_error>(lr > 0, "lineval.lr must be positive");
    require<config_error>(momentum >= 0 && momentum < 1, "lineval.momentum must be in [0, 1)");
    require<config_error>(weight_decay >= 0, "lineval.weight_decay must be non-negative");
    require<config_error>(batch_size >= 1 && small_batch_size >= 1, "lineval batch sizes must be positive");
    require<config_error>(folds >= 2, "lineval.folds must be >= 2");
  }
};

// ---------------------------------------------------------------- metrics

struct ClassMetrics {
  long long support = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

struct Metrics {
  std::vector<ClassMetrics> per_class;
  double macro_f1 = 0;
  double balanced_accuracy = 0;
  double accuracy = 0;
  std::vector<int> excluded;  // classes with zero support, left out of the means
};

using ConfusionMatrix = Matrix<long long>;  // rows: true class, columns: predicted

inline ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, int classes) {
  detail::require<data_error>(truth.size() == pred.size(), "confusion: length mismatch");
  ConfusionMatrix m(static_cast<std::size_t>(classes), static_cast<std::size_t>(classes), 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    detail::require<data_error>(truth[i] >= 0 && truth[i] < classes && pred[i] >= 0 && pred[i] < classes,
                                "confusion: class id out of range");
    ++m(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(pred[i]));
  }
  return m;
}

// Per-class precision/recall/F1 with macro-F1 and balanced accuracy (mean
// recall). Values are fractions in [0, 1].
inline Metrics metrics(const ConfusionMatrix& cm) {
  detail::require<data_error>(cm.rows == cm.cols && cm.rows > 0, "metrics: confusion matrix must be square");
  const std::size_t k = cm.rows;
  std::vector<long long> row(k, 0), col(k, 0);
  long long total = 0, correct = 0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const long long v = cm(i, j);
      detail::require<data_error>(v >= 0, "metrics: negative count");
      row[i] += v;
      col[j] += v;
      total += v;
      if (i == j) correct += v;
    }
  detail::require<data_error>(total > 0, "metrics: confusion matrix is all zeros");

  Metrics m;
  m.per_class.resize(k);
  double f1_sum = 0, recall_sum = 0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < k; ++c) {
    auto& pc = m.per_class[c];
    pc.support = row[c];
    const auto tp = static_cast<double>(cm(c, c));
    pc.precision = col[c] > 0 ? tp / static_cast<double>(col[c]) : 0.0;
    pc.recall = row[c] > 0 ? tp / static_cast<double>(row[c]) : 0.0;
    pc.f1 = pc.precision + pc.recall > 0 ? 2 * pc.precision * pc.recall / (pc.precision + pc.recall) : 0.0;
    if (row[c] == 0) {
      m.excluded.push_back(static_cast<int>(c));
      continue;
    }
    f1_sum += pc.f1;
    recall_sum += pc.recall;
    ++counted;
  }
  m.macro_f1 = f1_sum / static_cast<double>(counted);
  m.balanced_accuracy = recall_sum / static_cast<double>(counted);
  m.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  return m;
}

// ---------------------------------------------------------------- sampling

// Class-balanced quotas: each class gets floor(target / K), capped at its
// size; the remaining budget is handed out one item at a time, round-robin
// in class order, to classes that still have items.
inline std::vector<long long> class_quotas(std::span<const long long> class_sizes, long long target) {
  const auto k = static_cast<long long>(class_sizes.size());
  detail::require<config_error>(k > 0, "class_quotas: no classes");
  std::vector<long long> quota(class_sizes.size());
  long long assigned = 0, capacity = 0;
  for (std::size_t c = 0; c < class_sizes.size(); ++c) {
    quota[c] = std::min(class_sizes[c], target / k);
    assigned += quota[c];
    capacity += class_sizes[c];
  }
  long long pool = std::min(target, capacity) - assigned;
  while (pool > 0) {
    for (std::size_t c = 0; c < class_sizes.size() && pool > 0; ++c)
      if (quota[c] < class_sizes[c]) {
        ++quota[c];
        --pool;
      }
  }
  return quota;
}

// Indices (ascending) of a class-balanced subset of round(fraction * n)
// items. Within each class a seeded shuffle decides membership, so larger
// fractions with the same seed select supersets.
inline std::vector<std::size_t> subsample_labels(std::span<const int> labels, int classes, double fraction,
                                                 std::uint64_t seed) {
  detail::require<config_error>(fraction > 0 && fraction <= 1, "subsample: fraction must lie in (0, 1]");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    detail::require<data_error>(labels[i] >= 0 && labels[i] < classes, "subsample: label out of range");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  std::vector<long long> sizes;
  for (const auto& v : by_class) sizes.push_back(static_cast<long long>(v.size()));
  const auto target = static_cast<long long>(std::llround(fraction * static_cast<double>(labels.size())));
  const auto quota = class_quotas(sizes, target);
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto members = by_class[c];
    Rng rng(derive_seed(seed, {c}));
    rng.shuffle(members);
    out.insert(out.end(), members.begin(), members.begin() + quota[c]);
  }
  std::sort(out.begin(), out.end());
  detail::require<data_error>(!out.empty(), "subsample: fraction " + std::to_string(fraction) + " selects no items");
  return out;
}

struct Folds {
  std::vector<std::vector<std::size_t>> folds;
  // Classes with fewer members than folds (cannot appear in every fold).
  std::vector<int> small_classes;
};

// Stratified k-fold split of positions 0..n-1. Each class is shuffled and
// dealt round-robin, the dealing position carrying over between classes so
// that fold sizes also differ by at most one.
inline Folds kfold(std::span<const int> labels, int k, std::uint64_t seed) {
  const std::size_t n = labels.size();
  detail::require<config_error>(k >= 2, "kfold: k must be >= 2");
  detail::require<data_error>(n >= static_cast<std::size_t>(k), "kfold: fewer items than folds");
  int max_label = 0;
  for (int l : labels) {
    detail::require<data_error>(l >= 0, "kfold: negative label");
    max_label = std::max(max_label, l);
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label) + 1);
  for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);

  Folds f;
  f.folds.resize(static_cast<std::size_t>(k));
  std::size_t cursor = 0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto members = by_class[c];
    if (members.empty()) continue;
    if (members.size() < static_cast<std::size_t>(k)) f.small_classes.push_back(static_cast<int>(c));
    Rng rng(derive_seed(seed, {c}));
    rng.shuffle(members);
    for (std::size_t idx : members) {
      f.folds[cursor].push_back(idx);
      cursor = (cursor + 1) % static_cast<std::size_t>(k);
    }
  }
  for (auto& fold : f.folds) std::sort(fold.begin(), fold.end());
  return f;
}

// ---------------------------------------------------------------- training

template <typename T>
Matrix<T> select_rows(const Matrix<T>& m, std::span<const std::size_t> idx) {
  Matrix<T> out(idx.size(), m.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy(m.row(idx[i]).begin(), m.row(idx[i]).end(), out.row(i).begin());
  return out;
}

template <typename T>
std::vector<T> select(std::span<const T> v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

// Linear classifier trained on frozen features. When standardization is on,
// the feature affine map is folded into the returned weights so the head
// consumes raw features.
inline LinearHead<float> train_linear(const Matrix<float>& features, std::span<const int> labels, int classes,
                                      const EvalConfig& cfg, int batch_size, std::uint64_t seed) {
  cfg.validate();
  detail::require<data_error>(features.rows == labels.size(), "train_linear: label/feature length mismatch");
  detail::require<data_error>(features.rows > 0, "train_linear: no training rows");
  const std::size_t d = features.cols;
  const std::size_t n = features.rows;

  std::vector<double> mean(d, 0.0), inv_std(d, 1.0);
  if (cfg.standardize) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t q = 0; q < d; ++q) mean[q] += features(i, q);
    for (auto& m : mean) m /= static_cast<double>(n);
    std::vector<double> var(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t q = 0; q < d; ++q) {
        const double c = features(i, q) - mean[q];
        var[q] += c * c;
      }
    for (std::size_t q = 0; q < d; ++q) {
      const double sd = std::sqrt(var[q] / static_cast<double>(n));
      inv_std[q] = sd > 1e-12 ? 1.0 / sd : 0.0;
    }
  }
  Matrix<float> x(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t q = 0; q < d; ++q)
      x(i, q) = static_cast<float>((features(i, q) - mean[q]) * inv_std[q]);

  LinearHead<float> head(static_cast<std::size_t>(classes), d);
  LinearHead<float> vel(static_cast<std::size_t>(classes), d);
  LinearHead<float> grad;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto bs = static_cast<std::size_t>(batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t stop = std::min(n, start + bs);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const auto xb = select_rows(x, idx);
      const auto yb = select(labels, idx);
      cross_entropy(head, xb, yb, &grad);
      auto update = [&](float& p, float& v, float g) {
        v = static_cast<float>(cfg.momentum * v + (g + cfg.weight_decay * p));
        p = static_cast<float>(p - cfg.lr * v);
      };
      for (std::size_t i = 0; i < head.weight.data.size(); ++i) {
        detail::require<numeric_error>(std::isfinite(grad.weight.data[i]), "train_linear: non-finite gradient");
        update(head.weight.data[i], vel.weight.data[i], grad.weight.data[i]);
      }
      for (std::size_t i = 0; i < head.bias.size(); ++i) update(head.bias[i], vel.bias[i], grad.bias[i]);
    }
  }

  // Fold standardization into the head: W' = W / std, b' = b - W' mean.
  for (std::size_t k = 0; k < head.classes(); ++k) {
    double shift = 0;
    for (std::size_t q = 0; q < d; ++q) {
      const double w = head.weight(k, q) * inv_std[q];
      head.weight(k, q) = static_cast<float>(w);
      shift += w * mean[q];
    }
    head.bias[k] = static_cast<float>(head.bias[k] - shift);
  }
  return head;
}

// One classifier per fold, each trained on the other k-1 folds. Classes with
// fewer members than folds are reported through `small_classes`.
inline std::vector<LinearHead<float>> train_fold_heads(const Matrix<float>& features, std::span<const int> labels,
                                                       int classes, const EvalConfig& cfg, int batch_size,
                                                       std::uint64_t seed, std::vector<int>* small_classes = nullptr) {
  const Folds folds = kfold(labels, cfg.folds, derive_seed(seed, {0xf01d}));
  if (small_classes) *small_classes = folds.small_classes;
  std::vector<LinearHead<float>> heads;
  for (std::size_t f = 0; f < folds.folds.size(); ++f) {
    std::vector<std::size_t> train_idx;
    for (std::size_t g = 0; g < folds.folds.size(); ++g)
      if (g != f) train_idx.insert(train_idx.end(), folds.folds[g].begin(), folds.folds[g].end());
    std::sort(train_idx.begin(), train_idx.end());
    heads.push_back(train_linear(select_rows(features, train_idx), select(labels, train_idx), classes, cfg,
                                 batch_size, derive_seed(seed, {f})));
  }
  return heads;
}

struct FoldResult {
  ConfusionMatrix confusion;
  Metrics metrics;
};

struct EvalReport {
  std::vector<FoldResult> folds;
  double macro_f1 = 0;           // mean over fold models
  double balanced_accuracy = 0;  // mean over fold models
  double fraction = 1.0;
  std::size_t train_rows = 0;
  std::string checkpoint;
  std::uint64_t seed = 0;
};

// Scores every fold model on the full test set; headline metrics are the
// arithmetic means of the per-model values.
inline EvalReport evaluate(std::span<const LinearHead<float>> heads, const Matrix<float>& test_features,
                           std::span<const int> test_labels, int classes) {
  detail::require<data_error>(!heads.empty(), "evaluate: no classifiers");
  EvalReport r;
  for (const auto& h : heads) {
    detail::require<data_error>(h.dim() == test_features.cols, "evaluate: classifier/feature dimension mismatch");
    FoldResult fr;
    const auto pred = h.predict(test_features);
    fr.confusion = confusion(test_labels, pred, classes);
    fr.metrics = metrics(fr.confusion);
    r.macro_f1 += fr.metrics.macro_f1;
    r.balanced_accuracy += fr.metrics.balanced_accuracy;
    r.folds.push_back(std::move(fr));
  }
  r.macro_f1 /= static_cast<double>(heads.size());
  r.balanced_accuracy /= static_cast<double>(heads.size());
  return r;
}

// Majority vote over fold models; ties go to the lowest class id.
inline std::vector<int> vote(std::span<const LinearHead<float>> heads, const Matrix<float>& features, int classes) {
  std::vector<std::vector<int>> counts(features.rows, std::vector<int>(static_cast<std::size_t>(classes), 0));
  for (const auto& h : heads) {
    const auto pred = h.predict(features);
    for (std::size_t i = 0; i < pred.size(); ++i) ++counts[i][static_cast<std::size_t>(pred[i])];
  }
  std::vector<int> out(features.rows);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<int>(std::max_element(counts[i].begin(), counts[i].end()) - counts[i].begin());
  return out;
}

}  // namespace npcl
