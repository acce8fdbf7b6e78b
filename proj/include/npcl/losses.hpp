#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "npcl/error.hpp"
#include "npcl/matrix.hpp"

namespace npcl {

enum class LossVariant { naive, dcl };

inline const char* to_string(LossVariant v) { return v == LossVariant::naive ? "naive" : "dcl"; }

inline LossVariant parse_loss_variant(const std::string& s) {
  if (s == "naive") return LossVariant::naive;
  if (s == "dcl") return LossVariant::dcl;
  throw config_error("unknown loss variant '" + s + "' (expected naive or dcl)");
}

struct LossConfig {
  double tau = 0.1;
  LossVariant variant = LossVariant::dcl;

  void validate() const { detail::require<config_error>(tau > 0, "loss temperature tau must be positive"); }
};

// Unit-norm projection outputs of a multiviewed batch plus their group labels.
// Positives of row i are the other rows sharing its label; negatives are all
// rows with a different label.
template <typename T>
struct EmbeddingSet {
  Matrix<T> z;
  std::vector<int> group;
};

template <typename T>
constexpr double unit_norm_tolerance() {
  return std::is_same_v<T, float> ? 1e-5 : 1e-6;
}

template <typename T>
void check_embeddings(const EmbeddingSet<T>& e) {
  using detail::require;
  require<config_error>(e.z.cols >= 2, "embedding dimension must be >= 2");
  require<data_error>(e.group.size() == e.z.rows, "embedding rows and group labels differ in length");
  for (std::size_t i = 0; i < e.z.rows; ++i) {
    double n2 = 0;
    for (T v : e.z.row(i)) n2 += static_cast<double>(v) * static_cast<double>(v);
    require<numeric_error>(std::isfinite(n2), "non-finite embedding at row " + std::to_string(i));
    require<data_error>(std::abs(std::sqrt(n2) - 1.0) <= unit_norm_tolerance<T>(),
                        "embedding row " + std::to_string(i) + " is not unit-normalized");
  }
}

template <typename T>
Matrix<T> similarity(const Matrix<T>& z) {
  check_embeddings(EmbeddingSet<T>{z, std::vector<int>(z.rows, 0)});
  Matrix<T> s(z.rows, z.rows);
  for (std::size_t i = 0; i < z.rows; ++i) {
    for (std::size_t j = i; j < z.rows; ++j) {
      double dot = 0;
      const auto a = z.row(i), b = z.row(j);
      for (std::size_t k = 0; k < z.cols; ++k) dot += static_cast<double>(a[k]) * static_cast<double>(b[k]);
      s(i, j) = s(j, i) = static_cast<T>(dot);
    }
  }
  return s;
}

template <typename T>
struct LossResult {
  T value{};
  Matrix<T> grad;  // dL/dz, rows treated as free variables
};

namespace detail {

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Mean per-sample loss over all rows, optionally with the gradient.
// Per row: LSE over negatives (max-shifted), then naive terms
// softplus(LSE - a_p) or decoupled terms (LSE - a_p), averaged over positives.
template <typename T>
LossResult<T> contrastive_loss_impl(const EmbeddingSet<T>& e, const LossConfig& cfg, bool want_grad) {
  cfg.validate();
  check_embeddings(e);
  const std::size_t n = e.z.rows;
  const std::size_t d = e.z.cols;

  std::vector<double> s(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      double dot = 0;
      const auto a = e.z.row(i), b = e.z.row(j);
      for (std::size_t k = 0; k < d; ++k) dot += static_cast<double>(a[k]) * static_cast<double>(b[k]);
      s[i * n + j] = s[j * n + i] = dot;
    }

  const double inv_tau = 1.0 / cfg.tau;
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> coef(want_grad ? n * n : 0, 0.0);  // dL/ds_ij
  std::vector<double> neg_w(n);
  double total = 0;

  for (std::size_t i = 0; i < n; ++i) {
    double neg_max = -std::numeric_limits<double>::infinity();
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (e.group[j] == e.group[i]) {
        ++n_pos;
      } else {
        ++n_neg;
        neg_max = std::max(neg_max, s[i * n + j] * inv_tau);
      }
    }
    require<data_error>(n_neg > 0, "row " + std::to_string(i) + " has no negatives (need >= 2 groups)");
    require<data_error>(n_pos > 0, "row " + std::to_string(i) + " has no positives");

    double neg_sum = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (e.group[j] != e.group[i]) {
        neg_w[j] = std::exp(s[i * n + j] * inv_tau - neg_max);
        neg_sum += neg_w[j];
      }
    const double lse = neg_max + std::log(neg_sum);

    double row_loss = 0, d_lse = 0;
    const double inv_p = 1.0 / static_cast<double>(n_pos);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || e.group[j] != e.group[i]) continue;
      const double delta = lse - s[i * n + j] * inv_tau;
      if (cfg.variant == LossVariant::dcl) {
        row_loss += delta;
        if (want_grad) coef[i * n + j] = -inv_p;
        d_lse += inv_p;
      } else {
        row_loss += softplus(delta);
        const double g = sigmoid(delta) * inv_p;
        if (want_grad) coef[i * n + j] = -g;
        d_lse += g;
      }
    }
    total += row_loss * inv_p;
    if (want_grad)
      for (std::size_t j = 0; j < n; ++j)
        if (e.group[j] != e.group[i]) coef[i * n + j] = d_lse * neg_w[j] / neg_sum;
  }

  LossResult<T> out;
  out.value = static_cast<T>(total * inv_n);
  require<numeric_error>(std::isfinite(total), "contrastive loss is not finite");
  if (!want_grad) return out;

  // dL/dz_i = sum_j (c_ij + c_ji) z_j, scaled by 1 / (tau * 2B).
  out.grad = Matrix<T>(n, d);
  std::vector<double> acc(d);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const double c = coef[i * n + j] + coef[j * n + i];
      if (c == 0.0) continue;
      const auto zj = e.z.row(j);
      for (std::size_t k = 0; k < d; ++k) acc[k] += c * static_cast<double>(zj[k]);
    }
    for (std::size_t k = 0; k < d; ++k) out.grad(i, k) = static_cast<T>(acc[k] * inv_tau * inv_n);
  }
  return out;
}

}  // namespace detail

template <typename T>
T contrastive_loss(const EmbeddingSet<T>& e, const LossConfig& cfg) {
  return detail::contrastive_loss_impl(e, cfg, false).value;
}

template <typename T>
LossResult<T> contrastive_loss_with_grad(const EmbeddingSet<T>& e, const LossConfig& cfg) {
  return detail::contrastive_loss_impl(e, cfg, true);
}

// Positive term kept in each denominator.
template <typename T>
T loss_naive(const EmbeddingSet<T>& e, double tau) {
  return contrastive_loss(e, LossConfig{tau, LossVariant::naive});
}

// Decoupled: denominators contain negatives only.
template <typename T>
T loss_dcl(const EmbeddingSet<T>& e, double tau) {
  return contrastive_loss(e, LossConfig{tau, LossVariant::dcl});
}

// Row-wise L2 normalization; rows with norm below eps are scaled by 1/eps.
// Returns the number of guarded rows.
template <typename T>
std::size_t normalize_rows(const Matrix<T>& raw, Matrix<T>& out, std::vector<T>& norms, double eps = 1e-12) {
  out = Matrix<T>(raw.rows, raw.cols);
  norms.assign(raw.rows, T{});
  std::size_t guarded = 0;
  for (std::size_t i = 0; i < raw.rows; ++i) {
    double n2 = 0;
    for (T v : raw.row(i)) n2 += static_cast<double>(v) * static_cast<double>(v);
    double nrm = std::sqrt(n2);
    if (nrm < eps) {
      nrm = eps;
      ++guarded;
    }
    norms[i] = static_cast<T>(nrm);
    for (std::size_t k = 0; k < raw.cols; ++k) out(i, k) = static_cast<T>(raw(i, k) / nrm);
  }
  return guarded;
}

// Backpropagates dL/dz through z = x / |x| given z and |x|.
template <typename T>
Matrix<T> normalize_rows_backward(const Matrix<T>& z, const std::vector<T>& norms, const Matrix<T>& dz) {
  Matrix<T> dx(z.rows, z.cols);
  for (std::size_t i = 0; i < z.rows; ++i) {
    double proj = 0;
    for (std::size_t k = 0; k < z.cols; ++k) proj += static_cast<double>(z(i, k)) * static_cast<double>(dz(i, k));
    for (std::size_t k = 0; k < z.cols; ++k)
      dx(i, k) = static_cast<T>((static_cast<double>(dz(i, k)) - proj * static_cast<double>(z(i, k))) /
                                static_cast<double>(norms[i]));
  }
  return dx;
}

// Loss and gradient with respect to raw (pre-normalization) rows; the
// normalization is folded into the loss.
template <typename T>
LossResult<T> loss_gradient(const Matrix<T>& raw, std::span<const int> group, const LossConfig& cfg) {
  EmbeddingSet<T> e;
  std::vector<T> norms;
  normalize_rows(raw, e.z, norms);
  e.group.assign(group.begin(), group.end());
  auto r = contrastive_loss_with_grad(e, cfg);
  r.grad = normalize_rows_backward(e.z, norms, r.grad);
  return r;
}

}  // namespace npcl
