#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "npcl/error.hpp"
#include "npcl/image.hpp"
#include "npcl/losses.hpp"
#include "npcl/matrix.hpp"
#include "npcl/random.hpp"

namespace npcl {

// Convolutional encoder: a stack of 3x3 stride-s convolutions with ReLU,
// then global average pooling. The last stage has feature_dim channels.
struct EncoderConfig {
  std::string preset = "desk";
  std::vector<int> channels = {16, 32, 64};
  int feature_dim = 128;
  int stride = 2;

  static EncoderConfig desk() { return {}; }

  // Channel widths of a ResNet-50 trunk (2048-d representation); a plain
  // conv stack of that shape, not a residual network.
  static EncoderConfig paper() { return {"paper", {256, 512, 1024}, 2048, 2}; }

  int stages() const { return static_cast<int>(channels.size()) + 1; }

  void validate() const {
    using detail::require;
    require<config_error>(preset == "desk" || preset == "paper", "model.encoder.preset must be desk or paper");
    require<config_error>(feature_dim >= 8, "model.encoder.feature_dim must be >= 8");
    require<config_error>(stride >= 1 && stride <= 4, "model.encoder.stride must be in [1, 4]");
    for (int c : channels) require<config_error>(c >= 1, "model.encoder.channels must be positive");
  }
};

// Two-layer MLP head; hidden_dim = 0 selects a single bias-free linear map.
struct ProjectionConfig {
  int hidden_dim = 128;
  int output_dim = 128;

  void validate() const {
    detail::require<config_error>(hidden_dim >= 0, "model.projection.hidden_dim must be >= 0");
    detail::require<config_error>(output_dim >= 2, "model.projection.output_dim must be >= 2");
  }
};

template <typename T>
struct Param {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<T> value;
  std::vector<T> grad;

  std::size_t size() const { return value.size(); }
};

namespace detail {

inline int conv_out(int in, int stride) { return (in + 2 - 3) / stride + 1; }

// Builds the transposed patch matrix cols[p][ic*9 + ky*3 + kx] for a 3x3
// convolution with padding 1.
template <typename T>
void im2col_t(const T* in, int channels, int h, int w, int stride, std::vector<T>& cols) {
  const int ho = conv_out(h, stride), wo = conv_out(w, stride);
  const int k = channels * 9;
  cols.assign(static_cast<std::size_t>(ho) * wo * k, T{});
  for (int oy = 0; oy < ho; ++oy)
    for (int ox = 0; ox < wo; ++ox) {
      T* row = &cols[(static_cast<std::size_t>(oy) * wo + ox) * k];
      for (int ic = 0; ic < channels; ++ic)
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= w) continue;
            row[ic * 9 + ky * 3 + kx] = in[(static_cast<std::size_t>(ic) * h + iy) * w + ix];
          }
        }
    }
}

}  // namespace detail

// Encoder + projection head, with a hand-written backward pass.
template <typename T>
class Model {
 public:
  // Per-batch activations retained for backward().
  struct Cache {
    std::vector<int> sizes;                       // spatial side per stage input
    std::vector<std::vector<std::vector<T>>> act;  // act[s][image]: input of stage s (CHW); last = final output
    Matrix<T> features;                           // n x feature_dim
    Matrix<T> hidden;                             // post-ReLU hidden of the head
    Matrix<T> raw;                                // pre-normalization projection
    std::vector<T> norms;
    Matrix<T> z;
  };

  Model() = default;

  Model(EncoderConfig enc, ProjectionConfig proj, std::uint64_t seed) : enc_(std::move(enc)), proj_(proj) {
    enc_.validate();
    proj_.validate();
    Rng rng(seed);
    int in_c = 3;
    std::vector<int> widths = enc_.channels;
    widths.push_back(enc_.feature_dim);
    for (std::size_t s = 0; s < widths.size(); ++s) {
      const auto out_c = static_cast<std::size_t>(widths[s]);
      add_param("encoder.conv" + std::to_string(s) + ".weight", {out_c, static_cast<std::size_t>(in_c), 3, 3},
                static_cast<std::size_t>(in_c) * 9, rng);
      add_param("encoder.conv" + std::to_string(s) + ".bias", {out_c}, 0, rng);
      in_c = widths[s];
    }
    const auto fd = static_cast<std::size_t>(enc_.feature_dim);
    const auto od = static_cast<std::size_t>(proj_.output_dim);
    if (proj_.hidden_dim > 0) {
      const auto hd = static_cast<std::size_t>(proj_.hidden_dim);
      add_param("projection.fc1.weight", {hd, fd}, fd, rng);
      add_param("projection.fc1.bias", {hd}, 0, rng);
      add_param("projection.fc2.weight", {od, hd}, hd, rng);
      add_param("projection.fc2.bias", {od}, 0, rng);
    } else {
      add_param("projection.linear.weight", {od, fd}, fd, rng);
    }
  }

  const EncoderConfig& encoder_config() const { return enc_; }
  const ProjectionConfig& projection_config() const { return proj_; }
  int feature_dim() const { return enc_.feature_dim; }

  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }

  Param<T>& param(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    throw config_error("no parameter named " + name);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), T{});
  }

  // Features h = f(x) for a batch of equally sized square images.
  Matrix<T> encode(std::span<const Image> images) const {
    Cache cache;
    encode_into(images, cache, false);
    return std::move(cache.features);
  }

  // Unit-norm embeddings z = g(h).
  Matrix<T> project(const Matrix<T>& h) const {
    Cache cache;
    cache.features = h;
    project_into(cache);
    return std::move(cache.z);
  }

  // Number of rows whose projection norm fell under the epsilon guard in the
  // most recent projection.
  std::size_t guarded_rows() const { return guarded_; }

  Matrix<T> forward(std::span<const Image> images, Cache& cache) const {
    encode_into(images, cache, true);
    project_into(cache);
    return cache.z;
  }

  // Accumulates parameter gradients given dL/dz.
  void backward(const Cache& cache, const Matrix<T>& dz) {
    const std::size_t n = cache.z.rows;
    detail::require<data_error>(dz.rows == n && dz.cols == cache.z.cols, "backward: gradient shape mismatch");
    const Matrix<T> draw = normalize_rows_backward(cache.z, cache.norms, dz);

    Matrix<T> dh(n, static_cast<std::size_t>(enc_.feature_dim));
    if (proj_.hidden_dim > 0) {
      auto& w1 = param("projection.fc1.weight");
      auto& b1 = param("projection.fc1.bias");
      auto& w2 = param("projection.fc2.weight");
      auto& b2 = param("projection.fc2.bias");
      Matrix<T> dhid = linear_backward(cache.hidden, draw, w2, &b2);
      for (std::size_t i = 0; i < dhid.data.size(); ++i)
        if (cache.hidden.data[i] <= T{}) dhid.data[i] = T{};
      dh = linear_backward(cache.features, dhid, w1, &b1);
    } else {
      dh = linear_backward(cache.features, draw, param("projection.linear.weight"), nullptr);
    }
    encoder_backward(cache, dh);
  }

 private:
  void add_param(std::string name, std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    Param<T> p;
    p.name = std::move(name);
    p.shape = std::move(shape);
    std::size_t n = 1;
    for (auto s : p.shape) n *= s;
    p.value.assign(n, T{});
    p.grad.assign(n, T{});
    if (fan_in > 0) {
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (auto& v : p.value) v = static_cast<T>(rng.uniform(-bound, bound));
    }
    params_.push_back(std::move(p));
  }

  const Param<T>& cparam(const std::string& name) const { return const_cast<Model*>(this)->param(name); }

  void encode_into(std::span<const Image> images, Cache& cache, bool keep) const {
    const std::size_t n = images.size();
    detail::require<data_error>(n > 0, "encode: empty batch");
    const int side = images[0].width;
    for (const auto& im : images)
      detail::require<data_error>(im.width == side && im.height == side && side > 0,
                                  "encode: images must be square and equally sized");
    const int stages = enc_.stages();
    cache.sizes.assign(1, side);
    for (int s = 0; s < stages; ++s) cache.sizes.push_back(detail::conv_out(cache.sizes.back(), enc_.stride));
    cache.act.assign(keep ? static_cast<std::size_t>(stages) + 1 : 0, std::vector<std::vector<T>>(n));
    cache.features = Matrix<T>(n, static_cast<std::size_t>(enc_.feature_dim));

    // Weights transposed to [q][oc] so the inner loop runs over output
    // channels; each output still sums its terms in q order.
    std::vector<std::vector<T>> wt(static_cast<std::size_t>(stages));
    std::vector<const Param<T>*> biases(static_cast<std::size_t>(stages));
    for (int s = 0; s < stages; ++s) {
      const auto& w = cparam("encoder.conv" + std::to_string(s) + ".weight");
      const std::size_t out_c = w.shape[0], k = w.size() / out_c;
      auto& t = wt[static_cast<std::size_t>(s)];
      t.resize(w.size());
      for (std::size_t oc = 0; oc < out_c; ++oc)
        for (std::size_t q = 0; q < k; ++q) t[q * out_c + oc] = w.value[oc * k + q];
      biases[static_cast<std::size_t>(s)] = &cparam("encoder.conv" + std::to_string(s) + ".bias");
    }

    std::vector<T> cur, next, cols, acc;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& im = images[i];
      const std::size_t plane = static_cast<std::size_t>(side) * side;
      cur.assign(3 * plane, T{});
      for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t c = 0; c < 3; ++c) cur[c * plane + p] = static_cast<T>(im.rgb[p * 3 + c]);
      int in_c = 3;
      for (int s = 0; s < stages; ++s) {
        if (keep) cache.act[static_cast<std::size_t>(s)][i] = cur;
        const auto& b = *biases[static_cast<std::size_t>(s)];
        const T* w = wt[static_cast<std::size_t>(s)].data();
        const std::size_t out_c = b.size();
        const int h = cache.sizes[static_cast<std::size_t>(s)];
        const int ho = cache.sizes[static_cast<std::size_t>(s) + 1];
        const std::size_t pos = static_cast<std::size_t>(ho) * ho;
        const std::size_t k = static_cast<std::size_t>(in_c) * 9;
        detail::im2col_t(cur.data(), in_c, h, h, enc_.stride, cols);
        next.assign(out_c * pos, T{});
        acc.resize(out_c);
        for (std::size_t p = 0; p < pos; ++p) {
          const T* cr = &cols[p * k];
          std::copy(b.value.begin(), b.value.end(), acc.begin());
          for (std::size_t q = 0; q < k; ++q) {
            const T c = cr[q];
            if (c == T{}) continue;
            const T* wq = w + q * out_c;
            for (std::size_t oc = 0; oc < out_c; ++oc) acc[oc] += wq[oc] * c;
          }
          for (std::size_t oc = 0; oc < out_c; ++oc) next[oc * pos + p] = acc[oc] > T{} ? acc[oc] : T{};
        }
        cur.swap(next);
        in_c = static_cast<int>(out_c);
      }
      if (keep) cache.act[static_cast<std::size_t>(stages)][i] = cur;
      const std::size_t pos = static_cast<std::size_t>(cache.sizes.back()) * cache.sizes.back();
      for (int c = 0; c < enc_.feature_dim; ++c) {
        T acc{};
        for (std::size_t p = 0; p < pos; ++p) acc += cur[static_cast<std::size_t>(c) * pos + p];
        cache.features(i, static_cast<std::size_t>(c)) = acc / static_cast<T>(pos);
      }
    }
  }

  void project_into(Cache& cache) const {
    detail::require<data_error>(cache.features.cols == static_cast<std::size_t>(enc_.feature_dim),
                                "project: feature dimension mismatch");
    if (proj_.hidden_dim > 0) {
      cache.hidden = linear(cache.features, cparam("projection.fc1.weight"), &cparam("projection.fc1.bias"));
      for (auto& v : cache.hidden.data) v = v > T{} ? v : T{};
      cache.raw = linear(cache.hidden, cparam("projection.fc2.weight"), &cparam("projection.fc2.bias"));
    } else {
      cache.raw = linear(cache.features, cparam("projection.linear.weight"), nullptr);
    }
    guarded_ = normalize_rows(cache.raw, cache.z, cache.norms, 1e-12);
  }

  static Matrix<T> linear(const Matrix<T>& x, const Param<T>& w, const Param<T>* b) {
    const std::size_t out = w.shape[0], in = w.shape[1];
    detail::require<data_error>(x.cols == in, "linear: input dimension mismatch");
    Matrix<T> y(x.rows, out);
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t o = 0; o < out; ++o) {
        T acc = b ? b->value[o] : T{};
        const T* wr = &w.value[o * in];
        for (std::size_t q = 0; q < in; ++q) acc += wr[q] * x(i, q);
        y(i, o) = acc;
      }
    return y;
  }

  // Accumulates dW, db and returns dL/dx.
  static Matrix<T> linear_backward(const Matrix<T>& x, const Matrix<T>& dy, Param<T>& w, Param<T>* b) {
    const std::size_t out = w.shape[0], in = w.shape[1];
    Matrix<T> dx(x.rows, in);
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t o = 0; o < out; ++o) {
        const T g = dy(i, o);
        if (b) b->grad[o] += g;
        T* gw = &w.grad[o * in];
        const T* wr = &w.value[o * in];
        for (std::size_t q = 0; q < in; ++q) {
          gw[q] += g * x(i, q);
          dx(i, q) += g * wr[q];
        }
      }
    return dx;
  }

  void encoder_backward(const Cache& cache, const Matrix<T>& dh) {
    const int stages = enc_.stages();
    detail::require<data_error>(cache.act.size() == static_cast<std::size_t>(stages) + 1,
                                "backward: cache was built without activations");
    std::vector<T> dout, din, dcols, cols;
    for (std::size_t i = 0; i < dh.rows; ++i) {
      const int last = cache.sizes.back();
      const std::size_t last_pos = static_cast<std::size_t>(last) * last;
      dout.assign(static_cast<std::size_t>(enc_.feature_dim) * last_pos, T{});
      for (int c = 0; c < enc_.feature_dim; ++c)
        for (std::size_t p = 0; p < last_pos; ++p)
          dout[static_cast<std::size_t>(c) * last_pos + p] = dh(i, static_cast<std::size_t>(c)) / static_cast<T>(last_pos);

      for (int s = stages - 1; s >= 0; --s) {
        auto& w = param("encoder.conv" + std::to_string(s) + ".weight");
        auto& b = param("encoder.conv" + std::to_string(s) + ".bias");
        const int out_c = static_cast<int>(w.shape[0]);
        const int in_c = static_cast<int>(w.shape[1]);
        const int h = cache.sizes[static_cast<std::size_t>(s)];
        const int ho = cache.sizes[static_cast<std::size_t>(s) + 1];
        const std::size_t pos = static_cast<std::size_t>(ho) * ho;
        const std::size_t k = static_cast<std::size_t>(in_c) * 9;
        const auto& out_act = cache.act[static_cast<std::size_t>(s) + 1][i];
        for (std::size_t q = 0; q < dout.size(); ++q)
          if (out_act[q] <= T{}) dout[q] = T{};
        const auto& in_act = cache.act[static_cast<std::size_t>(s)][i];
        detail::im2col_t(in_act.data(), in_c, h, h, enc_.stride, cols);
        const bool need_input_grad = s > 0;
        if (need_input_grad) dcols.assign(pos * k, T{});
        for (int oc = 0; oc < out_c; ++oc) {
          T* gw = &w.grad[static_cast<std::size_t>(oc) * k];
          const T* wr = &w.value[static_cast<std::size_t>(oc) * k];
          const T* g = &dout[static_cast<std::size_t>(oc) * pos];
          T gb{};
          for (std::size_t p = 0; p < pos; ++p) {
            const T gp = g[p];
            if (gp == T{}) continue;
            gb += gp;
            const T* cr = &cols[p * k];
            for (std::size_t q = 0; q < k; ++q) gw[q] += gp * cr[q];
            if (need_input_grad) {
              T* dc = &dcols[p * k];
              for (std::size_t q = 0; q < k; ++q) dc[q] += gp * wr[q];
            }
          }
          b.grad[static_cast<std::size_t>(oc)] += gb;
        }
        if (!need_input_grad) break;
        // col2im
        din.assign(static_cast<std::size_t>(in_c) * h * h, T{});
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < ho; ++ox) {
            const T* dc = &dcols[(static_cast<std::size_t>(oy) * ho + ox) * k];
            for (int ic = 0; ic < in_c; ++ic)
              for (int ky = 0; ky < 3; ++ky) {
                const int iy = oy * enc_.stride + ky - 1;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                  const int ix = ox * enc_.stride + kx - 1;
                  if (ix < 0 || ix >= h) continue;
                  din[(static_cast<std::size_t>(ic) * h + iy) * h + ix] += dc[ic * 9 + ky * 3 + kx];
                }
              }
          }
        dout.swap(din);
      }
    }
  }

  EncoderConfig enc_;
  ProjectionConfig proj_;
  std::vector<Param<T>> params_;
  mutable std::size_t guarded_ = 0;
};

// Affine classifier on frozen features: logits = W h + b.
template <typename T>
struct LinearHead {
  Matrix<T> weight;  // K x d
  std::vector<T> bias;

  LinearHead() = default;
  LinearHead(std::size_t classes, std::size_t dim) : weight(classes, dim), bias(classes, T{}) {}

  std::size_t classes() const { return weight.rows; }
  std::size_t dim() const { return weight.cols; }

  Matrix<T> logits(const Matrix<T>& h) const {
    detail::require<data_error>(h.cols == dim(), "classifier: feature dimension mismatch");
    Matrix<T> out(h.rows, classes());
    for (std::size_t i = 0; i < h.rows; ++i)
      for (std::size_t k = 0; k < classes(); ++k) {
        T acc = bias[k];
        for (std::size_t q = 0; q < dim(); ++q) acc += weight(k, q) * h(i, q);
        out(i, k) = acc;
      }
    return out;
  }

  std::vector<int> predict(const Matrix<T>& h) const {
    const auto z = logits(h);
    std::vector<int> pred(h.rows);
    for (std::size_t i = 0; i < h.rows; ++i) {
      const auto r = z.row(i);
      pred[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
    }
    return pred;
  }

  bool operator==(const LinearHead&) const = default;
};

// Mean softmax cross-entropy over rows and its gradient (dW, db).
template <typename T>
T cross_entropy(const LinearHead<T>& head, const Matrix<T>& h, std::span<const int> labels, LinearHead<T>* grad) {
  detail::require<data_error>(labels.size() == h.rows, "cross_entropy: label/feature length mismatch");
  const auto z = head.logits(h);
  const std::size_t kc = head.classes();
  if (grad) *grad = LinearHead<T>(kc, head.dim());
  double total = 0;
  std::vector<double> prob(kc);
  for (std::size_t i = 0; i < h.rows; ++i) {
    const int y = labels[i];
    detail::require<data_error>(y >= 0 && static_cast<std::size_t>(y) < kc, "cross_entropy: label outside [0, K)");
    const auto r = z.row(i);
    const double m = static_cast<double>(*std::max_element(r.begin(), r.end()));
    double sum = 0;
    for (std::size_t k = 0; k < kc; ++k) sum += prob[k] = std::exp(static_cast<double>(r[k]) - m);
    total += m + std::log(sum) - static_cast<double>(r[static_cast<std::size_t>(y)]);
    if (!grad) continue;
    for (std::size_t k = 0; k < kc; ++k) {
      const double g = (prob[k] / sum - (static_cast<int>(k) == y ? 1.0 : 0.0)) / static_cast<double>(h.rows);
      grad->bias[k] += static_cast<T>(g);
      for (std::size_t q = 0; q < head.dim(); ++q) grad->weight(k, q) += static_cast<T>(g * static_cast<double>(h(i, q)));
    }
  }
  return static_cast<T>(total / static_cast<double>(h.rows));
}

}  // namespace npcl
