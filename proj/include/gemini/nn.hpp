#pragma once

// Minimal CPU neural-network layers with hand-written backward passes.
//
// Layers do not keep activations. forward() records whatever backward()
// needs into a caller-owned Cache, so one layer can process several samples
// (anchor, positive, negative) before any gradient is propagated. Parameter
// gradients accumulate inside the layer until zero_grad().

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gemini/common.hpp"
#include "gemini/tensor.hpp"

namespace gemini::nn {

template <typename T>
struct Param {
  std::string name;
  std::vector<T> value;
  std::vector<T> grad;

  Param() = default;
  Param(std::string n, std::size_t size) : name(std::move(n)), value(size, T{}), grad(size, T{}) {}
  void zero_grad() { std::fill(grad.begin(), grad.end(), T{}); }
};

template <typename T>
struct Cache {
  std::vector<Tensor<T>> tensors;
  std::vector<std::int32_t> indices;
  std::vector<Cache> children;
  Shape3 input_shape{};
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  /// Pass a null cache for inference.
  virtual Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const = 0;
  /// Accumulates parameter gradients; returns dL/dx (empty when not requested).
  virtual Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool need_input_grad) = 0;
  [[nodiscard]] virtual Shape3 output_shape(const Shape3& in) const = 0;
  virtual std::vector<Param<T>*> params() { return {}; }
  virtual void initialize(Rng& /*rng*/) {}
};

// Uniform fan-in scaling: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
template <typename T>
void init_uniform_fan_in(Param<T>& p, std::size_t fan_in, Rng& rng, double gain = 1.0) {
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : p.value) v = static_cast<T>(dist(rng));
}

/// Square-kernel convolution, stride 1, "same" zero padding, as im2col + GEMM.
template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, double init_gain = 1.0)
      : in_(in_channels),
        out_(out_channels),
        k_(kernel),
        pad_(kernel / 2),
        gain_(init_gain),
        weight_(name + ".weight", static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel),
        bias_(name + ".bias", static_cast<std::size_t>(out_channels)) {
    if (kernel % 2 == 0) throw ConfigError("conv kernel must be odd, got " + std::to_string(kernel));
  }

  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override {
    check_input(x.shape());
    const int hw = x.height() * x.width();
    const Matrix cols = im2col(x);
    Tensor<T> y(out_, x.height(), x.width());
    Eigen::Map<Matrix> ym(y.values().data(), out_, hw);
    ym.noalias() = weights() * cols;
    ym.colwise() += Eigen::Map<const Vector>(bias_.value.data(), out_);
    if (cache != nullptr) {
      cache->input_shape = x.shape();
      cache->tensors = {x};
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const Cache<T>& cache, bool need_input_grad) override {
    const Tensor<T>& x = cache.tensors.at(0);
    const int hw = x.height() * x.width();
    const Matrix cols = im2col(x);
    Eigen::Map<const Matrix> gym(gy.values().data(), out_, hw);
    Eigen::Map<Matrix> gw(weight_.grad.data(), out_, in_ * k_ * k_);
    gw.noalias() += gym * cols.transpose();
    Eigen::Map<Vector>(bias_.grad.data(), out_) += gym.rowwise().sum();
    if (!need_input_grad) return {};
    const Matrix gcols = weights().transpose() * gym;
    return col2im(gcols, x.shape());
  }

  [[nodiscard]] Shape3 output_shape(const Shape3& in) const override {
    check_input(in);
    return {out_, in.height, in.width};
  }
  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  void initialize(Rng& rng) override {
    init_uniform_fan_in(weight_, static_cast<std::size_t>(in_) * k_ * k_, rng, gain_);
    std::fill(bias_.value.begin(), bias_.value.end(), T{});
  }

 private:
  void check_input(const Shape3& s) const {
    if (s.channels != in_) {
      throw ShapeError("conv expects " + std::to_string(in_) + " input channels, got " + to_string(s));
    }
  }
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  [[nodiscard]] Eigen::Map<const Matrix> weights() const {
    return Eigen::Map<const Matrix>(weight_.value.data(), out_, in_ * k_ * k_);
  }

  // Row (i, ky, kx) holds input channel i shifted by (ky - pad, kx - pad).
  [[nodiscard]] Matrix im2col(const Tensor<T>& x) const {
    const int h = x.height();
    const int w = x.width();
    Matrix cols = Matrix::Zero(in_ * k_ * k_, h * w);
    for (int i = 0; i < in_; ++i) {
      const T* src_plane = x.channel(i);
      for (int ky = 0; ky < k_; ++ky) {
        const int dy = ky - pad_;
        const int y0 = std::max(0, -dy);
        const int y1 = std::min(h, h - dy);
        for (int kx = 0; kx < k_; ++kx) {
          const int dx = kx - pad_;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(w, w - dx);
          T* row = cols.row((i * k_ + ky) * k_ + kx).data();
          for (int yy = y0; yy < y1; ++yy) {
            const T* src = src_plane + static_cast<std::size_t>(yy + dy) * w + dx;
            T* dst = row + static_cast<std::size_t>(yy) * w;
            for (int xx = x0; xx < x1; ++xx) dst[xx] = src[xx];
          }
        }
      }
    }
    return cols;
  }

  [[nodiscard]] Tensor<T> col2im(const Matrix& cols, const Shape3& shape) const {
    const int h = shape.height;
    const int w = shape.width;
    Tensor<T> gx(shape);
    for (int i = 0; i < in_; ++i) {
      T* dst_plane = gx.channel(i);
      for (int ky = 0; ky < k_; ++ky) {
        const int dy = ky - pad_;
        const int y0 = std::max(0, -dy);
        const int y1 = std::min(h, h - dy);
        for (int kx = 0; kx < k_; ++kx) {
          const int dx = kx - pad_;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(w, w - dx);
          const T* row = cols.row((i * k_ + ky) * k_ + kx).data();
          for (int yy = y0; yy < y1; ++yy) {
            T* dst = dst_plane + static_cast<std::size_t>(yy + dy) * w + dx;
            const T* src = row + static_cast<std::size_t>(yy) * w;
            for (int xx = x0; xx < x1; ++xx) dst[xx] += src[xx];
          }
        }
      }
    }
    return gx;
  }

  int in_, out_, k_, pad_;
  double gain_;
  Param<T> weight_;
  Param<T> bias_;
};

template <typename T>
class Relu final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override {
    Tensor<T> y = x;
    for (auto& v : y.values()) v = v > T{} ? v : T{};
    if (cache != nullptr) {
      cache->input_shape = x.shape();
      cache->tensors = {y};
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy, const Cache<T>& cache, bool need_input_grad) override {
    if (!need_input_grad) return {};
    const Tensor<T>& y = cache.tensors.at(0);
    Tensor<T> gx = gy;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (!(y[i] > T{})) gx[i] = T{};
    }
    return gx;
  }
  [[nodiscard]] Shape3 output_shape(const Shape3& in) const override { return in; }
};

/// Non-overlapping max pooling (window = stride = k), floor on the edges.
template <typename T>
class MaxPool final : public Layer<T> {
 public:
  explicit MaxPool(int k) : k_(k) {}

  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override {
    const Shape3 os = output_shape(x.shape());
    Tensor<T> y(os);
    std::vector<std::int32_t> arg;
    if (cache != nullptr) arg.resize(os.size());
    std::size_t out_i = 0;
    for (int c = 0; c < os.channels; ++c) {
      for (int oy = 0; oy < os.height; ++oy) {
        for (int ox = 0; ox < os.width; ++ox, ++out_i) {
          T best = -std::numeric_limits<T>::infinity();
          std::int32_t best_i = -1;
          for (int dy = 0; dy < k_; ++dy) {
            for (int dx = 0; dx < k_; ++dx) {
              const int yy = oy * k_ + dy;
              const int xx = ox * k_ + dx;
              const T v = x(c, yy, xx);
              if (best_i < 0 || v > best) {
                best = v;
                best_i = static_cast<std::int32_t>((static_cast<std::size_t>(c) * x.height() + yy) * x.width() + xx);
              }
            }
          }
          y[out_i] = best;
          if (cache != nullptr) arg[out_i] = best_i;
        }
      }
    }
    if (cache != nullptr) {
      cache->input_shape = x.shape();
      cache->indices = std::move(arg);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const Cache<T>& cache, bool need_input_grad) override {
    if (!need_input_grad) return {};
    Tensor<T> gx(cache.input_shape);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[static_cast<std::size_t>(cache.indices[i])] += gy[i];
    return gx;
  }

  [[nodiscard]] Shape3 output_shape(const Shape3& in) const override {
    if (in.height < k_ || in.width < k_) {
      throw ShapeError("max-pool window " + std::to_string(k_) + " larger than input " + to_string(in));
    }
    return {in.channels, in.height / k_, in.width / k_};
  }

 private:
  int k_;
};

/// Non-overlapping average pooling (window = stride = k).
template <typename T>
class AvgPool final : public Layer<T> {
 public:
  explicit AvgPool(int k) : k_(k) {}

  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override {
    const Shape3 os = output_shape(x.shape());
    Tensor<T> y(os);
    const T scale = T{1} / static_cast<T>(k_ * k_);
    for (int c = 0; c < os.channels; ++c) {
      const T* src = x.channel(c);
      T* dst = y.channel(c);
      for (int oy = 0; oy < os.height; ++oy) {
        for (int dy = 0; dy < k_; ++dy) {
          const T* row = src + static_cast<std::size_t>(oy * k_ + dy) * x.width();
          T* out_row = dst + static_cast<std::size_t>(oy) * os.width;
          for (int ox = 0; ox < os.width; ++ox) {
            T acc{};
            for (int dx = 0; dx < k_; ++dx) acc += row[ox * k_ + dx];
            out_row[ox] += acc;
          }
        }
      }
    }
    for (auto& v : y.values()) v *= scale;
    if (cache != nullptr) cache->input_shape = x.shape();
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const Cache<T>& cache, bool need_input_grad) override {
    if (!need_input_grad) return {};
    Tensor<T> gx(cache.input_shape);
    const T scale = T{1} / static_cast<T>(k_ * k_);
    for (int c = 0; c < gy.channels(); ++c) {
      for (int oy = 0; oy < gy.height(); ++oy) {
        for (int ox = 0; ox < gy.width(); ++ox) {
          const T g = gy(c, oy, ox) * scale;
          for (int dy = 0; dy < k_; ++dy) {
            for (int dx = 0; dx < k_; ++dx) gx(c, oy * k_ + dy, ox * k_ + dx) += g;
          }
        }
      }
    }
    return gx;
  }

  [[nodiscard]] Shape3 output_shape(const Shape3& in) const override {
    if (in.height < k_ || in.width < k_) {
      throw ShapeError("avg-pool window " + std::to_string(k_) + " larger than input " + to_string(in));
    }
    return {in.channels, in.height / k_, in.width / k_};
  }

 private:
  int k_;
};

template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override {
    Tensor<T> y(x.channels(), 1, 1);
    const std::size_t plane = static_cast<std::size_t>(x.height()) * x.width();
    for (int c = 0; c < x.channels(); ++c) {
      const T* src = x.channel(c);
      T acc{};
      for (std::size_t i = 0; i < plane; ++i) acc += src[i];
      y[static_cast<std::size_t>(c)] = acc / static_cast<T>(plane);
    }
    if (cache != nullptr) cache->input_shape = x.shape();
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy, const Cache<T>& cache, bool need_input_grad) override {
    if (!need_input_grad) return {};
    Tensor<T> gx(cache.input_shape);
    const std::size_t plane = static_cast<std::size_t>(gx.height()) * gx.width();
    for (int c = 0; c < gx.channels(); ++c) {
      const T g = gy[static_cast<std::size_t>(c)] / static_cast<T>(plane);
      T* dst = gx.channel(c);
      for (std::size_t i = 0; i < plane; ++i) dst[i] = g;
    }
    return gx;
  }
  [[nodiscard]] Shape3 output_shape(const Shape3& in) const override { return {in.channels, 1, 1}; }
};

/// Fully connected layer over the flattened input.
template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(const std::string& name, int in_features, int out_features, double init_gain = 1.0)
      : in_(in_features),
        out_(out_features),
        gain_(init_gain),
        weight_(name + ".weight", static_cast<std::size_t>(in_features) * out_features),
        bias_(name + ".bias", static_cast<std::size_t>(out_features)) {}

  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override {
    check_input(x.shape());
    Tensor<T> y(out_, 1, 1);
    const T* xv = x.values().data();
    for (int o = 0; o < out_; ++o) {
      const T* wrow = weight_.value.data() + static_cast<std::size_t>(o) * in_;
      T acc = bias_.value[o];
      for (int i = 0; i < in_; ++i) acc += wrow[i] * xv[i];
      y[static_cast<std::size_t>(o)] = acc;
    }
    if (cache != nullptr) {
      cache->input_shape = x.shape();
      cache->tensors = {x};
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const Cache<T>& cache, bool need_input_grad) override {
    const Tensor<T>& x = cache.tensors.at(0);
    const T* xv = x.values().data();
    Tensor<T> gx;
    if (need_input_grad) gx = Tensor<T>(cache.input_shape);
    for (int o = 0; o < out_; ++o) {
      const T g = gy[static_cast<std::size_t>(o)];
      bias_.grad[o] += g;
      T* wg = weight_.grad.data() + static_cast<std::size_t>(o) * in_;
      for (int i = 0; i < in_; ++i) wg[i] += g * xv[i];
      if (need_input_grad) {
        const T* wrow = weight_.value.data() + static_cast<std::size_t>(o) * in_;
        for (int i = 0; i < in_; ++i) gx[static_cast<std::size_t>(i)] += g * wrow[i];
      }
    }
    return gx;
  }

  [[nodiscard]] Shape3 output_shape(const Shape3& in) const override {
    check_input(in);
    return {out_, 1, 1};
  }
  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  void initialize(Rng& rng) override {
    init_uniform_fan_in(weight_, static_cast<std::size_t>(in_), rng, gain_);
    std::fill(bias_.value.begin(), bias_.value.end(), T{});
  }

  [[nodiscard]] int in_features() const { return in_; }
  [[nodiscard]] int out_features() const { return out_; }

 private:
  void check_input(const Shape3& s) const {
    if (static_cast<int>(s.size()) != in_) {
      throw ShapeError("linear layer expects " + std::to_string(in_) + " inputs, got " + to_string(s));
    }
  }

  int in_, out_;
  double gain_;
  Param<T> weight_;
  Param<T> bias_;
};

/// conv-relu-conv plus shortcut (identity, or 1x1 projection when widths differ), then relu.
template <typename T>
class ResidualBlock final : public Layer<T> {
 public:
  ResidualBlock(const std::string& name, int in_channels, int out_channels)
      : conv1_(name + ".conv1", in_channels, out_channels, 3),
        conv2_(name + ".conv2", out_channels, out_channels, 3, 0.5) {
    if (in_channels != out_channels) {
      proj_ = std::make_unique<Conv2d<T>>(name + ".proj", in_channels, out_channels, 1);
    }
  }

  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override {
    Cache<T>* c = nullptr;
    if (cache != nullptr) {
      cache->input_shape = x.shape();
      cache->children.assign(5, Cache<T>{});
      c = cache->children.data();
    }
    auto pick = [&](int i) { return c != nullptr ? c + i : nullptr; };
    Tensor<T> h = conv1_.forward(x, pick(0));
    h = relu_.forward(h, pick(1));
    h = conv2_.forward(h, pick(2));
    if (proj_) {
      const Tensor<T> s = proj_->forward(x, pick(3));
      for (std::size_t i = 0; i < h.size(); ++i) h[i] += s[i];
    } else {
      for (std::size_t i = 0; i < h.size(); ++i) h[i] += x[i];
    }
    return relu_.forward(h, pick(4));
  }

  Tensor<T> backward(const Tensor<T>& gy, const Cache<T>& cache, bool need_input_grad) override {
    const auto& c = cache.children;
    Tensor<T> g_sum = relu_.backward(gy, c[4], true);
    Tensor<T> g = conv2_.backward(g_sum, c[2], true);
    g = relu_.backward(g, c[1], true);
    Tensor<T> gx = conv1_.backward(g, c[0], need_input_grad);
    if (proj_) {
      Tensor<T> gs = proj_->backward(g_sum, c[3], need_input_grad);
      if (need_input_grad) {
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gs[i];
      }
    } else if (need_input_grad) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g_sum[i];
    }
    return gx;
  }

  [[nodiscard]] Shape3 output_shape(const Shape3& in) const override {
    return conv2_.output_shape(conv1_.output_shape(in));
  }
  std::vector<Param<T>*> params() override {
    std::vector<Param<T>*> out = conv1_.params();
    for (auto* p : conv2_.params()) out.push_back(p);
    if (proj_) {
      for (auto* p : proj_->params()) out.push_back(p);
    }
    return out;
  }
  void initialize(Rng& rng) override {
    conv1_.initialize(rng);
    conv2_.initialize(rng);
    if (proj_) proj_->initialize(rng);
  }

 private:
  Conv2d<T> conv1_;
  Relu<T> relu_;
  Conv2d<T> conv2_;
  std::unique_ptr<Conv2d<T>> proj_;
};

template <typename T>
class Sequential final : public Layer<T> {
 public:
  Sequential() = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override {
    if (cache != nullptr) {
      cache->input_shape = x.shape();
      cache->children.assign(layers_.size(), Cache<T>{});
    }
    Tensor<T> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i]->forward(h, cache != nullptr ? &cache->children[i] : nullptr);
    }
    return h;
  }

  Tensor<T> backward(const Tensor<T>& gy, const Cache<T>& cache, bool need_input_grad) override {
    Tensor<T> g = gy;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      g = layers_[i]->backward(g, cache.children[i], i > 0 || need_input_grad);
    }
    return g;
  }

  [[nodiscard]] Shape3 output_shape(const Shape3& in) const override {
    Shape3 s = in;
    for (const auto& l : layers_) s = l->output_shape(s);
    return s;
  }
  std::vector<Param<T>*> params() override {
    std::vector<Param<T>*> out;
    for (auto& l : layers_) {
      for (auto* p : l->params()) out.push_back(p);
    }
    return out;
  }
  void initialize(Rng& rng) override {
    for (auto& l : layers_) l->initialize(rng);
  }
  [[nodiscard]] std::size_t size() const { return layers_.size(); }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

template <typename T>
void zero_grad(const std::vector<Param<T>*>& params) {
  for (auto* p : params) p->zero_grad();
}

/// Adaptive-moment gradient descent.
template <typename T>
class Adam {
 public:
  struct State {
    std::int64_t step = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
  };

  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Param<T>*>& params) {
    if (state_.m.empty()) {
      for (auto* p : params) {
        state_.m.emplace_back(p->value.size(), T{});
        state_.v.emplace_back(p->value.size(), T{});
      }
    }
    if (state_.m.size() != params.size()) throw ShapeError("optimizer state does not match parameter list");
    ++state_.step;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(state_.step));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(state_.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto& p = *params[pi];
      auto& m = state_.m[pi];
      auto& v = state_.v[pi];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = static_cast<double>(p.grad[i]);
        const double mi = beta1_ * static_cast<double>(m[i]) + (1.0 - beta1_) * g;
        const double vi = beta2_ * static_cast<double>(v[i]) + (1.0 - beta2_) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double update = lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + eps_);
        p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - update);
      }
    }
  }

  [[nodiscard]] const State& state() const { return state_; }
  void set_state(State s) { state_ = std::move(s); }
  [[nodiscard]] double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  State state_;
};

template <typename T>
std::vector<std::vector<T>> snapshot_values(const std::vector<Param<T>*>& params) {
  std::vector<std::vector<T>> out;
  out.reserve(params.size());
  for (const auto* p : params) out.push_back(p->value);
  return out;
}

template <typename T>
void restore_values(const std::vector<Param<T>*>& params, const std::vector<std::vector<T>>& values) {
  if (values.size() != params.size()) throw ShapeError("parameter snapshot has wrong length");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].size() != params[i]->value.size()) {
      throw ShapeError("parameter snapshot for " + params[i]->name + " has wrong size");
    }
    params[i]->value = values[i];
  }
}

}  // namespace gemini::nn
