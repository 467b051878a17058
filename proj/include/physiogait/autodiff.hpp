#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <memory>
#include <numeric>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "physiogait/container.hpp"
#include "physiogait/core.hpp"

// Reverse-mode tensor engine with exactly the layers the Siamese network
// needs. Everything is templated on the scalar so the same code runs in
// float for training and in double for finite-difference gradient checks.
namespace physiogait::autodiff {

enum class Mode { Train, Eval };

template <class S>
struct Tensor {
  std::vector<int> shape;  // up to 4 dims, row-major
  std::vector<S> data;
  std::vector<S> grad;  // allocated for parameters only

  Tensor() = default;
  explicit Tensor(std::vector<int> sh) : shape(std::move(sh)) {
    data.assign(numel(), S(0));
  }

  std::size_t numel() const {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
  }
  void alloc_grad() { grad.assign(numel(), S(0)); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), S(0)); }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i)
    out += (i ? "x" : "") + std::to_string(s[i]);
  return out + "]";
}

template <class S>
using Mat =
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<Mat<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const Mat<S>>;

// ---------------------------------------------------------------------------
// Layer specs (the graph description) and the layers themselves.
// ---------------------------------------------------------------------------

struct Conv2dSpec {
  int out_ch = 1, kernel_h = 1, kernel_w = 1;  // valid padding, stride 1
};
struct MaxPoolSpec {};  // 2x2, stride 2, floor
struct BatchNormSpec {
  double eps = 1e-5;
  double momentum = 0.1;
};
struct DropoutSpec {
  double p = 0.25;
};
struct FlattenSpec {};
struct DenseSpec {
  int out = 1;
};
struct LstmSpec {
  int hidden = 1;
  bool return_sequences = false;
};

using LayerSpec = std::variant<Conv2dSpec, MaxPoolSpec, BatchNormSpec,
                               DropoutSpec, FlattenSpec, DenseSpec, LstmSpec>;

template <class S>
struct Ctx {
  virtual ~Ctx() = default;
};

template <class S>
class Layer {
 public:
  virtual ~Layer() = default;
  // Returns output; fills ctx with whatever backward needs (train mode only).
  virtual Tensor<S> forward(const Tensor<S>& x, Mode mode, Rng& rng,
                            std::unique_ptr<Ctx<S>>& ctx) = 0;
  // Accumulates parameter gradients; returns input gradient when need_dx.
  virtual Tensor<S> backward(Ctx<S>& ctx, const Tensor<S>& dy,
                             bool need_dx) = 0;
  virtual std::vector<Tensor<S>*> params() { return {}; }
  virtual std::vector<int> out_shape(const std::vector<int>& in) const = 0;
  virtual const char* name() const = 0;
};

namespace detail {

template <class S>
void check_input(const std::vector<int>& got, const std::vector<int>& want,
                 int layer_index, const char* layer) {
  if (got != want)
    fail(ErrorCode::ShapeMismatch,
         std::string(layer) + " at layer " + std::to_string(layer_index) +
             ": expected " + shape_str(want) + ", got " + shape_str(got));
}

// cols is (C*kh*kw) x (oh*ow); one input sample, valid padding, stride 1.
template <class S>
void im2col(const S* x, int c_in, int h, int w, int kh, int kw, S* cols) {
  const int oh = h - kh + 1, ow = w - kw + 1;
  for (int c = 0; c < c_in; ++c) {
    for (int u = 0; u < kh; ++u) {
      for (int v = 0; v < kw; ++v) {
        S* row = cols + ((static_cast<std::size_t>(c) * kh + u) * kw + v) *
                            (static_cast<std::size_t>(oh) * ow);
        const S* src = x + (static_cast<std::size_t>(c) * h + u) * w + v;
        for (int y = 0; y < oh; ++y)
          for (int xx = 0; xx < ow; ++xx)
            row[static_cast<std::size_t>(y) * ow + xx] =
                src[static_cast<std::size_t>(y) * w + xx];
      }
    }
  }
}

template <class S>
void col2im_add(const S* cols, int c_in, int h, int w, int kh, int kw, S* x) {
  const int oh = h - kh + 1, ow = w - kw + 1;
  for (int c = 0; c < c_in; ++c) {
    for (int u = 0; u < kh; ++u) {
      for (int v = 0; v < kw; ++v) {
        const S* row = cols + ((static_cast<std::size_t>(c) * kh + u) * kw + v) *
                                  (static_cast<std::size_t>(oh) * ow);
        S* dst = x + (static_cast<std::size_t>(c) * h + u) * w + v;
        for (int y = 0; y < oh; ++y)
          for (int xx = 0; xx < ow; ++xx)
            dst[static_cast<std::size_t>(y) * w + xx] +=
                row[static_cast<std::size_t>(y) * ow + xx];
      }
    }
  }
}

}  // namespace detail

template <class S>
class Conv2dLayer final : public Layer<S> {
 public:
  Conv2dLayer(int index, int in_ch, const Conv2dSpec& spec)
      : index_(index), in_(in_ch), spec_(spec) {
    weight_ = Tensor<S>({spec.out_ch, in_ch, spec.kernel_h, spec.kernel_w});
    bias_ = Tensor<S>({spec.out_ch});
    weight_.alloc_grad();
    bias_.alloc_grad();
  }

  void init(Rng& rng) {
    // Kaiming-uniform: U(+-sqrt(6/fan_in)), biases zero.
    double bound = std::sqrt(6.0 / (in_ * spec_.kernel_h * spec_.kernel_w));
    for (S& v : weight_.data) v = static_cast<S>(rng.uniform(-bound, bound));
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    if (in.size() != 3 || in[0] != in_ || in[1] < spec_.kernel_h ||
        in[2] < spec_.kernel_w)
      fail(ErrorCode::ShapeMismatch,
           "conv2d at layer " + std::to_string(index_) + ": cannot apply " +
               std::to_string(spec_.kernel_h) + "x" +
               std::to_string(spec_.kernel_w) + " kernel to " + shape_str(in));
    return {spec_.out_ch, in[1] - spec_.kernel_h + 1,
            in[2] - spec_.kernel_w + 1};
  }

  struct C : Ctx<S> {
    Tensor<S> x;
    int h = 0, w = 0;
  };

  Tensor<S> forward(const Tensor<S>& x, Mode mode, Rng&,
                    std::unique_ptr<Ctx<S>>& ctx) override {
    const int n = x.shape[0], h = x.shape[2], w = x.shape[3];
    const int kh = spec_.kernel_h, kw = spec_.kernel_w;
    const int oh = h - kh + 1, ow = w - kw + 1, oc = spec_.out_ch;
    const std::size_t ckk = static_cast<std::size_t>(in_) * kh * kw;
    const std::size_t opix = static_cast<std::size_t>(oh) * ow;

    Tensor<S> y({n, oc, oh, ow});
    std::vector<S> cols(ckk * opix);
    ConstMatMap<S> wm(weight_.data.data(), oc, static_cast<int>(ckk));
    for (int s = 0; s < n; ++s) {
      detail::im2col(x.data.data() + s * in_ * h * w, in_, h, w, kh, kw,
                     cols.data());
      ConstMatMap<S> cm(cols.data(), static_cast<int>(ckk),
                        static_cast<int>(opix));
      MatMap<S> ym(y.data.data() + s * oc * opix, oc, static_cast<int>(opix));
      ym.noalias() = wm * cm;
      for (int o = 0; o < oc; ++o)
        ym.row(o).array() += bias_.data[static_cast<std::size_t>(o)];
    }
    if (mode == Mode::Train) {
      auto c = std::make_unique<C>();
      c->x = x;
      c->h = h;
      c->w = w;
      ctx = std::move(c);
    }
    return y;
  }

  Tensor<S> backward(Ctx<S>& ctx_base, const Tensor<S>& dy,
                     bool need_dx) override {
    auto& ctx = static_cast<C&>(ctx_base);
    const int n = ctx.x.shape[0], h = ctx.h, w = ctx.w;
    const int kh = spec_.kernel_h, kw = spec_.kernel_w;
    const int oh = h - kh + 1, ow = w - kw + 1, oc = spec_.out_ch;
    const std::size_t ckk = static_cast<std::size_t>(in_) * kh * kw;
    const std::size_t opix = static_cast<std::size_t>(oh) * ow;

    Tensor<S> dx;
    if (need_dx) dx = Tensor<S>({n, in_, h, w});
    std::vector<S> cols(ckk * opix);
    MatMap<S> dwm(weight_.grad.data(), oc, static_cast<int>(ckk));
    ConstMatMap<S> wm(weight_.data.data(), oc, static_cast<int>(ckk));
    for (int s = 0; s < n; ++s) {
      ConstMatMap<S> dym(dy.data.data() + s * oc * opix, oc,
                         static_cast<int>(opix));
      detail::im2col(ctx.x.data.data() + s * in_ * h * w, in_, h, w, kh, kw,
                     cols.data());
      ConstMatMap<S> cm(cols.data(), static_cast<int>(ckk),
                        static_cast<int>(opix));
      dwm.noalias() += dym * cm.transpose();
      for (int o = 0; o < oc; ++o)
        bias_.grad[static_cast<std::size_t>(o)] += dym.row(o).sum();
      if (need_dx) {
        MatMap<S> dcm(cols.data(), static_cast<int>(ckk),
                      static_cast<int>(opix));
        dcm.noalias() = wm.transpose() * dym;
        detail::col2im_add(cols.data(), in_, h, w, kh, kw,
                           dx.data.data() + s * in_ * h * w);
      }
    }
    return dx;
  }

  std::vector<Tensor<S>*> params() override { return {&weight_, &bias_}; }
  const char* name() const override { return "conv2d"; }

 private:
  int index_, in_;
  Conv2dSpec spec_;
  Tensor<S> weight_, bias_;
};

template <class S>
class MaxPoolLayer final : public Layer<S> {
 public:
  explicit MaxPoolLayer(int index) : index_(index) {}

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    if (in.size() != 3 || in[1] < 2 || in[2] < 2)
      fail(ErrorCode::ShapeMismatch,
           "maxpool at layer " + std::to_string(index_) + ": got " +
               shape_str(in));
    return {in[0], in[1] / 2, in[2] / 2};
  }

  struct C : Ctx<S> {
    std::vector<int> in_shape;
    std::vector<std::size_t> argmax;  // flat input offset per output element
  };

  Tensor<S> forward(const Tensor<S>& x, Mode mode, Rng&,
                    std::unique_ptr<Ctx<S>>& ctx) override {
    const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    const int oh = h / 2, ow = w / 2;
    Tensor<S> y({n, c, oh, ow});
    auto cc = std::make_unique<C>();
    cc->in_shape = x.shape;
    cc->argmax.resize(y.numel());
    std::size_t oi = 0;
    for (int s = 0; s < n; ++s) {
      for (int ch = 0; ch < c; ++ch) {
        const S* plane =
            x.data.data() + (static_cast<std::size_t>(s) * c + ch) * h * w;
        const std::size_t base = (static_cast<std::size_t>(s) * c + ch) *
                                 static_cast<std::size_t>(h) * w;
        for (int py = 0; py < oh; ++py) {
          for (int px = 0; px < ow; ++px, ++oi) {
            // First maximum in row-major scan wins ties.
            std::size_t best = static_cast<std::size_t>(2 * py) * w + 2 * px;
            S bv = plane[best];
            const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
            for (std::size_t k : cand) {
              if (plane[k] > bv) {
                bv = plane[k];
                best = k;
              }
            }
            y.data[oi] = bv;
            cc->argmax[oi] = base + best;
          }
        }
      }
    }
    if (mode == Mode::Train) ctx = std::move(cc);
    return y;
  }

  Tensor<S> backward(Ctx<S>& ctx_base, const Tensor<S>& dy,
                     bool need_dx) override {
    auto& ctx = static_cast<C&>(ctx_base);
    Tensor<S> dx(ctx.in_shape);
    if (!need_dx) return dx;
    for (std::size_t i = 0; i < dy.data.size(); ++i)
      dx.data[ctx.argmax[i]] += dy.data[i];
    return dx;
  }

  const char* name() const override { return "maxpool"; }

 private:
  int index_;
};

// Normalizes over every axis except the channel axis: axis 1 for 4-d
// activations, the last axis for 2-d/3-d ones. Running statistics are
// biased (population) moments, as are the batch statistics.
template <class S>
class BatchNormLayer final : public Layer<S> {
 public:
  BatchNormLayer(int index, int channels, const BatchNormSpec& spec)
      : index_(index), ch_(channels), spec_(spec) {
    gamma_ = Tensor<S>({channels});
    beta_ = Tensor<S>({channels});
    std::fill(gamma_.data.begin(), gamma_.data.end(), S(1));
    gamma_.alloc_grad();
    beta_.alloc_grad();
    running_mean_.assign(channels, 0.0);
    running_var_.assign(channels, 1.0);
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    int c = in.size() == 3 ? in[0] : in.back();
    if (c != ch_)
      fail(ErrorCode::ShapeMismatch,
           "batchnorm at layer " + std::to_string(index_) + ": expected " +
               std::to_string(ch_) + " channels, got " + shape_str(in));
    return in;
  }

  struct C : Ctx<S> {
    Tensor<S> xhat;
    std::vector<double> inv_sd;
    std::vector<int> in_shape;
  };

  Tensor<S> forward(const Tensor<S>& x, Mode mode, Rng&,
                    std::unique_ptr<Ctx<S>>& ctx) override {
    Tensor<S> y(x.shape);
    const int chan = ch_;
    const std::size_t m = x.numel() / static_cast<std::size_t>(chan);

    std::vector<double> mean(chan, 0.0), var(chan, 0.0);
    if (mode == Mode::Train) {
      for_each_channel(x, [&](int c, std::size_t i) { mean[c] += x.data[i]; });
      for (int c = 0; c < chan; ++c) mean[c] /= static_cast<double>(m);
      for_each_channel(x, [&](int c, std::size_t i) {
        double d = x.data[i] - mean[c];
        var[c] += d * d;
      });
      for (int c = 0; c < chan; ++c) var[c] /= static_cast<double>(m);
      for (int c = 0; c < chan; ++c) {
        running_mean_[c] =
            (1.0 - spec_.momentum) * running_mean_[c] + spec_.momentum * mean[c];
        running_var_[c] =
            (1.0 - spec_.momentum) * running_var_[c] + spec_.momentum * var[c];
      }
    } else {
      mean = running_mean_;
      var = running_var_;
    }

    std::vector<double> inv_sd(chan);
    for (int c = 0; c < chan; ++c) inv_sd[c] = 1.0 / std::sqrt(var[c] + spec_.eps);

    std::unique_ptr<C> cc;
    if (mode == Mode::Train) {
      cc = std::make_unique<C>();
      cc->xhat = Tensor<S>(x.shape);
      cc->inv_sd = inv_sd;
      cc->in_shape = x.shape;
    }
    for_each_channel(x, [&](int c, std::size_t i) {
      double xh = (x.data[i] - mean[c]) * inv_sd[c];
      if (cc) cc->xhat.data[i] = static_cast<S>(xh);
      y.data[i] = static_cast<S>(gamma_.data[c] * xh + beta_.data[c]);
    });
    if (cc) ctx = std::move(cc);
    return y;
  }

  Tensor<S> backward(Ctx<S>& ctx_base, const Tensor<S>& dy,
                     bool need_dx) override {
    auto& ctx = static_cast<C&>(ctx_base);
    const int chan = ch_;
    const std::size_t m = ctx.xhat.numel() / static_cast<std::size_t>(chan);

    std::vector<double> sum_dy(chan, 0.0), sum_dy_xhat(chan, 0.0);
    for_each_channel(ctx.xhat, [&](int c, std::size_t i) {
      sum_dy[c] += dy.data[i];
      sum_dy_xhat[c] += static_cast<double>(dy.data[i]) * ctx.xhat.data[i];
    });
    for (int c = 0; c < chan; ++c) {
      gamma_.grad[c] += static_cast<S>(sum_dy_xhat[c]);
      beta_.grad[c] += static_cast<S>(sum_dy[c]);
    }
    Tensor<S> dx(ctx.in_shape);
    if (!need_dx) return dx;
    for_each_channel(ctx.xhat, [&](int c, std::size_t i) {
      double t = dy.data[i] - sum_dy[c] / static_cast<double>(m) -
                 ctx.xhat.data[i] * sum_dy_xhat[c] / static_cast<double>(m);
      dx.data[i] = static_cast<S>(gamma_.data[c] * ctx.inv_sd[c] * t);
    });
    return dx;
  }

  std::vector<Tensor<S>*> params() override { return {&gamma_, &beta_}; }
  const char* name() const override { return "batchnorm"; }

  const std::vector<double>& running_mean() const { return running_mean_; }
  const std::vector<double>& running_var() const { return running_var_; }
  std::vector<double>& running_mean() { return running_mean_; }
  std::vector<double>& running_var() { return running_var_; }

 private:
  template <class F>
  void for_each_channel(const Tensor<S>& x, F&& f) const {
    if (x.shape.size() == 4) {
      const int n = x.shape[0], c = x.shape[1];
      const std::size_t hw = static_cast<std::size_t>(x.shape[2]) * x.shape[3];
      std::size_t i = 0;
      for (int s = 0; s < n; ++s)
        for (int cc = 0; cc < c; ++cc)
          for (std::size_t k = 0; k < hw; ++k, ++i) f(cc, i);
    } else {
      const int d = x.shape.back();
      const std::size_t rows = x.numel() / static_cast<std::size_t>(d);
      std::size_t i = 0;
      for (std::size_t r = 0; r < rows; ++r)
        for (int c = 0; c < d; ++c, ++i) f(c, i);
    }
  }

  int index_, ch_;
  BatchNormSpec spec_;
  Tensor<S> gamma_, beta_;
  std::vector<double> running_mean_, running_var_;
};

template <class S>
class DropoutLayer final : public Layer<S> {
 public:
  DropoutLayer(int index, const DropoutSpec& spec) : index_(index), spec_(spec) {
    if (spec.p < 0.0 || spec.p >= 1.0)
      fail(ErrorCode::InvalidArgument, "dropout p must be in [0,1)");
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    return in;
  }

  struct C : Ctx<S> {
    std::vector<S> mask;  // 0 or 1/(1-p)
  };

  Tensor<S> forward(const Tensor<S>& x, Mode mode, Rng& rng,
                    std::unique_ptr<Ctx<S>>& ctx) override {
    if (mode == Mode::Eval || spec_.p == 0.0) return x;
    Tensor<S> y(x.shape);
    auto cc = std::make_unique<C>();
    cc->mask.resize(x.numel());
    const S keep_scale = static_cast<S>(1.0 / (1.0 - spec_.p));
    for (std::size_t i = 0; i < x.data.size(); ++i) {
      cc->mask[i] = rng.uniform() < spec_.p ? S(0) : keep_scale;
      y.data[i] = x.data[i] * cc->mask[i];
    }
    ctx = std::move(cc);
    return y;
  }

  Tensor<S> backward(Ctx<S>& ctx_base, const Tensor<S>& dy,
                     bool need_dx) override {
    auto& ctx = static_cast<C&>(ctx_base);
    Tensor<S> dx(dy.shape);
    if (!need_dx) return dx;
    if (ctx.mask.empty()) return dy;
    for (std::size_t i = 0; i < dy.data.size(); ++i)
      dx.data[i] = dy.data[i] * ctx.mask[i];
    return dx;
  }

  const char* name() const override { return "dropout"; }

 private:
  int index_;
  DropoutSpec spec_;
};

template <class S>
class FlattenLayer final : public Layer<S> {
 public:
  explicit FlattenLayer(int index) : index_(index) {}

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    int n = 1;
    for (int d : in) n *= d;
    return {n};
  }

  struct C : Ctx<S> {
    std::vector<int> in_shape;
  };

  Tensor<S> forward(const Tensor<S>& x, Mode mode, Rng&,
                    std::unique_ptr<Ctx<S>>& ctx) override {
    Tensor<S> y = x;
    y.shape = {x.shape[0],
               static_cast<int>(x.numel() / static_cast<std::size_t>(x.shape[0]))};
    if (mode == Mode::Train) {
      auto cc = std::make_unique<C>();
      cc->in_shape = x.shape;
      ctx = std::move(cc);
    }
    return y;
  }

  Tensor<S> backward(Ctx<S>& ctx_base, const Tensor<S>& dy, bool) override {
    auto& ctx = static_cast<C&>(ctx_base);
    Tensor<S> dx = dy;
    dx.shape = ctx.in_shape;
    return dx;
  }

  const char* name() const override { return "flatten"; }

 private:
  int index_;
};

template <class S>
class DenseLayer final : public Layer<S> {
 public:
  DenseLayer(int index, int in_dim, const DenseSpec& spec)
      : index_(index), in_(in_dim), out_(spec.out) {
    weight_ = Tensor<S>({out_, in_});
    bias_ = Tensor<S>({out_});
    weight_.alloc_grad();
    bias_.alloc_grad();
  }

  void init(Rng& rng) {
    double bound = std::sqrt(6.0 / in_);
    for (S& v : weight_.data) v = static_cast<S>(rng.uniform(-bound, bound));
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    if (in.size() != 1 || in[0] != in_)
      fail(ErrorCode::ShapeMismatch,
           "dense at layer " + std::to_string(index_) + ": expected [" +
               std::to_string(in_) + "], got " + shape_str(in));
    return {out_};
  }

  struct C : Ctx<S> {
    Tensor<S> x;
  };

  Tensor<S> forward(const Tensor<S>& x, Mode mode, Rng&,
                    std::unique_ptr<Ctx<S>>& ctx) override {
    const int n = x.shape[0];
    Tensor<S> y({n, out_});
    ConstMatMap<S> xm(x.data.data(), n, in_);
    ConstMatMap<S> wm(weight_.data.data(), out_, in_);
    MatMap<S> ym(y.data.data(), n, out_);
    ym.noalias() = xm * wm.transpose();
    for (int s = 0; s < n; ++s)
      for (int o = 0; o < out_; ++o) y.data[s * out_ + o] += bias_.data[o];
    if (mode == Mode::Train) {
      auto cc = std::make_unique<C>();
      cc->x = x;
      ctx = std::move(cc);
    }
    return y;
  }

  Tensor<S> backward(Ctx<S>& ctx_base, const Tensor<S>& dy,
                     bool need_dx) override {
    auto& ctx = static_cast<C&>(ctx_base);
    const int n = ctx.x.shape[0];
    ConstMatMap<S> xm(ctx.x.data.data(), n, in_);
    ConstMatMap<S> dym(dy.data.data(), n, out_);
    MatMap<S> dwm(weight_.grad.data(), out_, in_);
    dwm.noalias() += dym.transpose() * xm;
    for (int s = 0; s < n; ++s)
      for (int o = 0; o < out_; ++o) bias_.grad[o] += dy.data[s * out_ + o];
    Tensor<S> dx({n, in_});
    if (need_dx) {
      ConstMatMap<S> wm(weight_.data.data(), out_, in_);
      MatMap<S> dxm(dx.data.data(), n, in_);
      dxm.noalias() = dym * wm;
    }
    return dx;
  }

  std::vector<Tensor<S>*> params() override { return {&weight_, &bias_}; }
  const char* name() const override { return "dense"; }

 private:
  int index_, in_, out_;
  Tensor<S> weight_, bias_;
};

// Standard LSTM, gate order (i, f, g, o); forget-gate bias starts at +1.
template <class S>
class LstmLayer final : public Layer<S> {
 public:
  LstmLayer(int index, int in_dim, const LstmSpec& spec)
      : index_(index), in_(in_dim), h_(spec.hidden), seq_(spec.return_sequences) {
    wx_ = Tensor<S>({4 * h_, in_});
    wh_ = Tensor<S>({4 * h_, h_});
    bias_ = Tensor<S>({4 * h_});
    wx_.alloc_grad();
    wh_.alloc_grad();
    bias_.alloc_grad();
  }

  void init(Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(h_));
    for (S& v : wx_.data) v = static_cast<S>(rng.uniform(-bound, bound));
    for (S& v : wh_.data) v = static_cast<S>(rng.uniform(-bound, bound));
    for (int k = h_; k < 2 * h_; ++k) bias_.data[k] = S(1);
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    if (in.size() != 2 || in[1] != in_)
      fail(ErrorCode::ShapeMismatch,
           "lstm at layer " + std::to_string(index_) + ": expected [T x " +
               std::to_string(in_) + "], got " + shape_str(in));
    return seq_ ? std::vector<int>{in[0], h_} : std::vector<int>{h_};
  }

  struct C : Ctx<S> {
    Tensor<S> x;                     // [N,T,in]
    std::vector<Tensor<S>> gates;    // per step [N,4H] post-activation
    std::vector<Tensor<S>> cells;    // per step c_t [N,H]
    std::vector<Tensor<S>> hiddens;  // per step h_t [N,H]
    std::vector<Tensor<S>> tanh_c;   // per step tanh(c_t)
  };

  Tensor<S> forward(const Tensor<S>& x, Mode mode, Rng&,
                    std::unique_ptr<Ctx<S>>& ctx) override {
    const int n = x.shape[0], t_len = x.shape[1];
    Tensor<S> h_prev({n, h_}), c_prev({n, h_});
    Tensor<S> y = seq_ ? Tensor<S>({n, t_len, h_}) : Tensor<S>({n, h_});

    std::unique_ptr<C> cc;
    if (mode == Mode::Train) {
      cc = std::make_unique<C>();
      cc->x = x;
    }
    ConstMatMap<S> wxm(wx_.data.data(), 4 * h_, in_);
    ConstMatMap<S> whm(wh_.data.data(), 4 * h_, h_);
    Tensor<S> z({n, 4 * h_});
    for (int t = 0; t < t_len; ++t) {
      // x is [N,T,in] so rows of step t are strided; gather into a temp.
      Tensor<S> xstep({n, in_});
      for (int s = 0; s < n; ++s)
        std::copy_n(x.data.data() + (static_cast<std::size_t>(s) * t_len + t) * in_,
                    in_, xstep.data.data() + static_cast<std::size_t>(s) * in_);
      ConstMatMap<S> xm(xstep.data.data(), n, in_);
      ConstMatMap<S> hm(h_prev.data.data(), n, h_);
      MatMap<S> zm(z.data.data(), n, 4 * h_);
      zm.noalias() = xm * wxm.transpose() + hm * whm.transpose();
      for (int s = 0; s < n; ++s)
        for (int k = 0; k < 4 * h_; ++k) z.data[s * 4 * h_ + k] += bias_.data[k];

      Tensor<S> gates({n, 4 * h_}), c_new({n, h_}), h_new({n, h_}),
          tc({n, h_});
      for (int s = 0; s < n; ++s) {
        const S* zs = z.data.data() + static_cast<std::size_t>(s) * 4 * h_;
        S* gs = gates.data.data() + static_cast<std::size_t>(s) * 4 * h_;
        for (int k = 0; k < h_; ++k) {
          S zi = zs[k], zf = zs[h_ + k], zg = zs[2 * h_ + k], zo = zs[3 * h_ + k];
          S gi = sigmoid(zi), gf = sigmoid(zf), gg = std::tanh(zg),
            go = sigmoid(zo);
          gs[k] = gi;
          gs[h_ + k] = gf;
          gs[2 * h_ + k] = gg;
          gs[3 * h_ + k] = go;
          S c = gf * c_prev.data[s * h_ + k] + gi * gg;
          S tch = std::tanh(c);
          c_new.data[s * h_ + k] = c;
          tc.data[s * h_ + k] = tch;
          h_new.data[s * h_ + k] = go * tch;
        }
      }
      if (seq_) {
        for (int s = 0; s < n; ++s)
          std::copy_n(h_new.data.data() + static_cast<std::size_t>(s) * h_, h_,
                      y.data.data() + (static_cast<std::size_t>(s) * t_len + t) * h_);
      }
      if (cc) {
        cc->gates.push_back(gates);
        cc->cells.push_back(c_new);
        cc->hiddens.push_back(h_new);
        cc->tanh_c.push_back(tc);
      }
      h_prev = std::move(h_new);
      c_prev = std::move(c_new);
    }
    if (!seq_) y = h_prev;
    if (cc) ctx = std::move(cc);
    return y;
  }

  Tensor<S> backward(Ctx<S>& ctx_base, const Tensor<S>& dy,
                     bool need_dx) override {
    auto& ctx = static_cast<C&>(ctx_base);
    const int n = ctx.x.shape[0], t_len = ctx.x.shape[1];
    Tensor<S> dx({n, t_len, in_});
    Tensor<S> dh({n, h_}), dc({n, h_});
    if (!seq_) dh = dy;

    ConstMatMap<S> wxm(wx_.data.data(), 4 * h_, in_);
    ConstMatMap<S> whm(wh_.data.data(), 4 * h_, h_);
    MatMap<S> dwxm(wx_.grad.data(), 4 * h_, in_);
    MatMap<S> dwhm(wh_.grad.data(), 4 * h_, h_);

    Tensor<S> dz({n, 4 * h_});
    for (int t = t_len - 1; t >= 0; --t) {
      if (seq_) {
        for (int s = 0; s < n; ++s)
          for (int k = 0; k < h_; ++k)
            dh.data[s * h_ + k] +=
                dy.data[(static_cast<std::size_t>(s) * t_len + t) * h_ + k];
      }
      const Tensor<S>& gates = ctx.gates[t];
      const Tensor<S>& tc = ctx.tanh_c[t];
      for (int s = 0; s < n; ++s) {
        const S* gs = gates.data.data() + static_cast<std::size_t>(s) * 4 * h_;
        S* dzs = dz.data.data() + static_cast<std::size_t>(s) * 4 * h_;
        for (int k = 0; k < h_; ++k) {
          S gi = gs[k], gf = gs[h_ + k], gg = gs[2 * h_ + k], go = gs[3 * h_ + k];
          S tch = tc.data[s * h_ + k];
          S dht = dh.data[s * h_ + k];
          S dct = dc.data[s * h_ + k] + dht * go * (S(1) - tch * tch);
          S c_prev = t > 0 ? ctx.cells[t - 1].data[s * h_ + k] : S(0);
          dzs[k] = dct * gg * gi * (S(1) - gi);
          dzs[h_ + k] = dct * c_prev * gf * (S(1) - gf);
          dzs[2 * h_ + k] = dct * gi * (S(1) - gg * gg);
          dzs[3 * h_ + k] = dht * tch * go * (S(1) - go);
          dc.data[s * h_ + k] = dct * gf;
        }
      }
      Tensor<S> xstep({n, in_}), hprev({n, h_});
      for (int s = 0; s < n; ++s) {
        std::copy_n(ctx.x.data.data() +
                        (static_cast<std::size_t>(s) * t_len + t) * in_,
                    in_, xstep.data.data() + static_cast<std::size_t>(s) * in_);
        if (t > 0)
          std::copy_n(ctx.hiddens[t - 1].data.data() +
                          static_cast<std::size_t>(s) * h_,
                      h_, hprev.data.data() + static_cast<std::size_t>(s) * h_);
      }
      ConstMatMap<S> dzm(dz.data.data(), n, 4 * h_);
      ConstMatMap<S> xm(xstep.data.data(), n, in_);
      ConstMatMap<S> hm(hprev.data.data(), n, h_);
      dwxm.noalias() += dzm.transpose() * xm;
      dwhm.noalias() += dzm.transpose() * hm;
      for (int s = 0; s < n; ++s)
        for (int k = 0; k < 4 * h_; ++k)
          bias_.grad[k] += dz.data[s * 4 * h_ + k];

      MatMap<S> dhm(dh.data.data(), n, h_);
      dhm.noalias() = dzm * whm;
      if (need_dx) {
        Tensor<S> dxs({n, in_});
        MatMap<S> dxm(dxs.data.data(), n, in_);
        dxm.noalias() = dzm * wxm;
        for (int s = 0; s < n; ++s)
          std::copy_n(dxs.data.data() + static_cast<std::size_t>(s) * in_, in_,
                      dx.data.data() +
                          (static_cast<std::size_t>(s) * t_len + t) * in_);
      }
    }
    return dx;
  }

  std::vector<Tensor<S>*> params() override { return {&wx_, &wh_, &bias_}; }
  const char* name() const override { return "lstm"; }

 private:
  static S sigmoid(S v) { return S(1) / (S(1) + std::exp(-v)); }

  int index_, in_, h_;
  bool seq_;
  Tensor<S> wx_, wh_, bias_;
};

// ---------------------------------------------------------------------------
// Net: an ordered stack built from LayerSpecs, plus the per-call tape.
// ---------------------------------------------------------------------------

template <class S>
struct Tape {
  std::vector<std::unique_ptr<Ctx<S>>> ctxs;
  bool consumed = true;  // a fresh train-mode forward arms it
};

template <class S>
class Net {
 public:
  // input_shape excludes the batch dimension; weight draws happen in layer
  // declaration order, row-major within each tensor.
  static Net build(const std::vector<LayerSpec>& specs,
                   std::vector<int> input_shape, Rng& rng) {
    Net net;
    net.input_shape_ = input_shape;
    std::vector<int> cur = std::move(input_shape);
    int index = 0;
    for (const auto& spec : specs) {
      std::unique_ptr<Layer<S>> layer;
      if (auto* c = std::get_if<Conv2dSpec>(&spec)) {
        if (cur.size() != 3)
          fail(ErrorCode::ShapeMismatch,
               "conv2d at layer " + std::to_string(index) +
                   ": needs [C,H,W] input, got " + shape_str(cur));
        auto l = std::make_unique<Conv2dLayer<S>>(index, cur[0], *c);
        l->init(rng);
        layer = std::move(l);
      } else if (std::get_if<MaxPoolSpec>(&spec)) {
        layer = std::make_unique<MaxPoolLayer<S>>(index);
      } else if (auto* b = std::get_if<BatchNormSpec>(&spec)) {
        int chans = cur.size() == 3 ? cur[0] : cur.back();
        layer = std::make_unique<BatchNormLayer<S>>(index, chans, *b);
      } else if (auto* d = std::get_if<DropoutSpec>(&spec)) {
        layer = std::make_unique<DropoutLayer<S>>(index, *d);
      } else if (std::get_if<FlattenSpec>(&spec)) {
        layer = std::make_unique<FlattenLayer<S>>(index);
      } else if (auto* d = std::get_if<DenseSpec>(&spec)) {
        if (cur.size() != 1)
          fail(ErrorCode::ShapeMismatch,
               "dense at layer " + std::to_string(index) +
                   ": needs flat input, got " + shape_str(cur));
        auto l = std::make_unique<DenseLayer<S>>(index, cur[0], *d);
        l->init(rng);
        layer = std::move(l);
      } else if (auto* l2 = std::get_if<LstmSpec>(&spec)) {
        if (cur.size() != 2)
          fail(ErrorCode::ShapeMismatch,
               "lstm at layer " + std::to_string(index) +
                   ": needs [T,D] input, got " + shape_str(cur));
        auto l = std::make_unique<LstmLayer<S>>(index, cur[1], *l2);
        l->init(rng);
        layer = std::move(l);
      }
      cur = layer->out_shape(cur);
      net.shapes_.push_back(cur);
      net.layers_.push_back(std::move(layer));
      ++index;
    }
    net.output_shape_ = cur;
    return net;
  }

  std::pair<Tensor<S>, Tape<S>> forward(const Tensor<S>& x, Mode mode,
                                        Rng& rng) const {
    std::vector<int> got(x.shape.begin() + 1, x.shape.end());
    detail::check_input<S>(got, input_shape_, 0, "net input");
    Tape<S> tape;
    tape.ctxs.resize(layers_.size());
    Tensor<S> cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      cur = layers_[i]->forward(cur, mode, rng, tape.ctxs[i]);
      if (check_finite_) {
        for (S v : cur.data)
          if (!std::isfinite(static_cast<double>(v)))
            fail(ErrorCode::NonFiniteSample,
                 std::string("non-finite activation after ") +
                     layers_[i]->name() + " at layer " + std::to_string(i));
      }
    }
    tape.consumed = mode != Mode::Train;
    return {std::move(cur), std::move(tape)};
  }

  // Accumulates parameter gradients; returns d(loss)/d(input) when asked.
  Tensor<S> backward(Tape<S>& tape, const Tensor<S>& dy,
                     bool need_input_grad = false) const {
    if (tape.consumed)
      fail(ErrorCode::TapeConsumed,
           "backward needs a fresh train-mode forward tape");
    tape.consumed = true;
    Tensor<S> cur = dy;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      bool need_dx = i > 0 || need_input_grad;
      if (tape.ctxs[i]) {
        cur = layers_[i]->backward(*tape.ctxs[i], cur, need_dx);
      }  // ctx-free layers (dropout at p=0, eval-mode) pass dy through
    }
    return cur;
  }

  std::vector<Tensor<S>*> params() const {
    std::vector<Tensor<S>*> out;
    for (const auto& l : layers_)
      for (Tensor<S>* p : l->params()) out.push_back(p);
    return out;
  }

  void zero_grads() const {
    for (Tensor<S>* p : params()) p->zero_grad();
  }

  const std::vector<int>& input_shape() const { return input_shape_; }
  const std::vector<int>& output_shape() const { return output_shape_; }
  std::vector<Layer<S>*> layers() const {
    std::vector<Layer<S>*> out;
    for (const auto& l : layers_) out.push_back(l.get());
    return out;
  }
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  std::vector<std::unique_ptr<Layer<S>>> layers_;
  std::vector<std::vector<int>> shapes_;
  std::vector<int> input_shape_, output_shape_;
  bool check_finite_ = false;
};

// ---------------------------------------------------------------------------
// Loss heads and distance, as free ops on raw buffers.
// ---------------------------------------------------------------------------

// Row-wise stable softmax of [N,K] logits.
template <class S>
Tensor<S> softmax(const Tensor<S>& logits) {
  const int n = logits.shape[0], k = logits.shape[1];
  Tensor<S> p(logits.shape);
  for (int s = 0; s < n; ++s) {
    const S* z = logits.data.data() + static_cast<std::size_t>(s) * k;
    S* o = p.data.data() + static_cast<std::size_t>(s) * k;
    S mx = *std::max_element(z, z + k);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) sum += std::exp(static_cast<double>(z[j] - mx));
    for (int j = 0; j < k; ++j)
      o[j] = static_cast<S>(std::exp(static_cast<double>(z[j] - mx)) / sum);
  }
  return p;
}

// Mean cross-entropy over the batch; dlogits = (softmax - onehot)/N.
template <class S>
std::pair<double, Tensor<S>> softmax_xent(const Tensor<S>& logits,
                                          const std::vector<int>& labels) {
  const int n = logits.shape[0], k = logits.shape[1];
  if (static_cast<std::size_t>(n) != labels.size())
    fail(ErrorCode::LengthMismatch, "labels do not match logit rows");
  Tensor<S> d = softmax(logits);
  double loss = 0.0;
  for (int s = 0; s < n; ++s) {
    double p = std::max(
        static_cast<double>(d.data[static_cast<std::size_t>(s) * k + labels[s]]),
        1e-30);
    loss -= std::log(p);
    d.data[static_cast<std::size_t>(s) * k + labels[s]] -= S(1);
  }
  for (S& v : d.data) v = static_cast<S>(v / static_cast<double>(n));
  return {loss / n, std::move(d)};
}

template <class S>
S euclidean_distance(const S* a, const S* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dd = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += dd * dd;
  }
  return static_cast<S>(std::sqrt(s));
}

// ---------------------------------------------------------------------------
// Adam with bias correction; element math in double for both scalar types.
// ---------------------------------------------------------------------------

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class S>
struct AdamState {
  std::vector<std::vector<double>> m, v;
  long step = 0;

  static AdamState for_params(const std::vector<Tensor<S>*>& params) {
    AdamState st;
    for (const Tensor<S>* p : params) {
      st.m.emplace_back(p->numel(), 0.0);
      st.v.emplace_back(p->numel(), 0.0);
    }
    return st;
  }
};

template <class S>
void adam_step(const std::vector<Tensor<S>*>& params, AdamState<S>& state,
               const AdamHyper& hp = {}) {
  if (params.size() != state.m.size())
    fail(ErrorCode::ShapeMismatch, "adam state does not match params");
  ++state.step;
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor<S>& p = *params[t];
    if (p.grad.size() != p.data.size())
      fail(ErrorCode::ShapeMismatch, "param without matching grad");
    auto& m = state.m[t];
    auto& v = state.v[t];
    if (m.size() != p.data.size())
      fail(ErrorCode::ShapeMismatch, "adam state does not match params");
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      double g = static_cast<double>(p.grad[i]);
      m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
      v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
      double update = hp.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + hp.eps);
      p.data[i] = static_cast<S>(static_cast<double>(p.data[i]) - update);
    }
  }
}

// ---------------------------------------------------------------------------
// State blocks for checkpoints: every learnable tensor in declaration order,
// with batchnorm running statistics following that layer's affine params.
// Callers wrap these blocks in their own header.
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void write_block_f32(std::ostream& out, const std::vector<T>& src) {
  std::vector<float> buf(src.size());
  for (std::size_t i = 0; i < src.size(); ++i)
    buf[i] = static_cast<float>(src[i]);
  container::write_f32(out, buf.data(), buf.size());
}

template <class T>
void read_block_f32(std::istream& in, std::vector<T>& dst) {
  std::vector<float> buf(dst.size());
  container::read_f32(in, buf.data(), buf.size());
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(buf[i]);
}

}  // namespace detail

template <class S>
void write_state(std::ostream& out, const Net<S>& net) {
  for (Layer<S>* l : net.layers()) {
    for (Tensor<S>* p : l->params()) detail::write_block_f32(out, p->data);
    if (auto* bn = dynamic_cast<BatchNormLayer<S>*>(l)) {
      detail::write_block_f32(out, bn->running_mean());
      detail::write_block_f32(out, bn->running_var());
    }
  }
}

template <class S>
void read_state(std::istream& in, Net<S>& net) {
  for (Layer<S>* l : net.layers()) {
    for (Tensor<S>* p : l->params()) detail::read_block_f32(in, p->data);
    if (auto* bn = dynamic_cast<BatchNormLayer<S>*>(l)) {
      detail::read_block_f32(in, bn->running_mean());
      detail::read_block_f32(in, bn->running_var());
    }
  }
}

// Number of float32 values write_state emits, for header bookkeeping.
template <class S>
std::size_t state_count(const Net<S>& net) {
  std::size_t n = 0;
  for (Layer<S>* l : net.layers()) {
    for (Tensor<S>* p : l->params()) n += p->numel();
    if (auto* bn = dynamic_cast<BatchNormLayer<S>*>(l))
      n += bn->running_mean().size() + bn->running_var().size();
  }
  return n;
}

}  // namespace physiogait::autodiff
