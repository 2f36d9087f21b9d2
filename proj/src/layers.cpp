/*
 * Copyright 2026 The DDG Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "ddg/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "ddg/errors.hpp"

namespace ddg {
namespace {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMajor<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMajor<T>>;

template <typename T>
void uniform_fill(Tensor<T>& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

void require_rank(const Shape& shape, std::size_t rank, const char* layer) {
  if (shape.size() != rank) {
    throw ValidationError(std::string(layer) + " expects a rank-" + std::to_string(rank) + " input, got " +
                          shape_to_string(shape));
  }
}

struct ConvGeometry {
  std::size_t channels, height, width, kernel, stride, padding, out_h, out_w;
};

template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* cols) {
  const std::size_t n = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * n;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + ki) - static_cast<long>(g.padding);
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + kj) - static_cast<long>(g.padding);
            const bool inside = ih >= 0 && iw >= 0 && ih < static_cast<long>(g.height) &&
                                iw < static_cast<long>(g.width);
            row[oh * g.out_w + ow] = inside ? image[(c * g.height + ih) * g.width + iw] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* image) {
  const std::size_t n = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * n;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + ki) - static_cast<long>(g.padding);
          if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + kj) - static_cast<long>(g.padding);
            if (iw < 0 || iw >= static_cast<long>(g.width)) continue;
            image[(c * g.height + ih) * g.width + iw] += row[oh * g.out_w + ow];
          }
        }
      }
    }
  }
}

// Small helper tensors that carry an input shape through a trace.
template <typename T>
Tensor<T> encode_shape(const Shape& shape) {
  Tensor<T> t({shape.size()});
  for (std::size_t i = 0; i < shape.size(); ++i) t[i] = static_cast<T>(shape[i]);
  return t;
}

template <typename T>
Shape decode_shape(const Tensor<T>& t) {
  Shape s(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) s[i] = static_cast<std::size_t>(t[i]);
  return s;
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
                  std::size_t padding, bool bias)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      has_bias_(bias),
      weight_({out_channels, in_channels, kernel, kernel}),
      bias_({bias ? out_channels : 0}) {
  if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0) {
    throw ValidationError("conv2d: channels, kernel and stride must be positive");
  }
}

template <typename T>
std::vector<Tensor<T>*> Conv2d<T>::parameters() {
  if (has_bias_) return {&weight_, &bias_};
  return {&weight_};
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Conv2d<T>::named_state() {
  if (has_bias_) return {{"weight", &weight_}, {"bias", &bias_}};
  return {{"weight", &weight_}};
}

template <typename T>
void Conv2d<T>::initialize(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels_ * kernel_ * kernel_));
  uniform_fill(weight_, bound, rng);
  if (has_bias_) uniform_fill(bias_, bound, rng);
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Mode, Trace<T>* trace) {
  require_rank(x.shape(), 4, "conv2d");
  if (x.dim(1) != in_channels_) {
    throw ValidationError("conv2d: expected " + std::to_string(in_channels_) + " channels, got " +
                          shape_to_string(x.shape()));
  }
  if (x.dim(2) + 2 * padding_ < kernel_ || x.dim(3) + 2 * padding_ < kernel_) {
    throw ValidationError("conv2d: input " + shape_to_string(x.shape()) + " smaller than the kernel");
  }
  const ConvGeometry g{in_channels_,
                       x.dim(2),
                       x.dim(3),
                       kernel_,
                       stride_,
                       padding_,
                       (x.dim(2) + 2 * padding_ - kernel_) / stride_ + 1,
                       (x.dim(3) + 2 * padding_ - kernel_) / stride_ + 1};
  const std::size_t batch = x.dim(0);
  const std::size_t k = in_channels_ * kernel_ * kernel_;
  const std::size_t n = g.out_h * g.out_w;
  Tensor<T> out({batch, out_channels_, g.out_h, g.out_w});
  std::vector<T> cols(k * n);
  ConstMatMap<T> w(weight_.data(), out_channels_, k);
  for (std::size_t b = 0; b < batch; ++b) {
    im2col(x.slice(b).data(), g, cols.data());
    MatMap<T> y(out.slice(b).data(), out_channels_, n);
    y.noalias() = w * ConstMatMap<T>(cols.data(), k, n);
    if (has_bias_) {
      for (std::size_t o = 0; o < out_channels_; ++o) y.row(o).array() += bias_[o];
    }
  }
  if (trace) trace->saved = {x};
  return out;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Trace<T>& trace, const Tensor<T>& grad_out, std::span<Tensor<T>> param_grads,
                              bool need_input_grad) const {
  const Tensor<T>& x = trace.saved.at(0);
  const ConvGeometry g{in_channels_, x.dim(2), x.dim(3), kernel_, stride_, padding_, grad_out.dim(2),
                       grad_out.dim(3)};
  const std::size_t batch = x.dim(0);
  const std::size_t k = in_channels_ * kernel_ * kernel_;
  const std::size_t n = g.out_h * g.out_w;
  const bool want_params = !param_grads.empty();
  ConstMatMap<T> w(weight_.data(), out_channels_, k);

  Tensor<T> dx;
  if (need_input_grad) dx = Tensor<T>(x.shape());
  std::vector<T> cols(k * n);
  for (std::size_t b = 0; b < batch; ++b) {
    ConstMatMap<T> dy(grad_out.slice(b).data(), out_channels_, n);
    if (want_params) {
      im2col(x.slice(b).data(), g, cols.data());
      MatMap<T> dw(param_grads[0].data(), out_channels_, k);
      dw.noalias() += dy * ConstMatMap<T>(cols.data(), k, n).transpose();
      if (has_bias_) {
        for (std::size_t o = 0; o < out_channels_; ++o) param_grads[1][o] += dy.row(o).sum();
      }
    }
    if (need_input_grad) {
      MatMap<T> dcols(cols.data(), k, n);
      dcols.noalias() = w.transpose() * dy;
      col2im_add(cols.data(), g, dx.slice(b).data());
    }
  }
  return dx;
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(std::size_t in_features, std::size_t out_features)
    : in_features_(in_features),
      out_features_(out_features),
      weight_({out_features, in_features}),
      bias_({out_features}) {
  if (in_features == 0 || out_features == 0) throw ValidationError("linear: feature counts must be positive");
}

template <typename T>
void Linear<T>::initialize(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features_));
  uniform_fill(weight_, bound, rng);
  uniform_fill(bias_, bound, rng);
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, Mode, Trace<T>* trace) {
  require_rank(x.shape(), 2, "linear");
  if (x.dim(1) != in_features_) {
    throw ValidationError("linear: expected " + std::to_string(in_features_) + " features, got " +
                          shape_to_string(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  Tensor<T> out({batch, out_features_});
  MatMap<T> y(out.data(), batch, out_features_);
  y.noalias() = ConstMatMap<T>(x.data(), batch, in_features_) *
                ConstMatMap<T>(weight_.data(), out_features_, in_features_).transpose();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out_features_; ++o) y(b, o) += bias_[o];
  }
  if (trace) trace->saved = {x};
  return out;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Trace<T>& trace, const Tensor<T>& grad_out, std::span<Tensor<T>> param_grads,
                              bool need_input_grad) const {
  const Tensor<T>& x = trace.saved.at(0);
  const std::size_t batch = x.dim(0);
  ConstMatMap<T> dy(grad_out.data(), batch, out_features_);
  if (!param_grads.empty()) {
    MatMap<T> dw(param_grads[0].data(), out_features_, in_features_);
    dw.noalias() += dy.transpose() * ConstMatMap<T>(x.data(), batch, in_features_);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t o = 0; o < out_features_; ++o) param_grads[1][o] += dy(b, o);
    }
  }
  Tensor<T> dx;
  if (need_input_grad) {
    dx = Tensor<T>(x.shape());
    MatMap<T>(dx.data(), batch, in_features_).noalias() =
        dy * ConstMatMap<T>(weight_.data(), out_features_, in_features_);
  }
  return dx;
}

// ---------------------------------------------------------------- ReLU

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x, Mode, Trace<T>* trace) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  if (trace) trace->saved = {out};
  return out;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Trace<T>& trace, const Tensor<T>& grad_out, std::span<Tensor<T>>,
                            bool need_input_grad) const {
  if (!need_input_grad) return {};
  const Tensor<T>& y = trace.saved.at(0);
  Tensor<T> dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] > T{0} ? grad_out[i] : T{0};
  return dx;
}

// ---------------------------------------------------------------- MaxPool2d

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x, Mode, Trace<T>* trace) {
  require_rank(x.shape(), 4, "maxpool2d");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw ValidationError("maxpool2d: input " + shape_to_string(x.shape()) + " too small");
  Tensor<T> out({x.dim(0), x.dim(1), oh, ow});
  for (std::size_t p = 0; p < planes; ++p) {
    const T* in = x.data() + p * h * w;
    T* o = out.data() + p * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const T* base = in + 2 * i * w + 2 * j;
        o[i * ow + j] = std::max(std::max(base[0], base[1]), std::max(base[w], base[w + 1]));
      }
    }
  }
  if (trace) trace->saved = {x};
  return out;
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Trace<T>& trace, const Tensor<T>& grad_out, std::span<Tensor<T>>,
                                 bool need_input_grad) const {
  if (!need_input_grad) return {};
  const Tensor<T>& x = trace.saved.at(0);
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor<T> dx(x.shape());
  for (std::size_t p = 0; p < planes; ++p) {
    const T* in = x.data() + p * h * w;
    T* d = dx.data() + p * h * w;
    const T* g = grad_out.data() + p * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t offsets[4] = {2 * i * w + 2 * j, 2 * i * w + 2 * j + 1, (2 * i + 1) * w + 2 * j,
                                        (2 * i + 1) * w + 2 * j + 1};
        std::size_t best = offsets[0];
        for (std::size_t k = 1; k < 4; ++k) {
          if (in[offsets[k]] > in[best]) best = offsets[k];
        }
        d[best] += g[i * ow + j];
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- GlobalAvgPool

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x, Mode, Trace<T>* trace) {
  require_rank(x.shape(), 4, "global_avg_pool");
  const std::size_t planes = x.dim(0) * x.dim(1), area = x.dim(2) * x.dim(3);
  Tensor<T> out({x.dim(0), x.dim(1)});
  for (std::size_t p = 0; p < planes; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < area; ++i) s += x[p * area + i];
    out[p] = static_cast<T>(s / static_cast<double>(area));
  }
  if (trace) trace->saved = {encode_shape<T>(x.shape())};
  return out;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Trace<T>& trace, const Tensor<T>& grad_out, std::span<Tensor<T>>,
                                     bool need_input_grad) const {
  if (!need_input_grad) return {};
  const Shape shape = decode_shape(trace.saved.at(0));
  const std::size_t planes = shape[0] * shape[1], area = shape[2] * shape[3];
  Tensor<T> dx(shape);
  for (std::size_t p = 0; p < planes; ++p) {
    const T v = grad_out[p] / static_cast<T>(area);
    for (std::size_t i = 0; i < area; ++i) dx[p * area + i] = v;
  }
  return dx;
}

// ---------------------------------------------------------------- Flatten

template <typename T>
Tensor<T> Flatten<T>::forward(const Tensor<T>& x, Mode, Trace<T>* trace) {
  if (x.rank() < 2) throw ValidationError("flatten: input must have a batch dimension");
  Tensor<T> out = x;
  out.reshape({x.dim(0), x.stride0()});
  if (trace) trace->saved = {encode_shape<T>(x.shape())};
  return out;
}

template <typename T>
Tensor<T> Flatten<T>::backward(const Trace<T>& trace, const Tensor<T>& grad_out, std::span<Tensor<T>>,
                               bool need_input_grad) const {
  if (!need_input_grad) return {};
  Tensor<T> dx = grad_out;
  dx.reshape(decode_shape(trace.saved.at(0)));
  return dx;
}

// ---------------------------------------------------------------- BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::size_t channels, double momentum, double eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_({channels}, T{1}),
      beta_({channels}),
      running_mean_({channels}),
      running_var_({channels}, T{1}) {}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> BatchNorm2d<T>::named_state() {
  return {{"weight", &gamma_}, {"bias", &beta_}, {"running_mean", &running_mean_}, {"running_var", &running_var_}};
}

// Trace layout: saved[0] = normalized input, saved[1] = per-channel 1/std,
// saved[2] = {1} when batch statistics were used.
template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, Mode mode, Trace<T>* trace) {
  require_rank(x.shape(), 4, "batchnorm2d");
  if (x.dim(1) != channels_) throw ValidationError("batchnorm2d: channel mismatch " + shape_to_string(x.shape()));
  const std::size_t batch = x.dim(0), area = x.dim(2) * x.dim(3);
  const bool batch_stats = mode != Mode::kEval;
  if (batch_stats && batch * area < 2) throw ValidationError("batchnorm2d: need more than one value per channel");

  Tensor<T> xhat(x.shape());
  Tensor<T> inv_std({channels_});
  Tensor<T> out(x.shape());
  for (std::size_t c = 0; c < channels_; ++c) {
    double mean = running_mean_[c];
    double var = running_var_[c];
    if (batch_stats) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x.data() + (b * channels_ + c) * area;
        for (std::size_t i = 0; i < area; ++i) s += p[i];
      }
      const double count = static_cast<double>(batch * area);
      mean = s / count;
      double ss = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x.data() + (b * channels_ + c) * area;
        for (std::size_t i = 0; i < area; ++i) ss += (p[i] - mean) * (p[i] - mean);
      }
      var = ss / count;
      if (mode == Mode::kTrain) {
        running_mean_[c] = static_cast<T>((1.0 - momentum_) * running_mean_[c] + momentum_ * mean);
        running_var_[c] =
            static_cast<T>((1.0 - momentum_) * running_var_[c] + momentum_ * ss / std::max(count - 1.0, 1.0));
      }
    }
    const double istd = 1.0 / std::sqrt(var + eps_);
    inv_std[c] = static_cast<T>(istd);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels_ + c) * area;
      for (std::size_t i = 0; i < area; ++i) {
        const T h = static_cast<T>((x[off + i] - mean) * istd);
        xhat[off + i] = h;
        out[off + i] = gamma_[c] * h + beta_[c];
      }
    }
  }
  if (trace) trace->saved = {std::move(xhat), std::move(inv_std), Tensor<T>({1}, batch_stats ? T{1} : T{0})};
  return out;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Trace<T>& trace, const Tensor<T>& grad_out,
                                   std::span<Tensor<T>> param_grads, bool need_input_grad) const {
  const Tensor<T>& xhat = trace.saved.at(0);
  const Tensor<T>& inv_std = trace.saved.at(1);
  const bool batch_stats = trace.saved.at(2)[0] != T{0};
  const std::size_t batch = xhat.dim(0), area = xhat.dim(2) * xhat.dim(3);
  const double count = static_cast<double>(batch * area);

  Tensor<T> dx;
  if (need_input_grad) dx = Tensor<T>(xhat.shape());
  for (std::size_t c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels_ + c) * area;
      for (std::size_t i = 0; i < area; ++i) {
        sum_dy += grad_out[off + i];
        sum_dy_xhat += grad_out[off + i] * xhat[off + i];
      }
    }
    if (!param_grads.empty()) {
      param_grads[0][c] += static_cast<T>(sum_dy_xhat);
      param_grads[1][c] += static_cast<T>(sum_dy);
    }
    if (!need_input_grad) continue;
    const double g = gamma_[c];
    const double istd = inv_std[c];
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels_ + c) * area;
      for (std::size_t i = 0; i < area; ++i) {
        if (batch_stats) {
          dx[off + i] = static_cast<T>(g * istd / count *
                                       (count * grad_out[off + i] - sum_dy - xhat[off + i] * sum_dy_xhat));
        } else {
          dx[off + i] = static_cast<T>(g * istd * grad_out[off + i]);
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- ResidualBlock

template <typename T>
ResidualBlock<T>::ResidualBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride) {
  main_.push_back(std::make_unique<Conv2d<T>>(in_channels, out_channels, 3, stride, 1, false));
  main_.push_back(std::make_unique<BatchNorm2d<T>>(out_channels));
  main_.push_back(std::make_unique<ReLU<T>>());
  main_.push_back(std::make_unique<Conv2d<T>>(out_channels, out_channels, 3, 1, 1, false));
  main_.push_back(std::make_unique<BatchNorm2d<T>>(out_channels));
  if (stride != 1 || in_channels != out_channels) {
    shortcut_.push_back(std::make_unique<Conv2d<T>>(in_channels, out_channels, 1, stride, 0, false));
    shortcut_.push_back(std::make_unique<BatchNorm2d<T>>(out_channels));
  }
}

template <typename T>
ResidualBlock<T>::ResidualBlock(const ResidualBlock& other) : Layer<T>(other) {
  for (const auto& l : other.main_) main_.push_back(l->clone());
  for (const auto& l : other.shortcut_) shortcut_.push_back(l->clone());
}

template <typename T>
std::vector<Tensor<T>*> ResidualBlock<T>::parameters() {
  std::vector<Tensor<T>*> out;
  for (auto* group : {&main_, &shortcut_}) {
    for (auto& l : *group) {
      for (auto* p : l->parameters()) out.push_back(p);
    }
  }
  return out;
}

template <typename T>
std::size_t ResidualBlock<T>::num_parameter_tensors() const {
  std::size_t n = 0;
  for (const auto* group : {&main_, &shortcut_}) {
    for (const auto& l : *group) n += l->num_parameter_tensors();
  }
  return n;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> ResidualBlock<T>::named_state() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (std::size_t i = 0; i < main_.size(); ++i) {
    for (auto& [name, t] : main_[i]->named_state()) out.emplace_back("main." + std::to_string(i) + "." + name, t);
  }
  for (std::size_t i = 0; i < shortcut_.size(); ++i) {
    for (auto& [name, t] : shortcut_[i]->named_state()) {
      out.emplace_back("shortcut." + std::to_string(i) + "." + name, t);
    }
  }
  return out;
}

template <typename T>
void ResidualBlock<T>::initialize(std::mt19937_64& rng) {
  for (auto& l : main_) l->initialize(rng);
  for (auto& l : shortcut_) l->initialize(rng);
}

// Trace children: main_ traces, then shortcut_ traces, then the output relu.
template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, Mode mode, Trace<T>* trace) {
  if (trace) trace->children.assign(main_.size() + shortcut_.size() + 1, Trace<T>{});
  std::size_t slot = 0;
  Tensor<T> h = x;
  for (auto& l : main_) h = l->forward(h, mode, trace ? &trace->children[slot++] : nullptr);
  Tensor<T> s = x;
  for (auto& l : shortcut_) s = l->forward(s, mode, trace ? &trace->children[slot++] : nullptr);
  add_into(h, s);
  ReLU<T> out_relu;
  return out_relu.forward(h, mode, trace ? &trace->children[slot] : nullptr);
}

template <typename T>
Tensor<T> ResidualBlock<T>::backward(const Trace<T>& trace, const Tensor<T>& grad_out,
                                     std::span<Tensor<T>> param_grads, bool need_input_grad) const {
  const bool want_params = !param_grads.empty();
  const ReLU<T> out_relu;
  const Tensor<T> g = out_relu.backward(trace.children.back(), grad_out, {}, true);

  // Parameter offsets follow the order of parameters().
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (auto* group : {&main_, &shortcut_}) {
    for (const auto& l : *group) {
      offsets.push_back(offset);
      offset += l->num_parameter_tensors();
    }
  }
  auto grads_for = [&](std::size_t layer_index, const Layer<T>& l) -> std::span<Tensor<T>> {
    if (!want_params) return {};
    return param_grads.subspan(offsets[layer_index], l.num_parameter_tensors());
  };

  Tensor<T> dmain = g;
  for (std::size_t i = main_.size(); i-- > 0;) {
    const bool need = need_input_grad || i > 0;
    dmain = main_[i]->backward(trace.children[i], dmain, grads_for(i, *main_[i]), need);
  }
  Tensor<T> dshort = g;
  for (std::size_t i = shortcut_.size(); i-- > 0;) {
    const bool need = need_input_grad || i > 0;
    dshort = shortcut_[i]->backward(trace.children[main_.size() + i], dshort,
                                    grads_for(main_.size() + i, *shortcut_[i]), need);
  }
  if (!need_input_grad) return {};
  add_into(dmain, dshort);
  return dmain;
}

#define DDG_INSTANTIATE_LAYERS(T)  \
  template class Conv2d<T>;        \
  template class Linear<T>;        \
  template class ReLU<T>;          \
  template class MaxPool2d<T>;     \
  template class GlobalAvgPool<T>; \
  template class Flatten<T>;       \
  template class BatchNorm2d<T>;   \
  template class ResidualBlock<T>;
DDG_INSTANTIATE_LAYERS(float)
DDG_INSTANTIATE_LAYERS(double)

}  // namespace ddg
