#include "esr/nn.hpp"

#include <Eigen/Core>

#include <cmath>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <limits>
#include <stdexcept>

#include "esr/rng.hpp"

namespace esr::nn {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
std::vector<Tensor<T>>* grads_of(GradStore<T>* store, const Layer<T>* layer) {
  return store ? store->find(layer) : nullptr;
}

}  // namespace

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " + std::to_string(w) + ")";
}

template <typename T>
std::vector<std::pair<std::string, const Layer<T>*>> Layer<T>::const_children() const {
  std::vector<std::pair<std::string, const Layer<T>*>> out;
  for (auto& [name, child] : const_cast<Layer<T>*>(this)->children()) {
    out.emplace_back(name, child);
  }
  return out;
}

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, bool bias)
    : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(pad), bias_(bias) {
  this->params_.emplace_back(Shape{out_channels, in_channels, kernel, kernel});
  this->param_names_.push_back("weight");
  if (bias) {
    this->params_.emplace_back(Shape{1, out_channels, 1, 1});
    this->param_names_.push_back("bias");
  }
}

template <typename T>
Shape Conv2d<T>::output_shape(const Shape& in) const {
  if (in.c != in_) {
    throw std::invalid_argument("conv2d: expected " + std::to_string(in_) + " input channels, got " + in.str());
  }
  return {in.n, out_, (in.h + 2 * pad_ - k_) / stride_ + 1, (in.w + 2 * pad_ - k_) / stride_ + 1};
}

template <typename T>
void Conv2d<T>::im2col(const T* x, const Shape& in, const Shape& out, T* cols) const {
  const std::size_t plane = std::size_t(out.h) * out.w;
  for (int c = 0; c < in.c; ++c) {
    const T* src = x + std::size_t(c) * in.h * in.w;
    for (int ky = 0; ky < k_; ++ky) {
      for (int kx = 0; kx < k_; ++kx) {
        T* dst = cols + (std::size_t(c * k_ + ky) * k_ + kx) * plane;
        for (int oy = 0; oy < out.h; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          T* row = dst + std::size_t(oy) * out.w;
          if (iy < 0 || iy >= in.h) {
            std::fill(row, row + out.w, T(0));
            continue;
          }
          const T* src_row = src + std::size_t(iy) * in.w;
          if (stride_ == 1) {
            const int lo = std::min(out.w, std::max(0, pad_ - kx));
            const int hi = std::max(lo, std::min(out.w, in.w + pad_ - kx));
            std::fill(row, row + lo, T(0));
            std::copy(src_row + lo - pad_ + kx, src_row + hi - pad_ + kx, row + lo);
            std::fill(row + hi, row + out.w, T(0));
          } else {
            for (int ox = 0; ox < out.w; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              row[ox] = (ix >= 0 && ix < in.w) ? src_row[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void Conv2d<T>::col2im(const T* cols, const Shape& in, const Shape& out, T* dx) const {
  const std::size_t plane = std::size_t(out.h) * out.w;
  for (int c = 0; c < in.c; ++c) {
    T* dst = dx + std::size_t(c) * in.h * in.w;
    for (int ky = 0; ky < k_; ++ky) {
      for (int kx = 0; kx < k_; ++kx) {
        const T* src = cols + (std::size_t(c * k_ + ky) * k_ + kx) * plane;
        for (int oy = 0; oy < out.h; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= in.h) {
            continue;
          }
          const T* row = src + std::size_t(oy) * out.w;
          T* dst_row = dst + std::size_t(iy) * in.w;
          for (int ox = 0; ox < out.w; ++ox) {
            const int ix = ox * stride_ - pad_ + kx;
            if (ix >= 0 && ix < in.w) {
              dst_row[ix] += row[ox];
            }
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Mode, LayerCache<T>* cache) const {
  const Shape out_shape = output_shape(x.shape);
  Tensor<T> y(out_shape);
  const int K = in_ * k_ * k_;
  const int P = out_shape.h * out_shape.w;
  Eigen::Map<const MatR<T>> W(this->params_[0].data.data(), out_, K);
  AlignedVector<T> cols(direct() ? 0 : std::size_t(K) * P);
  for (int n = 0; n < x.shape.n; ++n) {
    const T* col_ptr = x.sample(n);
    if (!direct()) {
      im2col(x.sample(n), x.shape, out_shape, cols.data());
      col_ptr = cols.data();
    }
    Eigen::Map<const MatR<T>> C(col_ptr, K, P);
    Eigen::Map<MatR<T>> Y(y.sample(n), out_, P);
    Y.noalias() = W * C;
    if (bias_) {
      Eigen::Map<const Vec<T>> b(this->params_[1].data.data(), out_);
      Y.colwise() += b;
    }
  }
  if (cache) {
    cache->saved = {x};
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy, const LayerCache<T>& cache, GradStore<T>* grads,
                              bool need_dx) const {
  const Tensor<T>& x = cache.saved.at(0);
  const Shape out_shape = dy.shape;
  const int K = in_ * k_ * k_;
  const int P = out_shape.h * out_shape.w;
  Eigen::Map<const MatR<T>> W(this->params_[0].data.data(), out_, K);
  auto* g = grads_of(grads, static_cast<const Layer<T>*>(this));
  Tensor<T> dx;
  if (need_dx) {
    dx = Tensor<T>(x.shape);
  }
  AlignedVector<T> cols(direct() ? 0 : std::size_t(K) * P);
  AlignedVector<T> dcols(direct() || !need_dx ? 0 : std::size_t(K) * P);
  for (int n = 0; n < x.shape.n; ++n) {
    Eigen::Map<const MatR<T>> DY(dy.sample(n), out_, P);
    if (g) {
      const T* col_ptr = x.sample(n);
      if (!direct()) {
        im2col(x.sample(n), x.shape, out_shape, cols.data());
        col_ptr = cols.data();
      }
      Eigen::Map<const MatR<T>> C(col_ptr, K, P);
      Eigen::Map<MatR<T>> dW((*g)[0].data.data(), out_, K);
      dW.noalias() += DY * C.transpose();
      if (bias_) {
        Eigen::Map<Vec<T>> db((*g)[1].data.data(), out_);
        db += DY.rowwise().sum();
      }
    }
    if (need_dx) {
      if (direct()) {
        Eigen::Map<MatR<T>> DX(dx.sample(n), K, P);
        DX.noalias() = W.transpose() * DY;
      } else {
        Eigen::Map<MatR<T>> DC(dcols.data(), K, P);
        DC.noalias() = W.transpose() * DY;
        col2im(dcols.data(), x.shape, out_shape, dx.sample(n));
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- ReLU

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x, Mode, LayerCache<T>* cache) const {
  Tensor<T> y(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
  }
  if (cache) {
    cache->saved = {y};
  }
  return y;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& dy, const LayerCache<T>& cache, GradStore<T>*, bool need_dx) const {
  if (!need_dx) {
    return {};
  }
  const Tensor<T>& y = cache.saved.at(0);
  Tensor<T> dx(dy.shape);
  for (std::size_t i = 0; i < dy.data.size(); ++i) {
    dx.data[i] = y.data[i] > T(0) ? dy.data[i] : T(0);
  }
  return dx;
}

// ---------------------------------------------------------------- MaxPool2d

template <typename T>
Shape MaxPool2d<T>::output_shape(const Shape& in) const {
  return {in.n, in.c, (in.h + 2 * pad_ - k_) / stride_ + 1, (in.w + 2 * pad_ - k_) / stride_ + 1};
}

// Same tie-breaking as the general path: first maximum in row-major window order.
template <typename T>
void MaxPool2d<T>::pool2x2(const Tensor<T>& x, Tensor<T>& y, std::int32_t* idx) const {
  const int H = x.shape.h, W = x.shape.w, OH = y.shape.h, OW = y.shape.w;
  const std::size_t in_plane = std::size_t(H) * W;
  std::size_t o = 0;
  for (int n = 0; n < x.shape.n; ++n) {
    for (int c = 0; c < x.shape.c; ++c) {
      const T* src = x.sample(n) + std::size_t(c) * in_plane;
      const auto base = static_cast<std::int32_t>(std::size_t(c) * in_plane);
      for (int oy = 0; oy < OH; ++oy) {
        const T* r0 = src + std::size_t(2 * oy) * W;
        const T* r1 = r0 + W;
        for (int ox = 0; ox < OW; ++ox, ++o) {
          const int cx = 2 * ox;
          T best = r0[cx];
          int arg = 0;
          if (r0[cx + 1] > best) {
            best = r0[cx + 1];
            arg = 1;
          }
          if (r1[cx] > best) {
            best = r1[cx];
            arg = W;
          }
          if (r1[cx + 1] > best) {
            best = r1[cx + 1];
            arg = W + 1;
          }
          y.data[o] = best;
          if (idx) {
            idx[o] = base + 2 * oy * W + cx + arg;
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x, Mode, LayerCache<T>* cache) const {
  const Shape out_shape = output_shape(x.shape);
  Tensor<T> y(out_shape);
  std::vector<std::int32_t> idx;
  if (cache) {
    idx.resize(out_shape.size());
  }
  if (k_ == 2 && stride_ == 2 && pad_ == 0) {
    pool2x2(x, y, cache ? idx.data() : nullptr);
    if (cache) {
      cache->indices = std::move(idx);
      cache->in_shape = x.shape;
    }
    return y;
  }
  std::size_t o = 0;
  for (int n = 0; n < x.shape.n; ++n) {
    for (int c = 0; c < x.shape.c; ++c) {
      const T* src = x.sample(n) + std::size_t(c) * x.shape.h * x.shape.w;
      const auto base = static_cast<std::int32_t>(std::size_t(c) * x.shape.h * x.shape.w);
      for (int oy = 0; oy < out_shape.h; ++oy) {
        for (int ox = 0; ox < out_shape.w; ++ox, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::int32_t arg = -1;
          for (int ky = 0; ky < k_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            for (int kx = 0; kx < k_; ++kx) {
              const int ix = ox * stride_ - pad_ + kx;
              const bool inside = iy >= 0 && iy < x.shape.h && ix >= 0 && ix < x.shape.w;
              const T v = inside ? src[std::size_t(iy) * x.shape.w + ix] : T(0);
              if (v > best) {
                best = v;
                arg = inside ? base + iy * x.shape.w + ix : -1;
              }
            }
          }
          y.data[o] = best;
          if (cache) {
            idx[o] = arg;
          }
        }
      }
    }
  }
  if (cache) {
    cache->indices = std::move(idx);
    cache->in_shape = x.shape;
  }
  return y;
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& dy, const LayerCache<T>& cache, GradStore<T>*,
                                 bool need_dx) const {
  if (!need_dx) {
    return {};
  }
  Tensor<T> dx(cache.in_shape);
  const std::size_t per_out = dy.shape.sample_size();
  for (int n = 0; n < dy.shape.n; ++n) {
    T* d = dx.sample(n);
    const T* g = dy.sample(n);
    const std::int32_t* ix = cache.indices.data() + std::size_t(n) * per_out;
    for (std::size_t i = 0; i < per_out; ++i) {
      if (ix[i] >= 0) {
        d[ix[i]] += g[i];
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- BatchNorm

template <typename T>
BatchNorm<T>::BatchNorm(int channels, double epsilon, double momentum)
    : channels_(channels), epsilon_(epsilon), momentum_(momentum) {
  this->params_.emplace_back(Shape{1, channels, 1, 1}, T(1));
  this->params_.emplace_back(Shape{1, channels, 1, 1}, T(0));
  this->param_names_ = {"gamma", "beta"};
  this->buffers_.emplace_back(Shape{1, channels, 1, 1}, T(0));
  this->buffers_.emplace_back(Shape{1, channels, 1, 1}, T(1));
  this->buffer_names_ = {"moving_mean", "moving_var"};
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x, Mode mode, LayerCache<T>* cache) const {
  const Shape& s = x.shape;
  const std::size_t plane = std::size_t(s.h) * s.w;
  const auto& gamma = this->params_[0].data;
  const auto& beta = this->params_[1].data;
  Tensor<T> y(s);
  if (mode == Mode::Infer) {
    const auto& mean = this->buffers_[0].data;
    const auto& var = this->buffers_[1].data;
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const T scale = gamma[c] / std::sqrt(var[c] + T(epsilon_));
        const T shift = beta[c] - mean[c] * scale;
        const T* src = x.sample(n) + c * plane;
        T* dst = y.sample(n) + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          dst[i] = src[i] * scale + shift;
        }
      }
    }
    if (cache) {
      cache->saved.clear();
      cache->in_shape = s;
    }
    return y;
  }
  const double count = double(s.n) * plane;
  Tensor<T> xhat(s);
  Tensor<T> stats(Shape{1, 3, 1, s.c});  // mean, biased var, inv_std
  for (int c = 0; c < s.c; ++c) {
    double sum = 0;
    for (int n = 0; n < s.n; ++n) {
      const T* src = x.sample(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum += src[i];
      }
    }
    const double mean = sum / count;
    double sq = 0;
    for (int n = 0; n < s.n; ++n) {
      const T* src = x.sample(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = src[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / count;
    const double inv_std = 1.0 / std::sqrt(var + epsilon_);
    stats.data[c] = T(mean);
    stats.data[s.c + c] = T(var);
    stats.data[2 * s.c + c] = T(inv_std);
    for (int n = 0; n < s.n; ++n) {
      const T* src = x.sample(n) + c * plane;
      T* xh = xhat.sample(n) + c * plane;
      T* dst = y.sample(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = T((src[i] - mean) * inv_std);
        dst[i] = gamma[c] * xh[i] + beta[c];
      }
    }
  }
  if (cache) {
    cache->saved = {std::move(xhat), std::move(stats)};
    cache->in_shape = s;
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(const Tensor<T>& dy, const LayerCache<T>& cache, GradStore<T>* grads,
                                 bool need_dx) const {
  const Shape& s = dy.shape;
  const std::size_t plane = std::size_t(s.h) * s.w;
  const auto& gamma = this->params_[0].data;
  auto* g = grads_of(grads, static_cast<const Layer<T>*>(this));
  Tensor<T> dx;
  if (need_dx) {
    dx = Tensor<T>(s);
  }
  if (cache.saved.empty()) {
    // Inference-mode statistics are constants.
    if (g) {
      throw std::logic_error("batchnorm: parameter gradients need a Train-mode forward");
    }
    if (!need_dx) {
      return dx;
    }
    const auto& var = this->buffers_[1].data;
    for (int c = 0; c < s.c; ++c) {
      const T scale = gamma[c] / std::sqrt(var[c] + T(epsilon_));
      for (int n = 0; n < s.n; ++n) {
        const T* d = dy.sample(n) + c * plane;
        T* o = dx.sample(n) + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          o[i] = d[i] * scale;
        }
      }
    }
    return dx;
  }
  const Tensor<T>& xhat = cache.saved[0];
  const Tensor<T>& stats = cache.saved[1];
  const double count = double(s.n) * plane;
  for (int c = 0; c < s.c; ++c) {
    double sum_dy = 0;
    double sum_dy_xhat = 0;
    for (int n = 0; n < s.n; ++n) {
      const T* d = dy.sample(n) + c * plane;
      const T* xh = xhat.sample(n) + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += d[i];
        sum_dy_xhat += double(d[i]) * xh[i];
      }
    }
    if (g) {
      (*g)[0].data[c] += T(sum_dy_xhat);
      (*g)[1].data[c] += T(sum_dy);
    }
    if (need_dx) {
      const double inv_std = stats.data[2 * s.c + c];
      const double k = gamma[c] * inv_std / count;
      for (int n = 0; n < s.n; ++n) {
        const T* d = dy.sample(n) + c * plane;
        const T* xh = xhat.sample(n) + c * plane;
        T* o = dx.sample(n) + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          o[i] = T(k * (count * d[i] - sum_dy - xh[i] * sum_dy_xhat));
        }
      }
    }
  }
  return dx;
}

template <typename T>
void BatchNorm<T>::update_buffers(const LayerCache<T>& cache) {
  if (cache.saved.size() < 2) {
    return;
  }
  const Tensor<T>& stats = cache.saved[1];
  const Shape& s = cache.in_shape;
  const double count = double(s.n) * s.h * s.w;
  const double unbias = count > 1 ? count / (count - 1) : 1.0;
  auto& mean = this->buffers_[0].data;
  auto& var = this->buffers_[1].data;
  for (int c = 0; c < channels_; ++c) {
    mean[c] = T(momentum_ * mean[c] + (1 - momentum_) * stats.data[c]);
    var[c] = T(momentum_ * var[c] + (1 - momentum_) * stats.data[s.c + c] * unbias);
  }
}

// ---------------------------------------------------------------- ScaleShift

template <typename T>
Tensor<T> ScaleShift<T>::forward(const Tensor<T>& x, Mode, LayerCache<T>*) const {
  Tensor<T> y = x;
  const T a = T(scale_);
  const T b = T(offset_);
  for (auto& v : y.data) {
    v = a * v + b;
  }
  return y;
}

template <typename T>
Tensor<T> ScaleShift<T>::backward(const Tensor<T>& dy, const LayerCache<T>&, GradStore<T>*, bool need_dx) const {
  if (!need_dx) {
    return {};
  }
  Tensor<T> dx = dy;
  for (auto& v : dx.data) {
    v *= T(scale_);
  }
  return dx;
}

// ---------------------------------------------------------------- GlobalAvgPool

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x, Mode, LayerCache<T>* cache) const {
  Tensor<T> y(output_shape(x.shape));
  const std::size_t plane = std::size_t(x.shape.h) * x.shape.w;
  for (int n = 0; n < x.shape.n; ++n) {
    for (int c = 0; c < x.shape.c; ++c) {
      const T* src = x.sample(n) + c * plane;
      double sum = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        sum += src[i];
      }
      y.at(n, c, 0, 0) = T(sum / double(plane));
    }
  }
  if (cache) {
    cache->in_shape = x.shape;
  }
  return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& dy, const LayerCache<T>& cache, GradStore<T>*,
                                     bool need_dx) const {
  if (!need_dx) {
    return {};
  }
  Tensor<T> dx(cache.in_shape);
  const std::size_t plane = std::size_t(cache.in_shape.h) * cache.in_shape.w;
  for (int n = 0; n < dx.shape.n; ++n) {
    for (int c = 0; c < dx.shape.c; ++c) {
      const T v = dy.at(n, c, 0, 0) / T(plane);
      T* dst = dx.sample(n) + c * plane;
      std::fill(dst, dst + plane, v);
    }
  }
  return dx;
}

// ---------------------------------------------------------------- Dense

template <typename T>
Dense<T>::Dense(int in_features, int out_features) : in_(in_features), out_(out_features) {
  this->params_.emplace_back(Shape{out_features, in_features, 1, 1});
  this->params_.emplace_back(Shape{1, out_features, 1, 1});
  this->param_names_ = {"weight", "bias"};
}

template <typename T>
Tensor<T> Dense<T>::forward(const Tensor<T>& x, Mode, LayerCache<T>* cache) const {
  if (int(x.shape.sample_size()) != in_) {
    throw std::invalid_argument("dense: expected " + std::to_string(in_) + " features, got " + x.shape.str());
  }
  Tensor<T> y(Shape{x.shape.n, out_, 1, 1});
  Eigen::Map<const MatR<T>> X(x.data.data(), x.shape.n, in_);
  Eigen::Map<const MatR<T>> W(this->params_[0].data.data(), out_, in_);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(this->params_[1].data.data(), out_);
  Eigen::Map<MatR<T>> Y(y.data.data(), x.shape.n, out_);
  Y.noalias() = X * W.transpose();
  Y.rowwise() += b;
  if (cache) {
    cache->saved = {x};
  }
  return y;
}

template <typename T>
Tensor<T> Dense<T>::backward(const Tensor<T>& dy, const LayerCache<T>& cache, GradStore<T>* grads,
                             bool need_dx) const {
  const Tensor<T>& x = cache.saved.at(0);
  Eigen::Map<const MatR<T>> X(x.data.data(), x.shape.n, in_);
  Eigen::Map<const MatR<T>> DY(dy.data.data(), dy.shape.n, out_);
  Eigen::Map<const MatR<T>> W(this->params_[0].data.data(), out_, in_);
  if (auto* g = grads_of(grads, static_cast<const Layer<T>*>(this))) {
    Eigen::Map<MatR<T>> dW((*g)[0].data.data(), out_, in_);
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db((*g)[1].data.data(), out_);
    dW.noalias() += DY.transpose() * X;
    db += DY.colwise().sum();
  }
  if (!need_dx) {
    return {};
  }
  Tensor<T> dx(x.shape);
  Eigen::Map<MatR<T>> DX(dx.data.data(), x.shape.n, in_);
  DX.noalias() = DY * W;
  return dx;
}

// ---------------------------------------------------------------- PreActBottleneck

template <typename T>
PreActBottleneck<T>::PreActBottleneck(int in_channels, int filters, int stride, bool conv_shortcut)
    : stride_(stride), conv_shortcut_(conv_shortcut) {
  parts_.resize(kParts);
  parts_[kPreBn] = std::make_unique<BatchNorm<T>>(in_channels);
  parts_[kPreRelu] = std::make_unique<ReLU<T>>();
  if (conv_shortcut) {
    parts_[kShortcut] = std::make_unique<Conv2d<T>>(in_channels, 4 * filters, 1, stride, 0, true);
  } else if (stride > 1) {
    parts_[kShortcut] = std::make_unique<MaxPool2d<T>>(1, stride, 0);
  } else if (in_channels != 4 * filters) {
    throw std::invalid_argument("bottleneck: identity shortcut needs in_channels == 4 * filters");
  }
  parts_[kConv1] = std::make_unique<Conv2d<T>>(in_channels, filters, 1, 1, 0, false);
  parts_[kBn1] = std::make_unique<BatchNorm<T>>(filters);
  parts_[kRelu1] = std::make_unique<ReLU<T>>();
  parts_[kConv2] = std::make_unique<Conv2d<T>>(filters, filters, 3, stride, 1, false);
  parts_[kBn2] = std::make_unique<BatchNorm<T>>(filters);
  parts_[kRelu2] = std::make_unique<ReLU<T>>();
  parts_[kConv3] = std::make_unique<Conv2d<T>>(filters, 4 * filters, 1, 1, 0, true);
}

template <typename T>
PreActBottleneck<T>::PreActBottleneck(const PreActBottleneck& other)
    : Layer<T>(other), stride_(other.stride_), conv_shortcut_(other.conv_shortcut_) {
  parts_.resize(kParts);
  for (int i = 0; i < kParts; ++i) {
    if (other.parts_[i]) {
      parts_[i] = other.parts_[i]->clone();
    }
  }
}

template <typename T>
Shape PreActBottleneck<T>::output_shape(const Shape& in) const {
  Shape s = in;
  for (int i : {kConv1, kConv2, kConv3}) {
    s = parts_[i]->output_shape(s);
  }
  return s;
}

template <typename T>
std::vector<std::pair<std::string, Layer<T>*>> PreActBottleneck<T>::children() {
  static const char* names[kParts] = {"preact_bn", "preact_relu", "shortcut", "conv1", "bn1",
                                      "relu1",     "conv2",       "bn2",      "relu2", "conv3"};
  std::vector<std::pair<std::string, Layer<T>*>> out;
  for (int i = 0; i < kParts; ++i) {
    if (parts_[i]) {
      out.emplace_back(names[i], parts_[i].get());
    }
  }
  return out;
}

template <typename T>
Tensor<T> PreActBottleneck<T>::forward(const Tensor<T>& x, Mode mode, LayerCache<T>* cache) const {
  std::vector<LayerCache<T>>* kids = nullptr;
  if (cache) {
    cache->children.assign(kParts, {});
    kids = &cache->children;
  }
  auto run = [&](int part, const Tensor<T>& in) {
    return parts_[part]->forward(in, mode, kids ? &(*kids)[part] : nullptr);
  };
  const Tensor<T> p = run(kPreRelu, run(kPreBn, x));
  Tensor<T> out;
  if (conv_shortcut_) {
    out = run(kShortcut, p);
  } else if (parts_[kShortcut]) {
    out = run(kShortcut, x);
  } else {
    out = x;
  }
  Tensor<T> h = run(kConv1, p);
  for (int part : {kBn1, kRelu1, kConv2, kBn2, kRelu2, kConv3}) {
    h = run(part, h);
  }
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] += h.data[i];
  }
  return out;
}

template <typename T>
Tensor<T> PreActBottleneck<T>::backward(const Tensor<T>& dy, const LayerCache<T>& cache, GradStore<T>* grads,
                                        bool need_dx) const {
  const auto& kids = cache.children;
  auto back = [&](int part, const Tensor<T>& d, bool dx) { return parts_[part]->backward(d, kids[part], grads, dx); };
  Tensor<T> dh = dy;
  for (int part : {kConv3, kRelu2, kBn2, kConv2, kRelu1, kBn1}) {
    dh = back(part, dh, true);
  }
  Tensor<T> dp = back(kConv1, dh, true);
  Tensor<T> dx_short;
  if (conv_shortcut_) {
    const Tensor<T> dps = back(kShortcut, dy, true);
    for (std::size_t i = 0; i < dp.data.size(); ++i) {
      dp.data[i] += dps.data[i];
    }
  } else if (parts_[kShortcut]) {
    dx_short = back(kShortcut, dy, need_dx);
  } else if (need_dx) {
    dx_short = dy;
  }
  Tensor<T> dx = back(kPreBn, back(kPreRelu, dp, true), need_dx);
  if (!need_dx) {
    return {};
  }
  if (!conv_shortcut_) {
    for (std::size_t i = 0; i < dx.data.size(); ++i) {
      dx.data[i] += dx_short.data[i];
    }
  }
  return dx;
}

template <typename T>
void PreActBottleneck<T>::update_buffers(const LayerCache<T>& cache) {
  for (int i = 0; i < kParts; ++i) {
    if (parts_[i]) {
      parts_[i]->update_buffers(cache.children[i]);
    }
  }
}

// ---------------------------------------------------------------- Network

template <typename T>
Network<T>::Network(std::vector<std::unique_ptr<Layer<T>>> layers, std::size_t feature_end, Shape input)
    : layers_(std::move(layers)), feature_end_(feature_end), input_(input) {
  input_.n = 1;
  if (feature_end_ > layers_.size()) {
    throw std::invalid_argument("network: feature_end beyond the layer list");
  }
  output_shape();  // validates the chain
}

template <typename T>
Network<T>::Network(const Network& other) : feature_end_(other.feature_end_), input_(other.input_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) {
    layers_.push_back(l->clone());
  }
}

template <typename T>
Network<T>& Network<T>::operator=(const Network& other) {
  if (this != &other) {
    Network copy(other);
    *this = std::move(copy);
  }
  return *this;
}

template <typename T>
Shape Network<T>::feature_shape() const {
  Shape s = input_;
  for (std::size_t i = 0; i < feature_end_; ++i) {
    s = layers_[i]->output_shape(s);
  }
  return s;
}

template <typename T>
Shape Network<T>::output_shape() const {
  Shape s = input_;
  for (const auto& l : layers_) {
    s = l->output_shape(s);
  }
  return s;
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& x, Mode mode, std::vector<LayerCache<T>>* tape, std::size_t begin,
                              std::size_t end) const {
  end = std::min(end, layers_.size());
  if (tape) {
    tape->assign(layers_.size(), {});
  }
  Tensor<T> h = x;
  for (std::size_t i = begin; i < end; ++i) {
    h = layers_[i]->forward(h, mode, tape ? &(*tape)[i] : nullptr);
  }
  return h;
}

template <typename T>
Tensor<T> Network<T>::backward(const Tensor<T>& dy, const std::vector<LayerCache<T>>& tape, GradStore<T>* grads,
                               bool need_dx, std::size_t begin, std::size_t end) const {
  end = std::min(end, layers_.size());
  Tensor<T> d = dy;
  for (std::size_t i = end; i-- > begin;) {
    const bool dx = i > begin || need_dx;
    d = layers_[i]->backward(d, tape[i], grads, dx);
  }
  return d;
}

template <typename T>
void Network<T>::update_buffers(const std::vector<LayerCache<T>>& tape, std::size_t begin) {
  for (std::size_t i = begin; i < layers_.size() && i < tape.size(); ++i) {
    layers_[i]->update_buffers(tape[i]);
  }
}

namespace {

template <typename T>
void collect(Layer<T>* layer, const std::string& prefix, std::vector<ParamRef<T>>& out) {
  for (std::size_t i = 0; i < layer->params().size(); ++i) {
    out.push_back({prefix + layer->param_names()[i], &layer->params()[i], layer, true});
  }
  for (std::size_t i = 0; i < layer->buffers().size(); ++i) {
    out.push_back({prefix + layer->buffer_names()[i], &layer->buffers()[i], layer, false});
  }
  for (auto& [name, child] : layer->children()) {
    collect(child, prefix + name + ".", out);
  }
}

}  // namespace

template <typename T>
std::vector<ParamRef<T>> Network<T>::parameters() {
  std::vector<ParamRef<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    collect(layers_[i].get(), std::to_string(i) + "." + layers_[i]->kind() + ".", out);
  }
  return out;
}

template <typename T>
std::vector<ConstParamRef<T>> Network<T>::parameters() const {
  std::vector<ConstParamRef<T>> out;
  for (auto& p : const_cast<Network*>(this)->parameters()) {
    out.push_back({p.name, p.tensor, p.trainable});
  }
  return out;
}

template <typename T>
GradStore<T> Network<T>::make_grad_store() {
  GradStore<T> store;
  for (auto& p : parameters()) {
    if (p.trainable) {
      store.slot(p.owner).emplace_back(p.tensor->shape);
    }
  }
  return store;
}

// ---------------------------------------------------------------- Adam

template <typename T>
void Adam<T>::step(Network<T>& net, GradStore<T>& grads) {
  ++t_;
  const double lr_t =
      lr_ * std::sqrt(1.0 - std::pow(beta2_, double(t_))) / (1.0 - std::pow(beta1_, double(t_)));
  std::unordered_map<const Layer<T>*, std::size_t> seen;
  for (auto& p : net.parameters()) {
    if (!p.trainable) {
      continue;
    }
    auto* g = grads.find(p.owner);
    if (!g) {
      continue;
    }
    const Tensor<T>& grad = (*g)[seen[p.owner]++];
    auto& [m, v] = moments_[p.tensor->data.data()];
    if (m.empty()) {
      m.assign(grad.data.size(), T(0));
      v.assign(grad.data.size(), T(0));
    }
    auto& w = p.tensor->data;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = grad.data[i];
      const double mi = beta1_ * m[i] + (1 - beta1_) * gi;
      const double vi = beta2_ * v[i] + (1 - beta2_) * gi * gi;
      m[i] = T(mi);
      v[i] = T(vi);
      w[i] = T(w[i] - lr_t * mi / (std::sqrt(vi) + epsilon_));
    }
  }
}

// ---------------------------------------------------------------- init / copy

template <typename T>
void glorot_init(Network<T>& net, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& p : net.parameters()) {
    auto& t = *p.tensor;
    const std::string& name = p.name;
    const auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends_with(".weight")) {
      const double receptive = double(t.shape.h) * t.shape.w;
      const double fan_in = t.shape.c * receptive;
      const double fan_out = t.shape.n * receptive;
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& v : t.data) {
        v = T(rng.uniform(-limit, limit));
      }
    } else if (ends_with(".gamma") || ends_with(".moving_var")) {
      std::fill(t.data.begin(), t.data.end(), T(1));
    } else {
      std::fill(t.data.begin(), t.data.end(), T(0));
    }
  }
}

template <typename To, typename From>
void copy_weights(const Network<From>& src, Network<To>& dst) {
  const auto s = src.parameters();
  auto d = dst.parameters();
  if (s.size() != d.size()) {
    throw std::invalid_argument("copy_weights: layouts differ");
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i].name != d[i].name || !(s[i].tensor->shape == d[i].tensor->shape)) {
      throw std::invalid_argument("copy_weights: mismatch at " + s[i].name);
    }
    d[i].tensor->data.assign(s[i].tensor->data.begin(), s[i].tensor->data.end());
  }
}

void retain_freed_memory() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

#define ESR_INSTANTIATE(T)                     \
  template class Layer<T>;                     \
  template class Conv2d<T>;                    \
  template class ReLU<T>;                      \
  template class ScaleShift<T>;                \
  template class MaxPool2d<T>;                 \
  template class BatchNorm<T>;                 \
  template class GlobalAvgPool<T>;             \
  template class Dense<T>;                     \
  template class PreActBottleneck<T>;          \
  template class Network<T>;                   \
  template class Adam<T>;                      \
  template void glorot_init<T>(Network<T>&, std::uint64_t);

ESR_INSTANTIATE(float)
ESR_INSTANTIATE(double)

template void copy_weights<double, float>(const Network<float>&, Network<double>&);
template void copy_weights<float, double>(const Network<double>&, Network<float>&);
template void copy_weights<float, float>(const Network<float>&, Network<float>&);
template void copy_weights<double, double>(const Network<double>&, Network<double>&);

}  // namespace esr::nn
