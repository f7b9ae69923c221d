#pragma once

#include <cstddef>
#include <algorithm>
#include <cstdint>
#include <memory>
#include <new>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace esr::nn {

/// Batch shape, NCHW.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const { return std::size_t(n) * c * h * w; }
  std::size_t sample_size() const { return std::size_t(c) * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Cache-line aligned storage. Vectorized reductions pick their starting
/// element from the buffer address, so a fixed alignment keeps results
/// bit-identical from run to run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

template <typename T>
struct Tensor {
  Shape shape;
  AlignedVector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(s), data(s.size(), fill) {}

  T* sample(int i) { return data.data() + std::size_t(i) * shape.sample_size(); }
  const T* sample(int i) const { return data.data() + std::size_t(i) * shape.sample_size(); }
  T& at(int n, int c, int h, int w) { return data[((std::size_t(n) * shape.c + c) * shape.h + h) * shape.w + w]; }
  T at(int n, int c, int h, int w) const { return data[((std::size_t(n) * shape.c + c) * shape.h + h) * shape.w + w]; }
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& src) {
  Tensor<To> out;
  out.shape = src.shape;
  out.data.assign(src.data.begin(), src.data.end());
  return out;
}

enum class Mode { Train, Infer };

/// Per-call state a layer keeps between forward and backward.
template <typename T>
struct LayerCache {
  std::vector<Tensor<T>> saved;
  std::vector<std::int32_t> indices;
  Shape in_shape;
  std::vector<LayerCache> children;
};

template <typename T>
class Layer;

/// Parameter gradients, keyed by owning layer, same order as Layer::params().
template <typename T>
class GradStore {
 public:
  std::vector<Tensor<T>>* find(const Layer<T>* layer) {
    auto it = grads_.find(layer);
    return it == grads_.end() ? nullptr : &it->second;
  }
  std::vector<Tensor<T>>& slot(const Layer<T>* layer) { return grads_[layer]; }
  void zero() {
    for (auto& [layer, tensors] : grads_) {
      for (auto& t : tensors) {
        std::fill(t.data.begin(), t.data.end(), T(0));
      }
    }
  }

 private:
  std::unordered_map<const Layer<T>*, std::vector<Tensor<T>>> grads_;
};

/// A differentiable stage. forward/backward are const so that a trained
/// network can serve concurrent inference; training state lives in the cache
/// and the GradStore.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  /// `cache` may be null when no backward pass follows.
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode, LayerCache<T>* cache) const = 0;
  /// Accumulates parameter gradients into `grads` when it is non-null;
  /// returns dL/dx when `need_dx`, else an empty tensor.
  virtual Tensor<T> backward(const Tensor<T>& dy, const LayerCache<T>& cache, GradStore<T>* grads,
                             bool need_dx) const = 0;
  /// Running statistics update after a Train-mode forward.
  virtual void update_buffers(const LayerCache<T>&) {}
  virtual std::unique_ptr<Layer<T>> clone() const = 0;

  virtual std::vector<std::pair<std::string, Layer<T>*>> children() { return {}; }
  std::vector<std::pair<std::string, const Layer<T>*>> const_children() const;

  std::vector<Tensor<T>>& params() { return params_; }
  const std::vector<Tensor<T>>& params() const { return params_; }
  std::vector<Tensor<T>>& buffers() { return buffers_; }
  const std::vector<Tensor<T>>& buffers() const { return buffers_; }
  const std::vector<std::string>& param_names() const { return param_names_; }
  const std::vector<std::string>& buffer_names() const { return buffer_names_; }

 protected:
  std::vector<Tensor<T>> params_;
  std::vector<Tensor<T>> buffers_;
  std::vector<std::string> param_names_;
  std::vector<std::string> buffer_names_;
};

/// 2-D convolution with symmetric zero padding; weight [out, in, k, k].
template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, bool bias);

  std::string kind() const override { return "conv2d"; }
  Shape output_shape(const Shape& in) const override;
  Tensor<T> forward(const Tensor<T>& x, Mode mode, LayerCache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& dy, const LayerCache<T>& cache, GradStore<T>* grads,
                     bool need_dx) const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }
  bool has_bias() const { return bias_; }

 private:
  bool direct() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }
  void im2col(const T* x, const Shape& in, const Shape& out, T* cols) const;
  void col2im(const T* cols, const Shape& in, const Shape& out, T* dx) const;

  int in_, out_, k_, stride_, pad_;
  bool bias_;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  std::string kind() const override { return "relu"; }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode, LayerCache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& dy, const LayerCache<T>& cache, GradStore<T>* grads,
                     bool need_dx) const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ReLU>(*this); }
};

/// Max pooling; padded cells hold 0 (zero-padding then pooling).
template <typename T>
class MaxPool2d final : public Layer<T> {
 public:
  MaxPool2d(int kernel, int stride, int pad = 0) : k_(kernel), stride_(stride), pad_(pad) {}

  std::string kind() const override { return "maxpool2d"; }
  Shape output_shape(const Shape& in) const override;
  Tensor<T> forward(const Tensor<T>& x, Mode mode, LayerCache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& dy, const LayerCache<T>& cache, GradStore<T>* grads,
                     bool need_dx) const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2d>(*this); }

 private:
  void pool2x2(const Tensor<T>& x, Tensor<T>& y, std::int32_t* idx) const;

  int k_, stride_, pad_;
};

/// Batch normalization over (N, H, W) per channel. Params gamma, beta;
/// buffers moving_mean, moving_var.
template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  explicit BatchNorm(int channels, double epsilon = 1.001e-5, double momentum = 0.99);

  std::string kind() const override { return "batchnorm"; }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode, LayerCache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& dy, const LayerCache<T>& cache, GradStore<T>* grads,
                     bool need_dx) const override;
  void update_buffers(const LayerCache<T>& cache) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm>(*this); }

 private:
  int channels_;
  double epsilon_, momentum_;
};

/// Fixed elementwise y = scale * x + offset; no parameters.
template <typename T>
class ScaleShift final : public Layer<T> {
 public:
  ScaleShift(double scale, double offset) : scale_(scale), offset_(offset) {}

  std::string kind() const override { return "scale_shift"; }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode, LayerCache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& dy, const LayerCache<T>& cache, GradStore<T>* grads,
                     bool need_dx) const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ScaleShift>(*this); }

 private:
  double scale_, offset_;
};

/// (N, C, H, W) -> (N, C, 1, 1).
template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  std::string kind() const override { return "global_avg_pool"; }
  Shape output_shape(const Shape& in) const override { return {in.n, in.c, 1, 1}; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode, LayerCache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& dy, const LayerCache<T>& cache, GradStore<T>* grads,
                     bool need_dx) const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
};

/// Affine map on the flattened sample; weight [out, in].
template <typename T>
class Dense final : public Layer<T> {
 public:
  Dense(int in_features, int out_features);

  std::string kind() const override { return "dense"; }
  Shape output_shape(const Shape& in) const override { return {in.n, out_, 1, 1}; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode, LayerCache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& dy, const LayerCache<T>& cache, GradStore<T>* grads,
                     bool need_dx) const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dense>(*this); }

 private:
  int in_, out_;
};

/// Pre-activation bottleneck block (ResNet v2):
///   p = relu(bn(x))
///   shortcut = conv1x1(p, stride) | maxpool1x1(x, stride) | x
///   h = conv1x1 -> bn -> relu -> conv3x3(stride) -> bn -> relu -> conv1x1(4f)
///   out = shortcut + h
template <typename T>
class PreActBottleneck final : public Layer<T> {
 public:
  PreActBottleneck(int in_channels, int filters, int stride, bool conv_shortcut);
  PreActBottleneck(const PreActBottleneck& other);

  std::string kind() const override { return "preact_bottleneck"; }
  Shape output_shape(const Shape& in) const override;
  Tensor<T> forward(const Tensor<T>& x, Mode mode, LayerCache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& dy, const LayerCache<T>& cache, GradStore<T>* grads,
                     bool need_dx) const override;
  void update_buffers(const LayerCache<T>& cache) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<PreActBottleneck>(*this); }
  std::vector<std::pair<std::string, Layer<T>*>> children() override;

 private:
  // Order of the children in the cache.
  enum Part { kPreBn, kPreRelu, kShortcut, kConv1, kBn1, kRelu1, kConv2, kBn2, kRelu2, kConv3, kParts };

  int stride_;
  bool conv_shortcut_;
  std::vector<std::unique_ptr<Layer<T>>> parts_;  // kShortcut is a Conv2d, MaxPool2d or null
};

/// A named parameter or buffer tensor inside a network.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor = nullptr;
  const Layer<T>* owner = nullptr;
  bool trainable = true;
};

template <typename T>
struct ConstParamRef {
  std::string name;
  const Tensor<T>* tensor = nullptr;
  bool trainable = true;
};

/// A sequence of layers split into a feature extractor, layers
/// [0, feature_end), and a head producing class scores (logits).
template <typename T>
class Network {
 public:
  Network() = default;
  Network(std::vector<std::unique_ptr<Layer<T>>> layers, std::size_t feature_end, Shape input);
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  std::size_t size() const { return layers_.size(); }
  std::size_t feature_end() const { return feature_end_; }
  /// Per-sample input shape (n = 1).
  const Shape& input_shape() const { return input_; }
  Shape feature_shape() const;
  Shape output_shape() const;
  const Layer<T>& layer(std::size_t i) const { return *layers_[i]; }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }

  /// Runs layers [begin, end). With a tape, one cache per layer is recorded.
  Tensor<T> forward(const Tensor<T>& x, Mode mode, std::vector<LayerCache<T>>* tape = nullptr,
                    std::size_t begin = 0, std::size_t end = SIZE_MAX) const;
  /// Reverse of forward over the same range with the tape it recorded.
  Tensor<T> backward(const Tensor<T>& dy, const std::vector<LayerCache<T>>& tape, GradStore<T>* grads,
                     bool need_dx, std::size_t begin = 0, std::size_t end = SIZE_MAX) const;
  void update_buffers(const std::vector<LayerCache<T>>& tape, std::size_t begin = 0);

  /// Parameters then buffers of each layer, depth first, in a stable order.
  std::vector<ParamRef<T>> parameters();
  std::vector<ConstParamRef<T>> parameters() const;
  /// Zero-filled gradient slots for every trainable tensor.
  GradStore<T> make_grad_store();

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::size_t feature_end_ = 0;
  Shape input_;
};

/// Adam with bias correction folded into the step size.
template <typename T>
class Adam {
 public:
  Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-7)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  void step(Network<T>& net, GradStore<T>& grads);
  std::int64_t iterations() const { return t_; }

 private:
  double lr_, beta1_, beta2_, epsilon_;
  std::int64_t t_ = 0;
  std::unordered_map<const T*, std::pair<std::vector<T>, std::vector<T>>> moments_;
};

/// Glorot-uniform weights, zero biases, unit BN scale; deterministic in seed.
template <typename T>
void glorot_init(Network<T>& net, std::uint64_t seed);

/// Copies parameters and buffers between two networks of identical layout.
template <typename To, typename From>
void copy_weights(const Network<From>& src, Network<To>& dst);

/// Keeps large activation buffers on the heap between training steps instead
/// of returning them to the OS after every batch (glibc only; no-op elsewhere).
void retain_freed_memory();

}  // namespace esr::nn
