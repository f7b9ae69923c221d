#include "esr/classifier.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "esr/error.hpp"
#include "esr/io.hpp"
#include "esr/json_io.hpp"

namespace esr {

namespace {

constexpr char kMagic[8] = {'E', 'S', 'R', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void add_stack(std::vector<std::unique_ptr<nn::Layer<T>>>& layers, int in_channels, int filters, int blocks,
               int stride) {
  layers.push_back(std::make_unique<nn::PreActBottleneck<T>>(in_channels, filters, 1, true));
  for (int b = 1; b < blocks - 1; ++b) {
    layers.push_back(std::make_unique<nn::PreActBottleneck<T>>(4 * filters, filters, 1, false));
  }
  layers.push_back(std::make_unique<nn::PreActBottleneck<T>>(4 * filters, filters, stride, false));
}

void check_image(const Image& img, int size) {
  if (img.channels != 3 || img.height != size || img.width != size) {
    throw ValidationError("image of wrong shape: expected 3x" + std::to_string(size) + "x" + std::to_string(size) +
                          ", got " + std::to_string(img.channels) + "x" + std::to_string(img.height) + "x" +
                          std::to_string(img.width));
  }
}

}  // namespace

std::string_view to_string(Backbone b) { return b == Backbone::Paper ? "paper" : "desk"; }

Backbone parse_backbone(std::string_view token) {
  if (token == "paper") {
    return Backbone::Paper;
  }
  if (token == "desk") {
    return Backbone::Desk;
  }
  throw ValidationError("unsupported backbone: " + std::string(token));
}

void validate(const ModelConfig& config) {
  if (config.backbone != Backbone::Paper && config.backbone != Backbone::Desk) {
    throw ValidationError("unsupported backbone");
  }
  if (config.num_classes != static_cast<int>(kNumClasses)) {
    throw ValidationError("num_classes must be 5");
  }
  const int granule = config.backbone == Backbone::Paper ? 32 : 16;
  if (config.input_size <= 0 || config.input_size % granule != 0) {
    throw ValidationError("input_size must be a positive multiple of " + std::to_string(granule));
  }
  if (config.backbone == Backbone::Paper) {
    for (int b : config.resnet_blocks) {
      if (b < 2) {
        throw ValidationError("each residual stack needs at least 2 blocks");
      }
    }
  }
}

void validate(const TrainConfig& config) {
  if (!(config.learning_rate > 0.0)) {
    throw ValidationError("learning_rate must be positive");
  }
  if (config.batch_size < 1) {
    throw ValidationError("batch_size must be >= 1");
  }
  if (config.epochs < 0) {
    throw ValidationError("epochs must be >= 0");
  }
  validate(config.augment);
}

template <typename T>
nn::Network<T> build_network(const ModelConfig& config) {
  validate(config);
  std::vector<std::unique_ptr<nn::Layer<T>>> layers;
  // [0, 1] pixels to [-1, 1], as Keras ResNet-V2 preprocessing does.
  layers.push_back(std::make_unique<nn::ScaleShift<T>>(2.0, -1.0));
  int channels = 0;
  if (config.backbone == Backbone::Desk) {
    int in = 3;
    for (int out : {16, 32, 64, 128}) {
      layers.push_back(std::make_unique<nn::Conv2d<T>>(in, out, 3, 1, 1, true));
      layers.push_back(std::make_unique<nn::ReLU<T>>());
      layers.push_back(std::make_unique<nn::MaxPool2d<T>>(2, 2));
      in = out;
    }
    channels = in;
  } else {
    layers.push_back(std::make_unique<nn::Conv2d<T>>(3, 64, 7, 2, 3, true));
    layers.push_back(std::make_unique<nn::MaxPool2d<T>>(3, 2, 1));
    const auto& b = config.resnet_blocks;
    add_stack(layers, 64, 64, b[0], 2);
    add_stack(layers, 256, 128, b[1], 2);
    add_stack(layers, 512, 256, b[2], 2);
    add_stack(layers, 1024, 512, b[3], 1);
    layers.push_back(std::make_unique<nn::BatchNorm<T>>(2048));
    layers.push_back(std::make_unique<nn::ReLU<T>>());
    channels = 2048;
  }
  const std::size_t feature_end = layers.size();
  layers.push_back(std::make_unique<nn::GlobalAvgPool<T>>());
  layers.push_back(std::make_unique<nn::Dense<T>>(channels, config.num_classes));
  return nn::Network<T>(std::move(layers), feature_end, nn::Shape{1, 3, config.input_size, config.input_size});
}

template nn::Network<float> build_network<float>(const ModelConfig&);
template nn::Network<double> build_network<double>(const ModelConfig&);

TrainedModel build_model(const ModelConfig& config) {
  TrainedModel model;
  model.config = config;
  model.net = build_network<float>(config);
  nn::glorot_init(model.net, config.init_seed);
  return model;
}

nn::Tensor<float> to_tensor(const Image& img) {
  nn::Tensor<float> t(nn::Shape{1, img.channels, img.height, img.width});
  std::copy(img.data.begin(), img.data.end(), t.data.begin());
  return t;
}

Prediction softmax_prediction(std::span<const double> logits) {
  if (logits.size() != kNumClasses) {
    throw std::invalid_argument("softmax_prediction: expected 5 logits");
  }
  Prediction p;
  std::size_t best = 0;
  for (std::size_t i = 1; i < kNumClasses; ++i) {
    if (logits[i] > logits[best]) {
      best = i;
    }
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    p.probabilities[i] = std::exp(logits[i] - logits[best]);
    sum += p.probabilities[i];
  }
  for (auto& v : p.probabilities) {
    v /= sum;
  }
  p.argmax_class = kAllClasses[best];
  return p;
}

TrainedModel train(TrainedModel model, const std::vector<LabeledImage>& train_set, const TrainConfig& config,
                   Rng& rng) {
  validate(config);
  if (train_set.empty()) {
    throw ValidationError("empty training set");
  }
  const int size = model.config.input_size;
  for (const auto& s : train_set) {
    check_image(s.image, size);
  }
  nn::retain_freed_memory();
  const bool augment = !(config.augment == AugmentConfig::none());
  nn::Adam<float> optimizer(config.learning_rate);
  nn::GradStore<float> grads = model.net.make_grad_store();
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<nn::LayerCache<float>> tape;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + std::size_t(config.batch_size));
      const int batch = static_cast<int>(end - start);
      nn::Tensor<float> x(nn::Shape{batch, 3, size, size});
      for (int b = 0; b < batch; ++b) {
        const LabeledImage& sample = train_set[order[start + b]];
        const SampledTransform t = sample_transform(rng, config.augment);
        const Image& src = sample.image;
        if (augment) {
          const Image aug = apply(t, src);
          std::copy(aug.data.begin(), aug.data.end(), x.sample(b));
        } else {
          std::copy(src.data.begin(), src.data.end(), x.sample(b));
        }
      }
      const nn::Tensor<float> logits = model.net.forward(x, nn::Mode::Train, &tape);
      nn::Tensor<float> dlogits(logits.shape);
      for (int b = 0; b < batch; ++b) {
        std::array<double, kNumClasses> z{};
        for (std::size_t k = 0; k < kNumClasses; ++k) {
          z[k] = logits.sample(b)[k];
        }
        const Prediction p = softmax_prediction(z);
        const std::size_t truth = index_of(train_set[order[start + b]].label);
        loss_sum += -std::log(std::max(p.probabilities[truth], 1e-300));
        if (index_of(p.argmax_class) == truth) {
          ++correct;
        }
        for (std::size_t k = 0; k < kNumClasses; ++k) {
          dlogits.sample(b)[k] = static_cast<float>((p.probabilities[k] - (k == truth ? 1.0 : 0.0)) / batch);
        }
      }
      grads.zero();
      model.net.backward(dlogits, tape, &grads, false);
      optimizer.step(model.net, grads);
      model.net.update_buffers(tape);
    }
    model.history.push_back(
        {loss_sum / double(train_set.size()), double(correct) / double(train_set.size())});
  }
  return model;
}

Prediction predict(const TrainedModel& model, const Image& img) {
  check_image(img, model.config.input_size);
  const nn::Tensor<float> logits = model.net.forward(to_tensor(img), nn::Mode::Infer);
  std::array<double, kNumClasses> z{};
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    z[k] = logits.data[k];
  }
  return softmax_prediction(z);
}

template <typename T>
FeatureGrads<T> feature_maps_and_grads(const nn::Network<T>& net, const nn::Tensor<T>& x, ClassLabel target) {
  const std::size_t cls = index_of(target);
  if (cls >= kNumClasses) {
    throw ValidationError("invalid class");
  }
  if (x.shape.n != 1) {
    throw std::invalid_argument("feature_maps_and_grads: expects a single sample");
  }
  FeatureGrads<T> out;
  out.features = net.forward(x, nn::Mode::Infer, nullptr, 0, net.feature_end());
  std::vector<nn::LayerCache<T>> tape;
  const nn::Tensor<T> logits = net.forward(out.features, nn::Mode::Infer, &tape, net.feature_end());
  nn::Tensor<T> seed(logits.shape);
  seed.data[cls] = T(1);
  out.gradients = net.backward(seed, tape, nullptr, true, net.feature_end());
  return out;
}

template FeatureGrads<float> feature_maps_and_grads<float>(const nn::Network<float>&, const nn::Tensor<float>&,
                                                           ClassLabel);
template FeatureGrads<double> feature_maps_and_grads<double>(const nn::Network<double>&, const nn::Tensor<double>&,
                                                             ClassLabel);

FeatureGrads<float> feature_maps_and_grads(const TrainedModel& model, const Image& img, ClassLabel target) {
  check_image(img, model.config.input_size);
  return feature_maps_and_grads(model.net, to_tensor(img), target);
}

template <typename T>
double class_score_from_features(const nn::Network<T>& net, const nn::Tensor<T>& features, ClassLabel target) {
  const nn::Tensor<T> logits = net.forward(features, nn::Mode::Infer, nullptr, net.feature_end());
  return static_cast<double>(logits.data.at(index_of(target)));
}

template double class_score_from_features<float>(const nn::Network<float>&, const nn::Tensor<float>&, ClassLabel);
template double class_score_from_features<double>(const nn::Network<double>&, const nn::Tensor<double>&, ClassLabel);

// ---------------------------------------------------------------- checkpoints

std::vector<std::uint8_t> serialize_model(const TrainedModel& model) {
  nlohmann::ordered_json header;
  header["config"] = to_json(model.config);
  header["history"] = to_json(model.history);
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  std::size_t total = 0;
  for (const auto& p : model.net.parameters()) {
    const auto& s = p.tensor->shape;
    tensors.push_back({{"name", p.name},
                       {"shape", {s.n, s.c, s.h, s.w}},
                       {"kind", p.trainable ? "param" : "buffer"}});
    total += p.tensor->data.size();
  }
  header["tensors"] = tensors;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(sizeof(kMagic) + 12 + text.size() + total * sizeof(float));
  const auto put = [&](const void* data, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(data);
    out.insert(out.end(), b, b + n);
  };
  put(kMagic, sizeof(kMagic));
  put(&kCheckpointVersion, sizeof(kCheckpointVersion));
  const std::uint64_t header_len = text.size();
  put(&header_len, sizeof(header_len));
  put(text.data(), text.size());
  for (const auto& p : model.net.parameters()) {
    put(p.tensor->data.data(), p.tensor->data.size() * sizeof(float));
  }
  return out;
}

TrainedModel deserialize_model(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  const auto take = [&](void* dst, std::size_t n) {
    if (bytes.size() - pos < n) {
      throw ValidationError("checkpoint truncated");
    }
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  };
  char magic[sizeof(kMagic)];
  take(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ValidationError("not a checkpoint file");
  }
  std::uint32_t version = 0;
  take(&version, sizeof(version));
  if (version != kCheckpointVersion) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  }
  std::uint64_t header_len = 0;
  take(&header_len, sizeof(header_len));
  if (header_len > bytes.size() - pos) {
    throw ValidationError("checkpoint truncated");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + pos, bytes.begin() + pos + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint header: ") + e.what());
  }
  pos += header_len;

  TrainedModel model;
  model.config = model_config_from_json(header.at("config"));
  model.history = history_from_json(header.at("history"));
  model.net = build_network<float>(model.config);
  auto params = model.net.parameters();
  const auto& table = header.at("tensors");
  if (table.size() != params.size()) {
    throw ValidationError("checkpoint tensor table does not match the model layout");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = table[i];
    const auto& s = params[i].tensor->shape;
    const std::vector<int> expected = {s.n, s.c, s.h, s.w};
    if (entry.at("name").get<std::string>() != params[i].name ||
        entry.at("shape").get<std::vector<int>>() != expected) {
      throw ValidationError("checkpoint tensor mismatch at " + params[i].name);
    }
    take(params[i].tensor->data.data(), params[i].tensor->data.size() * sizeof(float));
  }
  if (pos != bytes.size()) {
    throw ValidationError("checkpoint has trailing bytes");
  }
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const TrainedModel& model) {
  write_file_atomic(path, serialize_model(model));
}

TrainedModel load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ValidationError("checkpoint not found: " + path.string());
  }
  const auto bytes = read_file(path);
  return deserialize_model(bytes);
}

}  // namespace esr
