#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "esr/augment.hpp"
#include "esr/image.hpp"
#include "esr/nn.hpp"
#include "esr/rng.hpp"
#include "esr/taxonomy.hpp"

namespace esr {

enum class Backbone : std::uint8_t {
  Paper,  ///< pre-activation ResNet-152 v2 layout
  Desk,   ///< four conv/relu/pool blocks of 16/32/64/128 channels
};

std::string_view to_string(Backbone b);
Backbone parse_backbone(std::string_view token);

struct ModelConfig {
  Backbone backbone = Backbone::Desk;
  int num_classes = static_cast<int>(kNumClasses);
  int input_size = 256;
  std::uint64_t init_seed = 0;
  /// Bottleneck blocks per residual stack (paper backbone only).
  std::array<int, 4> resnet_blocks = {3, 8, 36, 3};

  bool operator==(const ModelConfig&) const = default;
};

/// Throws ValidationError: num_classes must be 5, input_size a positive
/// multiple of 32 (16 for desk), each stack at least 2 blocks.
void validate(const ModelConfig& config);

struct TrainConfig {
  double learning_rate = 0.001;
  int batch_size = 8;
  int epochs = 100;
  AugmentConfig augment;

  bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& config);

struct EpochStats {
  double loss = 0.0;      ///< mean categorical cross-entropy over the epoch
  double accuracy = 0.0;  ///< fraction of training samples whose argmax was right

  bool operator==(const EpochStats&) const = default;
};

struct TrainedModel {
  ModelConfig config;
  nn::Network<float> net;
  std::vector<EpochStats> history;
};

struct Prediction {
  std::array<double, kNumClasses> probabilities{};
  ClassLabel argmax_class = ClassLabel::Ia;

  double probability(ClassLabel c) const { return probabilities[index_of(c)]; }
};

struct LabeledImage {
  Image image;
  ClassLabel label = ClassLabel::Ia;
};

/// Builds the network layout for `config` without initializing weights.
template <typename T>
nn::Network<T> build_network(const ModelConfig& config);

/// Untrained model with Glorot-initialized weights drawn from init_seed.
TrainedModel build_model(const ModelConfig& config);

/// Adam on mini-batch cross-entropy. Each epoch reshuffles the sample order
/// from `rng`, keeps the last partial batch, and augments every sample with
/// a fresh transform. Throws ValidationError on an empty set or a wrongly
/// shaped image.
TrainedModel train(TrainedModel model, const std::vector<LabeledImage>& train_set, const TrainConfig& config,
                   Rng& rng);

/// Softmax over the logits, in double; argmax ties go to the earlier class.
Prediction softmax_prediction(std::span<const double> logits);

Prediction predict(const TrainedModel& model, const Image& img);

nn::Tensor<float> to_tensor(const Image& img);

/// Activations of the last feature stage and the gradient of one class logit
/// with respect to them. Both are (1, K, H', W').
template <typename T>
struct FeatureGrads {
  nn::Tensor<T> features;
  nn::Tensor<T> gradients;
};

template <typename T>
FeatureGrads<T> feature_maps_and_grads(const nn::Network<T>& net, const nn::Tensor<T>& x, ClassLabel target);

FeatureGrads<float> feature_maps_and_grads(const TrainedModel& model, const Image& img, ClassLabel target);

/// Logit of `target` computed from last-stage activations by the head alone.
template <typename T>
double class_score_from_features(const nn::Network<T>& net, const nn::Tensor<T>& features, ClassLabel target);

/// Self-describing binary container: magic, version, JSON header (config,
/// history, tensor table), then float32 little-endian tensor data.
std::vector<std::uint8_t> serialize_model(const TrainedModel& model);
TrainedModel deserialize_model(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const TrainedModel& model);
TrainedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace esr
