#include <doctest.h>

#include <cmath>
#include <functional>

#include "esr/nn.hpp"
#include "esr/rng.hpp"

using namespace esr;
using namespace esr::nn;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(s);
  for (auto& v : t.data) {
    v = rng.uniform(lo, hi);
  }
  return t;
}

// L = sum(proj * layer(x)); analytic gradients vs central differences.
void check_layer(Layer<double>& layer, Tensor<double> x, Mode mode, std::uint64_t seed, double tol = 1e-6) {
  Rng rng(seed);
  for (auto& p : layer.params()) {
    for (auto& v : p.data) {
      v = rng.uniform(-0.5, 0.5);
    }
  }
  const Shape out_shape = layer.output_shape(x.shape);
  const Tensor<double> proj = random_tensor(out_shape, rng);
  const auto loss = [&](const Tensor<double>& input) {
    const Tensor<double> y = layer.forward(input, mode, nullptr);
    double s = 0;
    for (std::size_t i = 0; i < y.data.size(); ++i) {
      s += y.data[i] * proj.data[i];
    }
    return s;
  };
  LayerCache<double> cache;
  const Tensor<double> y = layer.forward(x, mode, &cache);
  REQUIRE(y.shape == out_shape);
  GradStore<double> grads;
  for (auto& p : layer.params()) {
    grads.slot(&layer).emplace_back(p.shape);
  }
  const Tensor<double> dx = layer.backward(proj, cache, &grads, true);
  REQUIRE(dx.shape == x.shape);

  const double h = 1e-5;
  for (std::size_t i = 0; i < x.data.size(); i += 1 + x.data.size() / 40) {
    Tensor<double> xp = x, xm = x;
    xp.data[i] += h;
    xm.data[i] -= h;
    const double fd = (loss(xp) - loss(xm)) / (2 * h);
    CHECK(dx.data[i] == doctest::Approx(fd).epsilon(tol).scale(1.0));
  }
  auto& store = *grads.find(&layer);
  for (std::size_t p = 0; p < layer.params().size(); ++p) {
    auto& w = layer.params()[p].data;
    for (std::size_t i = 0; i < w.size(); i += 1 + w.size() / 20) {
      const double orig = w[i];
      w[i] = orig + h;
      const double lp = loss(x);
      w[i] = orig - h;
      const double lm = loss(x);
      w[i] = orig;
      CHECK(store[p].data[i] == doctest::Approx((lp - lm) / (2 * h)).epsilon(tol).scale(1.0));
    }
  }
}

}  // namespace

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(1);
  SUBCASE("3x3 pad 1") {
    Conv2d<double> conv(2, 3, 3, 1, 1, true);
    check_layer(conv, random_tensor({2, 2, 5, 6}, rng), Mode::Train, 11);
  }
  SUBCASE("7x7 stride 2 pad 3") {
    Conv2d<double> conv(3, 2, 7, 2, 3, true);
    check_layer(conv, random_tensor({1, 3, 9, 8}, rng), Mode::Train, 12);
  }
  SUBCASE("1x1 direct path without bias") {
    Conv2d<double> conv(4, 3, 1, 1, 0, false);
    check_layer(conv, random_tensor({2, 4, 3, 3}, rng), Mode::Train, 13);
  }
  SUBCASE("1x1 stride 2") {
    Conv2d<double> conv(2, 2, 1, 2, 0, true);
    check_layer(conv, random_tensor({1, 2, 5, 5}, rng), Mode::Train, 14);
  }
  SUBCASE("3x3 stride 2 pad 1") {
    Conv2d<double> conv(2, 2, 3, 2, 1, false);
    check_layer(conv, random_tensor({1, 2, 6, 7}, rng), Mode::Train, 15);
  }
}

TEST_CASE("conv2d forward matches a direct loop") {
  Rng rng(2);
  Conv2d<double> conv(2, 3, 3, 2, 1, true);
  for (auto& p : conv.params()) {
    for (auto& v : p.data) {
      v = rng.uniform(-1, 1);
    }
  }
  const Tensor<double> x = random_tensor({2, 2, 7, 5}, rng);
  const Tensor<double> y = conv.forward(x, Mode::Infer, nullptr);
  REQUIRE(y.shape == Shape{2, 3, 4, 3});
  for (int n = 0; n < 2; ++n) {
    for (int o = 0; o < 3; ++o) {
      for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 3; ++c) {
          double s = conv.params()[1].data[o];
          for (int i = 0; i < 2; ++i) {
            for (int ky = 0; ky < 3; ++ky) {
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = r * 2 - 1 + ky;
                const int ix = c * 2 - 1 + kx;
                if (iy >= 0 && iy < 7 && ix >= 0 && ix < 5) {
                  s += conv.params()[0].data[((o * 2 + i) * 3 + ky) * 3 + kx] * x.at(n, i, iy, ix);
                }
              }
            }
          }
          CHECK(y.at(n, o, r, c) == doctest::Approx(s).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("relu, pooling, gap and dense gradients") {
  Rng rng(3);
  ReLU<double> relu;
  check_layer(relu, random_tensor({2, 2, 4, 4}, rng), Mode::Train, 21);
  MaxPool2d<double> pool(2, 2);
  check_layer(pool, random_tensor({2, 3, 6, 6}, rng), Mode::Train, 22);
  MaxPool2d<double> padded(3, 2, 1);
  check_layer(padded, random_tensor({1, 2, 7, 6}, rng, 0.1, 1.0), Mode::Train, 23);
  GlobalAvgPool<double> gap;
  check_layer(gap, random_tensor({2, 4, 3, 5}, rng), Mode::Train, 24);
  Dense<double> dense(12, 5);
  check_layer(dense, random_tensor({3, 3, 2, 2}, rng), Mode::Train, 25);
}

TEST_CASE("max pooling with zero padding") {
  MaxPool2d<double> pool(3, 2, 1);
  Tensor<double> x(Shape{1, 1, 2, 2}, -1.0);
  const auto y = pool.forward(x, Mode::Infer, nullptr);
  REQUIRE(y.shape == Shape{1, 1, 1, 1});
  CHECK(y.data[0] == 0.0);  // padding beats the all-negative window
}

TEST_CASE("batchnorm gradients in both modes") {
  Rng rng(4);
  BatchNorm<double> bn(3);
  check_layer(bn, random_tensor({4, 3, 3, 2}, rng), Mode::Train, 31);

  BatchNorm<double> frozen(3);
  frozen.buffers()[0].data = {0.1, -0.2, 0.3};
  frozen.buffers()[1].data = {1.5, 0.5, 2.0};
  const Tensor<double> x = random_tensor({2, 3, 2, 2}, rng);
  LayerCache<double> cache;
  const auto y = frozen.forward(x, Mode::Infer, &cache);
  const auto dx = frozen.backward(Tensor<double>(y.shape, 1.0), cache, nullptr, true);
  CHECK(dx.data[0] == doctest::Approx(1.0 / std::sqrt(1.5 + 1.001e-5)));
}

TEST_CASE("batchnorm moving statistics use momentum and unbiased variance") {
  BatchNorm<double> bn(1);
  Tensor<double> x(Shape{4, 1, 1, 1});
  x.data = {1, 2, 3, 6};
  LayerCache<double> cache;
  bn.forward(x, Mode::Train, &cache);
  bn.update_buffers(cache);
  // mean 3, unbiased var 14/3
  CHECK(bn.buffers()[0].data[0] == doctest::Approx(0.01 * 3));
  CHECK(bn.buffers()[1].data[0] == doctest::Approx(0.99 + 0.01 * 14.0 / 3.0));
}

TEST_CASE("pre-activation bottleneck gradients") {
  Rng rng(5);
  SUBCASE("conv shortcut") {
    PreActBottleneck<double> block(4, 2, 1, true);
    check_layer(block, random_tensor({2, 4, 4, 4}, rng), Mode::Train, 41, 1e-5);
  }
  SUBCASE("identity shortcut") {
    PreActBottleneck<double> block(8, 2, 1, false);
    check_layer(block, random_tensor({2, 8, 3, 3}, rng), Mode::Train, 42, 1e-5);
  }
  SUBCASE("strided pooling shortcut") {
    PreActBottleneck<double> block(8, 2, 2, false);
    check_layer(block, random_tensor({2, 8, 5, 4}, rng), Mode::Train, 43, 1e-5);
  }
}

TEST_CASE("network parameters, cloning and weight copies") {
  std::vector<std::unique_ptr<Layer<float>>> layers;
  layers.push_back(std::make_unique<Conv2d<float>>(3, 4, 3, 1, 1, true));
  layers.push_back(std::make_unique<BatchNorm<float>>(4));
  layers.push_back(std::make_unique<ReLU<float>>());
  layers.push_back(std::make_unique<GlobalAvgPool<float>>());
  layers.push_back(std::make_unique<Dense<float>>(4, 5));
  Network<float> net(std::move(layers), 3, Shape{1, 3, 8, 8});
  CHECK(net.feature_shape() == Shape{1, 4, 8, 8});
  CHECK(net.output_shape() == Shape{1, 5, 1, 1});
  glorot_init(net, 7);

  const auto params = net.parameters();
  REQUIRE(params.size() == 8);
  CHECK(params[0].name == "0.conv2d.weight");
  CHECK(params[4].name == "1.batchnorm.moving_mean");
  CHECK_FALSE(params[4].trainable);
  const double limit = std::sqrt(6.0 / (3 * 9 + 4 * 9));
  for (float v : params[0].tensor->data) {
    CHECK(std::abs(v) <= limit);
  }
  for (float v : params[1].tensor->data) {
    CHECK(v == 0.0f);
  }
  for (float v : params[5].tensor->data) {
    CHECK(v == 1.0f);
  }

  Network<float> copy = net;
  copy.parameters()[0].tensor->data[0] += 1.0f;
  CHECK(net.parameters()[0].tensor->data[0] != copy.parameters()[0].tensor->data[0]);

  Network<float> again = net;
  glorot_init(again, 7);
  CHECK(again.parameters()[0].tensor->data == net.parameters()[0].tensor->data);

  Network<double> wide;
  {
    std::vector<std::unique_ptr<Layer<double>>> dl;
    dl.push_back(std::make_unique<Conv2d<double>>(3, 4, 3, 1, 1, true));
    dl.push_back(std::make_unique<BatchNorm<double>>(4));
    dl.push_back(std::make_unique<ReLU<double>>());
    dl.push_back(std::make_unique<GlobalAvgPool<double>>());
    dl.push_back(std::make_unique<Dense<double>>(4, 5));
    wide = Network<double>(std::move(dl), 3, Shape{1, 3, 8, 8});
  }
  copy_weights(net, wide);
  CHECK(double(net.parameters()[0].tensor->data[3]) == wide.parameters()[0].tensor->data[3]);
}

TEST_CASE("network split forward equals full forward") {
  std::vector<std::unique_ptr<Layer<double>>> layers;
  layers.push_back(std::make_unique<Conv2d<double>>(3, 4, 3, 1, 1, true));
  layers.push_back(std::make_unique<ReLU<double>>());
  layers.push_back(std::make_unique<GlobalAvgPool<double>>());
  layers.push_back(std::make_unique<Dense<double>>(4, 5));
  Network<double> net(std::move(layers), 2, Shape{1, 3, 6, 6});
  glorot_init(net, 3);
  Rng rng(9);
  const auto x = random_tensor({1, 3, 6, 6}, rng);
  const auto full = net.forward(x, Mode::Infer);
  const auto feats = net.forward(x, Mode::Infer, nullptr, 0, net.feature_end());
  const auto head = net.forward(feats, Mode::Infer, nullptr, net.feature_end());
  CHECK(full.data == head.data);
}

TEST_CASE("adam follows the bias-corrected update") {
  std::vector<std::unique_ptr<Layer<double>>> layers;
  layers.push_back(std::make_unique<Dense<double>>(1, 1));
  Network<double> net(std::move(layers), 0, Shape{1, 1, 1, 1});
  net.parameters()[0].tensor->data[0] = 0.5;
  auto grads = net.make_grad_store();
  Adam<double> adam(0.1);
  const Layer<double>* owner = &net.layer(0);
  double m = 0, v = 0, w = 0.5;
  for (int t = 1; t <= 3; ++t) {
    const double g = 0.2 * t;
    grads.zero();
    (*grads.find(owner))[0].data[0] = g;
    adam.step(net, grads);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double lr_t = 0.1 * std::sqrt(1 - std::pow(0.999, t)) / (1 - std::pow(0.9, t));
    w -= lr_t * m / (std::sqrt(v) + 1e-7);
    CHECK(net.parameters()[0].tensor->data[0] == doctest::Approx(w).epsilon(1e-12));
  }
  CHECK(adam.iterations() == 3);
}
