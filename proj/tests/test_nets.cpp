#include <gtest/gtest.h>

#include <cmath>

#include "gaug/gradcheck.hpp"
#include "gaug/nets.hpp"
#include "test_util.hpp"

using namespace gaug;
using gaug::testing::random_tensor;

namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

ParameterSet with_all(const ParameterSet& params, double value) {
  ParameterSet out = params;
  for (auto& p : out) p.value = Tensor::filled(p.value.shape(), value);
  return out;
}

// Forward + backward through a whole network; returns false on any non-finite value.
bool finite_forward_backward(Network& net, const Tensor& x) {
  Tape tape;
  const auto bound = bind_params(net.params, &tape);
  const Tensor y = forward(net.spec, bound, x, {BatchNormMode::Train, &net.bn_stats});
  const Tensor loss = mean(square(y));
  if (!std::isfinite(loss.item())) return false;
  const Gradients g = tape.backward(loss);
  for (const auto& p : bound) {
    if (!all_finite(g.of(p).data())) return false;
  }
  return true;
}

}  // namespace

TEST(CnnClassifier, ShapeChain) {
  const NetworkSpec spec = build_cnn_classifier();
  EXPECT_EQ(spec.input_shape, (Shape{48, 48, 1}));
  EXPECT_EQ(spec.output_shape, (Shape{7}));
  const auto chain = shape_chain(spec);
  EXPECT_EQ(chain[2], (Shape{24, 24, 64}));
  EXPECT_EQ(chain[4], (Shape{12, 12, 128}));
  EXPECT_EQ(chain[5], (Shape{12 * 12 * 128}));
  EXPECT_EQ(chain[5][0], 18432u);
  EXPECT_EQ(chain[6], (Shape{256}));
  EXPECT_EQ(chain[7], (Shape{256}));
}

TEST(CnnClassifier, ForwardGivesSevenLogitsAndSoftmaxNormalizes) {
  Network net = init_weights(build_cnn_classifier(), 1);
  Rng rng(2);
  const Tensor x = random_tensor({2, 48, 48, 1}, rng);
  const Tensor logits = forward(net.spec, bind_params(net.params, nullptr), x, {BatchNormMode::Train, nullptr});
  EXPECT_EQ(logits.shape(), (Shape{2, 7}));
  const auto p = softmax_rows(logits);
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 7; ++j) s += p[r * 7 + j];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(CycleGanGenerator, ShapesAndParameterCount) {
  const NetworkSpec spec = build_cyclegan_generator();
  EXPECT_EQ(spec.output_shape, (Shape{48, 48, 1}));
  const auto chain = shape_chain(spec);
  EXPECT_EQ(chain[1], (Shape{48, 48, 64}));
  EXPECT_EQ(chain[2], (Shape{24, 24, 128}));
  EXPECT_EQ(chain[3], (Shape{12, 12, 256}));
  EXPECT_EQ(chain[9], (Shape{12, 12, 256}));
  EXPECT_EQ(chain[10], (Shape{24, 24, 128}));
  EXPECT_EQ(chain[11], (Shape{48, 48, 64}));
  EXPECT_EQ(chain[12], (Shape{48, 48, 1}));

  // layer arithmetic: weights + bias (+ 2C for batch norm)
  auto conv = [](std::size_t k, std::size_t cin, std::size_t cout, bool bn) {
    return k * k * cin * cout + cout + (bn ? 2 * cout : 0);
  };
  const std::size_t expected = conv(7, 1, 64, true) + conv(3, 64, 128, true) + conv(3, 128, 256, true) +
                               6 * 2 * conv(3, 256, 256, true) + conv(3, 256, 128, true) + conv(3, 128, 64, true) +
                               conv(7, 64, 1, false);
  EXPECT_EQ(expected, 7832577u);
  EXPECT_EQ(parameter_count(init_weights(spec, 1).params), expected);
  EXPECT_EQ(parameter_count(init_weights(build_cyclegan_generator(), 99).params), expected);
}

TEST(CycleGanGenerator, ForwardOutputShapeAndFiniteGradients) {
  Network net = init_weights(build_cyclegan_generator(), 3);
  Rng rng(4);
  const Tensor x = random_tensor({1, 48, 48, 1}, rng);
  EXPECT_EQ(forward(net.spec, bind_params(net.params, nullptr), x).shape(), (Shape{1, 48, 48, 1}));
  EXPECT_TRUE(finite_forward_backward(net, x));
}

TEST(ResidualBlock, ZeroConvsActAsIdentity) {
  NetworkSpec spec;
  spec.name = "res";
  spec.input_shape = {6, 6, 4};
  spec.output_shape = {6, 6, 4};
  spec.layers = {{LayerKind::ResidualBlock, 3, 4, 1, Padding::zero(1), true, Activation::Relu}};
  Network net = init_weights(spec, 5);
  for (auto& p : net.params) {
    if (p.name.find("weight") != std::string::npos) p.value = Tensor::zeros(p.value.shape());
  }
  Rng rng(6);
  const Tensor x = random_tensor({2, 6, 6, 4}, rng);
  const Tensor y = forward(net.spec, bind_params(net.params, nullptr), x);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(y.to_vector(), x.to_vector());
}

TEST(CycleGanDiscriminator, SpatialChainAndScalarOutput) {
  const NetworkSpec spec = build_cyclegan_discriminator();
  const auto chain = shape_chain(spec);
  EXPECT_EQ(chain[1], (Shape{24, 24, 64}));
  EXPECT_EQ(chain[2], (Shape{12, 12, 128}));
  EXPECT_EQ(chain[3], (Shape{6, 6, 256}));
  EXPECT_EQ(chain[4], (Shape{3, 3, 512}));
  EXPECT_EQ(chain[5], (Shape{3, 3, 1}));
  EXPECT_EQ(spec.output_shape, (Shape{1}));

  Network net = init_weights(spec, 7);
  Rng rng(8);
  const Tensor x = random_tensor({2, 48, 48, 1}, rng);
  EXPECT_EQ(forward(net.spec, bind_params(net.params, nullptr), x).shape(), (Shape{2, 1}));
  EXPECT_TRUE(finite_forward_backward(net, x));
}

TEST(CycleGanDiscriminator, ZeroParametersGiveFinalBias) {
  Network net = init_weights(build_cyclegan_discriminator(), 9);
  net.params = with_all(net.params, 0.0);
  net.params.back().value = Tensor({1}, {0.7});  // final conv bias
  Rng rng(10);
  const Tensor y = forward(net.spec, bind_params(net.params, nullptr), random_tensor({3, 48, 48, 1}, rng));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.7);
}

TEST(ToyNetworks, GeneratorShapeZeroAndGradientFlow) {
  const NetworkSpec spec = build_toy_generator();
  EXPECT_EQ(spec.layers[0].channels, 64);
  Network net = init_weights(spec, 11);
  Rng rng(12);
  const Tensor x = random_tensor({5, 2}, rng, -3, 3);
  EXPECT_EQ(forward(net.spec, bind_params(net.params, nullptr), x).shape(), (Shape{5, 2}));

  const Tensor zero_out = forward(net.spec, bind_params(with_all(net.params, 0.0), nullptr), x);
  for (double v : zero_out.data()) EXPECT_EQ(v, 0.0);

  Tape tape;
  const auto bound = bind_params(net.params, &tape);
  const Gradients g = tape.backward(sum(forward(net.spec, bound, x)));
  double norm = 0.0;
  for (double v : g.of(bound[0]).to_vector()) norm += v * v;
  EXPECT_GT(norm, 0.0);
  EXPECT_THROW(build_toy_generator(0), ParameterError);
}

TEST(ToyNetworks, DiscriminatorRawUnboundedScore) {
  const NetworkSpec spec = build_toy_discriminator(8);
  Network net = init_weights(spec, 13);
  const Tensor x({1, 2}, {1.0, 2.0});
  EXPECT_EQ(forward(net.spec, bind_params(net.params, nullptr), x).shape(), (Shape{1, 1}));
  const Tensor big = forward(net.spec, bind_params(with_all(net.params, 3.0), nullptr), x);
  EXPECT_GT(big.item(), 1.0);
}

TEST(ToyNetworks, DiscriminatorGradientCheck) {
  Network net = init_weights(build_toy_discriminator(8), 14, 0.5);
  Rng rng(15);
  const Tensor x = random_tensor({4, 2}, rng, -2, 2);
  for (std::size_t which = 0; which < net.params.size(); ++which) {
    auto f = [&](const Tensor& p) {
      auto bound = bind_params(net.params, nullptr);
      bound[which] = p;
      return mean(square(forward(net.spec, bound, x)));
    };
    EXPECT_LT(grad_check(f, net.params[which].value, 1e-6), 1e-4) << net.params[which].name;
  }
}

TEST(InitWeights, DeterministicAndDistributed) {
  const NetworkSpec spec = build_cyclegan_generator();
  const Network a = init_weights(spec, 21);
  const Network b = init_weights(spec, 21);
  ASSERT_EQ(a.params.size(), b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    EXPECT_EQ(a.params[i].value.to_vector(), b.params[i].value.to_vector());
  }
  const Network c = init_weights(spec, 22);
  EXPECT_NE(a.params[0].value.to_vector(), c.params[0].value.to_vector());

  std::vector<double> draws;
  for (const auto& p : a.params) {
    if (p.name.find("weight") == std::string::npos) continue;
    for (double v : p.value.data()) {
      draws.push_back(v);
      if (draws.size() == 100000) break;
    }
    if (draws.size() == 100000) break;
  }
  ASSERT_EQ(draws.size(), 100000u);
  double m = 0, v = 0;
  for (double d : draws) m += d;
  m /= draws.size();
  for (double d : draws) v += (d - m) * (d - m);
  const double sd = std::sqrt(v / (draws.size() - 1));
  EXPECT_NEAR(sd, 0.02, 0.05 * 0.02);

  for (const auto& p : a.params) {
    if (p.name.ends_with("bias") || p.name.ends_with("beta")) {
      for (double x : p.value.data()) EXPECT_EQ(x, 0.0);
    }
    if (p.name.ends_with("gamma")) {
      for (double x : p.value.data()) EXPECT_EQ(x, 1.0);
    }
  }
}

TEST(NetworkSpec, DeclaredOutputMatchesForward) {
  Rng rng(30);
  for (const NetworkSpec& spec : {build_toy_generator(), build_toy_discriminator(), build_mlp_classifier(2, 3),
                                  build_cnn_classifier({48, 8}), build_cyclegan_generator({48, 8}),
                                  build_cyclegan_discriminator({48, 8}), build_cyclegan_generator({16, 4}, 2)}) {
    Network net = init_weights(spec, 31);
    Shape in{2};
    in.insert(in.end(), spec.input_shape.begin(), spec.input_shape.end());
    const Tensor y = forward(spec, bind_params(net.params, nullptr), random_tensor(in, rng));
    Shape expected{2};
    expected.insert(expected.end(), spec.output_shape.begin(), spec.output_shape.end());
    EXPECT_EQ(y.shape(), expected) << spec.name;
  }
}

TEST(NetworkSpec, JsonRoundTrip) {
  for (const NetworkSpec& spec : {build_cnn_classifier(), build_cyclegan_generator(), build_cyclegan_discriminator(),
                                  build_toy_generator(32)}) {
    const nlohmann::json j = spec;
    const NetworkSpec back = nlohmann::json::parse(j.dump()).get<NetworkSpec>();
    EXPECT_EQ(back, spec);
  }
}

TEST(NetworkSpec, InconsistentChainIsRejected) {
  NetworkSpec spec = build_toy_generator();
  spec.output_shape = {3};
  EXPECT_THROW(validate(spec), DimensionError);
  nlohmann::json j = build_toy_generator();
  j["output_shape"] = {5};
  EXPECT_THROW(j.get<NetworkSpec>(), DimensionError);
}

TEST(Forward, RejectsWrongInputShape) {
  Network net = init_weights(build_toy_generator(), 1);
  EXPECT_THROW(forward(net.spec, bind_params(net.params, nullptr), Tensor::zeros({3, 5})), DimensionError);
}
