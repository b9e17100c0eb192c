#include <gtest/gtest.h>

#include <cmath>

#include "gaug/train.hpp"
#include "test_util.hpp"

using namespace gaug;
using gaug::testing::random_tensor;

namespace {

ParameterSet single(Tensor value) { return {{"w", std::move(value)}}; }

TrainConfig toy_config(int steps, std::uint64_t seed = 1) {
  TrainConfig c;
  c.steps = steps;
  c.batch_size = 16;
  c.lr_g = 1e-3;
  c.lr_d = 1e-4;
  c.seed = seed;
  c.log_every = 50;
  return c;
}

DomainPair toy_domains(std::uint64_t seed = 1) { return split_domains(sample_gaussians({}, seed).train, 0, 2); }

CycleGanModel toy_model(const TrainConfig& c) {
  return make_cyclegan(build_toy_generator(), build_toy_discriminator(), c.seed, c);
}

double mean_of(const Matrix& m) {
  double s = 0;
  for (double v : m.values) s += v;
  return s / static_cast<double>(m.values.size());
}

// E[D_T(target)] - E[D_T(G(reference))]
double score_gap(const CycleGanModel& model, const DomainPair& d) {
  const Matrix fake = apply_network(model.g, d.reference, d.sample_shape);
  return mean_of(apply_network(model.d_t, d.target, d.sample_shape)) -
         mean_of(apply_network(model.d_t, fake, d.sample_shape));
}

bool same_params(const ParameterSet& a, const ParameterSet& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].value.to_vector() != b[i].value.to_vector()) return false;
  return true;
}

LabeledSet separable_points(std::size_t n, std::uint64_t seed) {
  GaussianSpec spec;
  spec.means = {{-3.0, 0.0}, {3.0, 0.0}};
  spec.covariance = {0.5, 0.0, 0.0, 0.5};
  spec.train_counts = {n / 2, n / 2};
  spec.test_counts = {1, 1};
  return sample_gaussians(spec, seed).train;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParameters) {
  auto params = single(Tensor({3}, {0.5, -1.0, 2.0}));
  auto state = make_adam(params, 0.1);
  const std::vector<Tensor> g{Tensor::zeros({3})};
  for (int i = 0; i < 5; ++i) adam_step(params, g, state);
  EXPECT_EQ(params[0].value.to_vector(), (std::vector<double>{0.5, -1.0, 2.0}));
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  auto params = single(Tensor({3}, {0.0, 0.0, 0.0}));
  auto state = make_adam(params, 1e-3);
  const std::vector<Tensor> g{Tensor({3}, {2.0, -0.3, 1e-2})};
  adam_step(params, g, state);
  // bias-corrected m/sqrt(v) = g/|g| on the first step
  EXPECT_NEAR(params[0].value.data()[0], -1e-3, 1e-9);
  EXPECT_NEAR(params[0].value.data()[1], 1e-3, 1e-9);
  EXPECT_NEAR(params[0].value.data()[2], -1e-3, 1e-8);
  EXPECT_EQ(state.beta1, 0.5);
  EXPECT_EQ(state.t, 1);
}

TEST(Adam, ZeroLearningRateIsNoOp) {
  Rng rng(1);
  auto params = single(random_tensor({4}, rng));
  const auto before = params[0].value.to_vector();
  auto state = make_adam(params, 0.0);
  for (int i = 0; i < 50; ++i) {
    const std::vector<Tensor> g{random_tensor({4}, rng)};
    adam_step(params, g, state);
  }
  EXPECT_EQ(params[0].value.to_vector(), before);
}

TEST(Adam, NonFiniteGradientIsRejectedBeforeUpdate) {
  auto params = single(Tensor({2}, {1.0, 2.0}));
  auto state = make_adam(params, 0.1);
  const std::vector<Tensor> g{Tensor({2}, {0.5, std::nan("")})};
  try {
    adam_step(params, g, state);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("'w'"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos);
  }
  EXPECT_EQ(params[0].value.to_vector(), (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(state.t, 0);
  const std::vector<Tensor> wrong{Tensor::zeros({3})};
  EXPECT_THROW(adam_step(params, wrong, state), DimensionError);
}

TEST(CycleGan, ZeroStepsIsNoOp) {
  const auto c = toy_config(0);
  auto model = toy_model(c);
  const auto g = model.g.params;
  const auto curve = train_cyclegan(model, toy_domains(), c);
  EXPECT_TRUE(curve.step.empty());
  EXPECT_TRUE(same_params(g, model.g.params));
}

TEST(CycleGan, ShortToyRunIsFiniteAndCycleLossFalls) {
  const auto c = toy_config(200);
  auto model = toy_model(c);
  const auto curve = train_cyclegan(model, toy_domains(), c);
  ASSERT_EQ(curve.step.front(), 1);
  ASSERT_EQ(curve.step.back(), 200);
  EXPECT_EQ(curve.step.size(), 5u);  // 1, 50, 100, 150, 200
  for (const auto& l : curve.losses) {
    EXPECT_TRUE(l.finite());
    EXPECT_DOUBLE_EQ(l.total, l.d_r + l.d_t + c.lambda_cyc * l.cyc);
  }
  EXPECT_LT(curve.losses.back().cyc, curve.losses.front().cyc);
}

TEST(CycleGan, ConstantDiscriminatorAndNoCycleTermGiveZeroGeneratorGradient) {
  const auto c = toy_config(1);
  auto model = toy_model(c);
  for (auto* d : {&model.d_r, &model.d_t}) {
    for (auto& p : d->params) p.value = Tensor::zeros(p.value.shape());
    d->params.back().value = Tensor({1}, {1.0});
  }
  Rng rng(3);
  Tape tape;
  const auto pass = generator_pass(model, tape, random_tensor({4, 2}, rng, 0, 6), random_tensor({4, 2}, rng, 0, 4), 0.0);
  EXPECT_EQ(pass.g_adv.item(), 0.0);
  EXPECT_EQ(pass.f_adv.item(), 0.0);
  const Gradients g = tape.backward(pass.objective);
  for (const auto& t : pass.bound_g)
    for (double v : g.of(t).to_vector()) EXPECT_EQ(v, 0.0);
  for (const auto& t : pass.bound_f)
    for (double v : g.of(t).to_vector()) EXPECT_EQ(v, 0.0);
}

TEST(CycleGan, DiscriminatorUpdateLeavesGeneratorsAlone) {
  const auto c = toy_config(1);
  auto model = toy_model(c);
  const auto g = model.g.params, f = model.f.params, dr = model.d_r.params, dt = model.d_t.params;
  Rng rng(4);
  discriminator_update(model, random_tensor({8, 2}, rng, 0, 6), random_tensor({8, 2}, rng, 0, 4));
  EXPECT_TRUE(same_params(g, model.g.params));
  EXPECT_TRUE(same_params(f, model.f.params));
  EXPECT_FALSE(same_params(dr, model.d_r.params));
  EXPECT_FALSE(same_params(dt, model.d_t.params));

  // and the generator objective's gradients do not reach discriminator parameters
  const auto dr2 = model.d_r.params;
  Tape tape;
  const auto pass = generator_pass(model, tape, random_tensor({8, 2}, rng), random_tensor({8, 2}, rng), 10.0);
  const Gradients grads = tape.backward(pass.objective);
  adam_step(model.g.params, gradients_for(grads, pass.bound_g), model.opt_g);
  EXPECT_TRUE(same_params(dr2, model.d_r.params));
  EXPECT_FALSE(same_params(g, model.g.params));
}

TEST(CycleGan, DeterministicPerSeed) {
  const auto c = toy_config(120, 9);
  auto a = toy_model(c), b = toy_model(c);
  const auto ca = train_cyclegan(a, toy_domains(), c);
  const auto cb = train_cyclegan(b, toy_domains(), c);
  ASSERT_EQ(ca.losses.size(), cb.losses.size());
  for (std::size_t i = 0; i < ca.losses.size(); ++i) {
    EXPECT_EQ(ca.losses[i].total, cb.losses[i].total);
    EXPECT_EQ(ca.losses[i].g_adv, cb.losses[i].g_adv);
  }
  EXPECT_TRUE(same_params(a.g.params, b.g.params));
}

TEST(CycleGan, ScoreGapShrinksOverTraining) {
  // at initialization D scores everything near zero, so "early" is taken
  // once D has first learned to separate (a few hundred steps in)
  const auto domains = toy_domains(2);
  auto c = toy_config(500, 2);
  auto model = toy_model(c);
  train_cyclegan(model, domains, c);
  const double early = score_gap(model, domains);
  c.steps = 5500;
  c.seed = 3;
  train_cyclegan(model, domains, c);
  const double late = score_gap(model, domains);
  EXPECT_LT(std::abs(late), std::abs(early));
}

TEST(CycleGan, RejectsBadConfiguration) {
  auto c = toy_config(10);
  auto model = toy_model(c);
  c.batch_size = 0;
  EXPECT_THROW(train_cyclegan(model, toy_domains(), c), ConfigError);
  c = toy_config(10);
  c.lambda_cyc = -1;
  EXPECT_THROW(train_cyclegan(model, toy_domains(), c), ConfigError);
  EXPECT_THROW(make_cyclegan(build_toy_generator(), build_mlp("d", 2, 8, 2), 1, c), ParameterError);
}

TEST(GenerateAugmented, CountsLabelsAndReplacement) {
  const auto c = toy_config(1);
  auto model = toy_model(c);
  const auto domains = toy_domains();
  const auto gen = generate_augmented(model, domains.reference, {2}, 900, 2, 3, 11);
  EXPECT_EQ(gen.size(), 900u);
  EXPECT_EQ(gen.features.rows, 900u);
  EXPECT_EQ(gen.labels, std::vector<int>(900, 2));
  EXPECT_EQ(generate_augmented(model, domains.reference, {2}, 0, 2, 3, 11).size(), 0u);
  EXPECT_THROW(generate_augmented(model, domains.reference, {2}, 1100, 2, 3, 11), ParameterError);
  EXPECT_EQ(generate_augmented(model, domains.reference, {2}, 1100, 2, 3, 11, true).size(), 1100u);
  EXPECT_THROW(generate_augmented(model, Matrix(0, 2), {2}, 1, 2, 3, 11), ParameterError);
  EXPECT_EQ(generate_augmented(model, domains.reference, {2}, 50, 2, 3, 11).features.values,
            generate_augmented(model, domains.reference, {2}, 50, 2, 3, 11).features.values);
}

TEST(GenerateAugmented, OutputsAreGeneratorImages) {
  const auto c = toy_config(1);
  auto model = toy_model(c);
  Matrix pool(1, 2, {1.5, -0.5});
  const auto gen = generate_augmented(model, pool, {2}, 1, 0, 3, 1);
  const Tensor direct = infer(model.g, Tensor({1, 2}, {1.5, -0.5}));
  EXPECT_EQ(gen.features.values, direct.to_vector());
}

TEST(Classifier, LossDecreasesOnSeparablePoints) {
  Network net = init_weights(build_mlp_classifier(2, 2, 16), 1);
  const auto data = separable_points(100, 2);
  TrainConfig c;
  c.steps = 500;
  c.batch_size = 16;
  c.log_every = 100;
  const double before = classifier_loss(net, data);
  const auto curve = train_classifier(net, data, c);
  EXPECT_EQ(curve.step.back(), 500);
  EXPECT_LT(classifier_loss(net, data), before);
}

TEST(Classifier, MemorizesSingleExample) {
  Network net = init_weights(build_mlp_classifier(2, 3, 16), 2);
  LabeledSet one;
  one.num_classes = 3;
  one.sample_shape = {2};
  one.features = Matrix(1, 2, {0.3, -0.7});
  one.labels = {1};
  TrainConfig c;
  c.steps = 2000;
  c.lr_classifier = 1e-2;
  train_classifier(net, one, c);
  EXPECT_LT(classifier_loss(net, one), 1e-3);
}

TEST(Classifier, UntrainedCnnIsNearUniform) {
  Network net = init_weights(build_cnn_classifier({48, 8}), 3);
  Rng rng(4);
  const Tensor x = random_tensor({2, 48, 48, 1}, rng);
  const auto p = softmax_rows(infer(net, x));
  for (double v : p) EXPECT_NEAR(v, 1.0 / 7.0, 0.02);
}

TEST(Classifier, DataContracts) {
  Network net = init_weights(build_mlp_classifier(2, 2, 4), 1);
  auto data = separable_points(10, 1);
  data.num_classes = 3;
  data.labels[0] = 2;
  TrainConfig c;
  c.steps = 5;
  EXPECT_THROW(train_classifier(net, data, c), DataError);
  data = separable_points(10, 1);
  data.sample_shape = {3};
  EXPECT_THROW(train_classifier(net, data, c), DataError);
}

TEST(PretrainFinetune, StagesAndDegenerateCase) {
  const auto original = separable_points(40, 5);
  auto generated = separable_points(40, 6);
  TrainConfig c;
  c.batch_size = 8;
  c.seed = 12;

  Network net = init_weights(build_mlp_classifier(2, 2, 8), 7);
  const auto result = pretrain_finetune(net, generated, original, c, {30, 30});
  EXPECT_EQ(result.pretrain.step.back(), 30);
  EXPECT_EQ(result.finetune.step.back(), 30);
  EXPECT_FALSE(same_params(result.after_pretrain, net.params));

  // no pretraining == plain training with the fine-tune stage seed
  Network a = init_weights(build_mlp_classifier(2, 2, 8), 7);
  Network b = init_weights(build_mlp_classifier(2, 2, 8), 7);
  pretrain_finetune(a, generated, original, c, {0, 25});
  TrainConfig plain = c;
  plain.steps = 25;
  plain.seed = derive_seed(c.seed, "finetune");
  train_classifier(b, original, plain);
  EXPECT_TRUE(same_params(a.params, b.params));

  EXPECT_EQ(FinetuneSchedule{}.pretrain_steps, 10000);
  EXPECT_EQ(FinetuneSchedule{}.finetune_steps, 10000);
  generated.num_classes = 3;
  EXPECT_THROW(pretrain_finetune(net, generated, original, c, {1, 1}), DataError);
}
