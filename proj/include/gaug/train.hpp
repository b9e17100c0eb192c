#pragma once

// Adam, CycleGAN alternating optimization, classifier training and the
// pre-train / fine-tune schedule.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gaug/csv.hpp"
#include "gaug/data.hpp"
#include "gaug/ganloss.hpp"
#include "gaug/nets.hpp"

namespace gaug {

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t t = 0;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr = 1e-3;
};

inline AdamState make_adam(const ParameterSet& params, double lr, double beta1 = 0.5) {
  AdamState s;
  s.lr = lr;
  s.beta1 = beta1;
  for (const auto& p : params) {
    s.m.emplace_back(p.value.size(), 0.0);
    s.v.emplace_back(p.value.size(), 0.0);
  }
  return s;
}

/// One bias-corrected Adam update. Gradients are validated before any
/// parameter changes, so a TrainingError leaves params and state untouched.
inline void adam_step(ParameterSet& params, std::span<const Tensor> grads, AdamState& state) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw ContractError("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].value.shape()) {
      throw DimensionError("adam_step: gradient of '" + params[i].name + "' has shape " +
                           to_string(grads[i].shape()) + ", parameter " + to_string(params[i].value.shape()));
    }
    for (double g : grads[i].data()) {
      if (!std::isfinite(g)) {
        throw TrainingError("non-finite gradient for parameter '" + params[i].name + "' at step " +
                            std::to_string(state.t + 1));
      }
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto g = grads[i].data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    std::vector<double> p = params[i].value.to_vector();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      p[j] -= state.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.eps);
    }
    params[i].value = Tensor(params[i].value.shape(), std::move(p));
  }
}

inline std::vector<Tensor> gradients_for(const Gradients& grads, std::span<const Tensor> bound) {
  std::vector<Tensor> out;
  out.reserve(bound.size());
  for (const auto& t : bound) out.push_back(grads.of(t));
  return out;
}

// ---------------------------------------------------------------------------
// Configuration and curves

struct TrainConfig {
  int steps = 20000;
  int batch_size = 1;
  double lr_g = 2e-4;
  double lr_d = 1e-4;
  double lr_classifier = 1e-3;
  double lambda_cyc = 10.0;
  double beta1 = 0.5;
  std::uint64_t seed = 0;
  int log_every = 100;

  void validate() const {
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (lr_g < 0 || lr_d < 0 || lr_classifier < 0) throw ConfigError("learning rates must be >= 0");
    if (lambda_cyc < 0) throw ConfigError("lambda_cyc must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("beta1 must be in [0, 1)");
    if (log_every < 1) throw ConfigError("log_every must be >= 1");
  }
};

struct StepLosses {
  double d_r = 0, d_t = 0, g_adv = 0, f_adv = 0, cyc = 0, total = 0;

  bool finite() const {
    return std::isfinite(d_r) && std::isfinite(d_t) && std::isfinite(g_adv) && std::isfinite(f_adv) &&
           std::isfinite(cyc) && std::isfinite(total);
  }
};

struct LossCurve {
  std::vector<int> step;
  std::vector<StepLosses> losses;

  void write_csv(const std::string& path) const {
    CsvWriter csv(path, {"step", "d_r", "d_t", "g_adv", "f_adv", "cyc", "total"});
    for (std::size_t i = 0; i < step.size(); ++i) {
      const auto& l = losses[i];
      csv.cell(step[i]).cell(l.d_r).cell(l.d_t).cell(l.g_adv).cell(l.f_adv).cell(l.cyc).cell(l.total);
      csv.end_row();
    }
    csv.close();
  }
};

struct ClassifierCurve {
  std::vector<int> step;
  std::vector<double> loss;

  void write_csv(const std::string& path) const {
    CsvWriter csv(path, {"step", "loss"});
    for (std::size_t i = 0; i < step.size(); ++i) {
      csv.cell(step[i]).cell(loss[i]);
      csv.end_row();
    }
    csv.close();
  }
};

inline bool should_log(int step, int steps, int every) { return step == 1 || step % every == 0 || step == steps; }

// ---------------------------------------------------------------------------
// CycleGAN

/// G: R -> T, F: T -> R, discriminators D_R and D_T, with their optimizers.
struct CycleGanModel {
  Network g;
  Network f;
  Network d_r;
  Network d_t;
  AdamState opt_g;
  AdamState opt_f;
  AdamState opt_d_r;
  AdamState opt_d_t;
};

inline CycleGanModel make_cyclegan(const NetworkSpec& generator, const NetworkSpec& discriminator, std::uint64_t seed,
                                   const TrainConfig& config) {
  if (generator.input_shape != generator.output_shape) throw ParameterError("generator must preserve sample shape");
  if (discriminator.input_shape != generator.input_shape || discriminator.output_shape != Shape{1}) {
    throw ParameterError("discriminator must map generator samples to one score");
  }
  CycleGanModel m;
  m.g = init_weights(generator, derive_seed(seed, "init.g"));
  m.f = init_weights(generator, derive_seed(seed, "init.f"));
  m.d_r = init_weights(discriminator, derive_seed(seed, "init.d_r"));
  m.d_t = init_weights(discriminator, derive_seed(seed, "init.d_t"));
  m.opt_g = make_adam(m.g.params, config.lr_g, config.beta1);
  m.opt_f = make_adam(m.f.params, config.lr_g, config.beta1);
  m.opt_d_r = make_adam(m.d_r.params, config.lr_d, config.beta1);
  m.opt_d_t = make_adam(m.d_t.params, config.lr_d, config.beta1);
  return m;
}

/// Tape-recorded generator objective for one minibatch pair. Discriminator
/// parameters enter as constants.
struct GeneratorPass {
  std::vector<Tensor> bound_g;
  std::vector<Tensor> bound_f;
  Tensor g_adv;
  Tensor f_adv;
  Tensor cyc;
  Tensor objective;  // g_adv + f_adv + lambda * cyc
};

inline GeneratorPass generator_pass(CycleGanModel& model, Tape& tape, const Tensor& r, const Tensor& t,
                                    double lambda_cyc) {
  GeneratorPass pass;
  pass.bound_g = bind_params(model.g.params, &tape);
  pass.bound_f = bind_params(model.f.params, &tape);
  const auto d_r = bind_params(model.d_r.params, nullptr);
  const auto d_t = bind_params(model.d_t.params, nullptr);
  const ForwardContext g_ctx{BatchNormMode::Train, &model.g.bn_stats};
  const ForwardContext f_ctx{BatchNormMode::Train, &model.f.bn_stats};
  const ForwardContext d_ctx{BatchNormMode::Train, nullptr};

  const Tensor fake_t = forward(model.g.spec, pass.bound_g, r, g_ctx);
  const Tensor rec_r = forward(model.f.spec, pass.bound_f, fake_t, f_ctx);
  const Tensor fake_r = forward(model.f.spec, pass.bound_f, t, f_ctx);
  const Tensor rec_t = forward(model.g.spec, pass.bound_g, fake_r, g_ctx);

  pass.g_adv = lsgan_g_loss(forward(model.d_t.spec, d_t, fake_t, d_ctx));
  pass.f_adv = lsgan_g_loss(forward(model.d_r.spec, d_r, fake_r, d_ctx));
  pass.cyc = cycle_loss({r, rec_r, t, rec_t});
  pass.objective = add(add(pass.g_adv, pass.f_adv), scale(pass.cyc, lambda_cyc));
  return pass;
}

/// Updates D_R and D_T on the least-squares discriminator loss with the
/// current generators' outputs held constant. Returns {loss_r, loss_t}.
inline std::pair<double, double> discriminator_update(CycleGanModel& model, const Tensor& r, const Tensor& t) {
  const Tensor fake_t = forward(model.g.spec, bind_params(model.g.params, nullptr), r, {BatchNormMode::Train, nullptr});
  const Tensor fake_r = forward(model.f.spec, bind_params(model.f.params, nullptr), t, {BatchNormMode::Train, nullptr});

  Tape tape;
  const auto d_r = bind_params(model.d_r.params, &tape);
  const auto d_t = bind_params(model.d_t.params, &tape);
  const ForwardContext r_ctx{BatchNormMode::Train, &model.d_r.bn_stats};
  const ForwardContext t_ctx{BatchNormMode::Train, &model.d_t.bn_stats};
  const Tensor loss_r = lsgan_d_loss({forward(model.d_r.spec, d_r, r, r_ctx), forward(model.d_r.spec, d_r, fake_r, r_ctx)});
  const Tensor loss_t = lsgan_d_loss({forward(model.d_t.spec, d_t, t, t_ctx), forward(model.d_t.spec, d_t, fake_t, t_ctx)});
  if (!std::isfinite(loss_r.item()) || !std::isfinite(loss_t.item())) return {loss_r.item(), loss_t.item()};

  const Gradients grads = tape.backward(add(loss_r, loss_t));
  adam_step(model.d_r.params, gradients_for(grads, d_r), model.opt_d_r);
  adam_step(model.d_t.params, gradients_for(grads, d_t), model.opt_d_t);
  return {loss_r.item(), loss_t.item()};
}

/// Alternating optimization: per step D_R, D_T, then G and F jointly on
/// both least-squares generator terms plus lambda times the cycle loss.
inline LossCurve train_cyclegan(CycleGanModel& model, const DomainPair& domains, const TrainConfig& config) {
  config.validate();
  if (domains.reference.rows == 0 || domains.target.rows == 0) throw ParameterError("train_cyclegan: empty domain");
  model.opt_g.lr = model.opt_f.lr = config.lr_g;
  model.opt_d_r.lr = model.opt_d_t.lr = config.lr_d;

  Rng rng(derive_seed(config.seed, "cyclegan.batches"));
  const auto batch = static_cast<std::size_t>(config.batch_size);
  std::vector<std::size_t> ri(batch), ti(batch);
  LossCurve curve;
  std::optional<StepLosses> last_finite;

  for (int step = 1; step <= config.steps; ++step) {
    for (auto& i : ri) i = rng.index(domains.reference.rows);
    for (auto& i : ti) i = rng.index(domains.target.rows);
    const Tensor r = domains.reference.gather(ri, domains.sample_shape);
    const Tensor t = domains.target.gather(ti, domains.sample_shape);

    StepLosses losses;
    std::tie(losses.d_r, losses.d_t) = discriminator_update(model, r, t);

    Tape tape;
    const GeneratorPass pass = generator_pass(model, tape, r, t, config.lambda_cyc);
    losses.g_adv = pass.g_adv.item();
    losses.f_adv = pass.f_adv.item();
    losses.cyc = pass.cyc.item();
    losses.total = losses.d_r + losses.d_t + config.lambda_cyc * losses.cyc;
    if (!losses.finite()) {
      std::string msg = "non-finite loss at step " + std::to_string(step);
      if (last_finite) {
        msg += " (last finite: d_r=" + format_number(last_finite->d_r) + " d_t=" + format_number(last_finite->d_t) +
               " g_adv=" + format_number(last_finite->g_adv) + " f_adv=" + format_number(last_finite->f_adv) +
               " cyc=" + format_number(last_finite->cyc) + ")";
      }
      throw TrainingError(msg);
    }
    last_finite = losses;

    const Gradients grads = tape.backward(pass.objective);
    adam_step(model.g.params, gradients_for(grads, pass.bound_g), model.opt_g);
    adam_step(model.f.params, gradients_for(grads, pass.bound_f), model.opt_f);

    if (should_log(step, config.steps, config.log_every)) {
      curve.step.push_back(step);
      curve.losses.push_back(losses);
    }
  }
  return curve;
}

/// Evaluation-mode forward pass over matrix rows in chunks.
inline Matrix apply_network(const Network& net, const Matrix& rows, const Shape& sample_shape, std::size_t chunk = 256) {
  Matrix out;
  out.cols = numel(net.spec.output_shape);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < rows.rows; start += chunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(rows.rows, start + chunk); ++i) idx.push_back(i);
    const Tensor y = infer(net, rows.gather(idx, sample_shape));
    out.values.insert(out.values.end(), y.data().begin(), y.data().end());
    out.rows += idx.size();
  }
  return out;
}

/// Applies G to `count` reference rows and labels the results `label`.
/// Rows are drawn from a seeded permutation; sampling with replacement must
/// be requested explicitly when count exceeds the pool.
inline LabeledSet generate_augmented(const CycleGanModel& model, const Matrix& reference, const Shape& sample_shape,
                                     std::size_t count, int label, int num_classes, std::uint64_t seed,
                                     bool with_replacement = false) {
  if (reference.rows == 0) throw ParameterError("generate_augmented: empty reference pool");
  if (count > reference.rows && !with_replacement) {
    throw ParameterError("generate_augmented: " + std::to_string(count) + " samples requested from a pool of " +
                         std::to_string(reference.rows) + " without replacement");
  }
  if (label < 0 || label >= num_classes) throw ParameterError("generate_augmented: label outside class range");
  Rng rng(seed);
  std::vector<std::size_t> pick(count);
  if (with_replacement) {
    for (auto& i : pick) i = rng.index(reference.rows);
  } else {
    const auto order = rng.permutation(reference.rows);
    std::copy_n(order.begin(), count, pick.begin());
  }
  Matrix chosen;
  chosen.cols = reference.cols;
  for (std::size_t i : pick) chosen.append_row(reference.row(i));

  LabeledSet out;
  out.num_classes = num_classes;
  out.sample_shape = sample_shape;
  out.features = count ? apply_network(model.g, chosen, sample_shape, 64) : Matrix(0, reference.cols);
  out.labels.assign(count, label);
  return out;
}

// ---------------------------------------------------------------------------
// Classifiers

inline void check_classifier_data(const Network& net, const LabeledSet& data) {
  check_labels(data);
  const std::size_t classes = net.spec.output_shape.at(0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (static_cast<std::size_t>(data.labels[i]) >= classes) {
      throw DataError("label " + std::to_string(data.labels[i]) + " at row " + std::to_string(i) +
                      " exceeds the classifier's " + std::to_string(classes) + " outputs");
    }
  }
  if (data.sample_shape != net.spec.input_shape) {
    throw DataError("sample shape " + to_string(data.sample_shape) + " does not match network input " +
                    to_string(net.spec.input_shape));
  }
}

/// Minimizes mean softmax cross-entropy with Adam on shuffled minibatches.
inline ClassifierCurve train_classifier(Network& net, const LabeledSet& data, const TrainConfig& config) {
  config.validate();
  check_classifier_data(net, data);
  ClassifierCurve curve;
  if (config.steps == 0) return curve;
  if (data.size() == 0) throw DataError("train_classifier: empty dataset");
  AdamState opt = make_adam(net.params, config.lr_classifier, config.beta1);
  Rng rng(derive_seed(config.seed, "classifier.batches"));
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), data.size());
  std::vector<std::size_t> order = rng.permutation(data.size());
  std::size_t cursor = 0;
  std::vector<std::size_t> idx(batch);
  std::vector<int> labels(batch);

  for (int step = 1; step <= config.steps; ++step) {
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == order.size()) {
        order = rng.permutation(data.size());
        cursor = 0;
      }
      idx[b] = order[cursor++];
      labels[b] = data.labels[idx[b]];
    }
    Tape tape;
    const auto bound = bind_params(net.params, &tape);
    const Tensor logits = forward(net.spec, bound, data.features.gather(idx, data.sample_shape),
                                  {BatchNormMode::Train, &net.bn_stats});
    const Tensor loss = softmax_cross_entropy(logits, labels);
    if (!std::isfinite(loss.item())) throw TrainingError("non-finite classifier loss at step " + std::to_string(step));
    adam_step(net.params, gradients_for(tape.backward(loss), bound), opt);
    if (should_log(step, config.steps, config.log_every)) {
      curve.step.push_back(step);
      curve.loss.push_back(loss.item());
    }
  }
  return curve;
}

inline std::vector<int> predict_classes(const Network& net, const LabeledSet& data) {
  const Matrix logits = apply_network(net, data.features, data.sample_shape, 64);
  std::vector<int> out(logits.rows);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const auto row = logits.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

/// Mean softmax cross-entropy of `net` on `data` in evaluation mode.
inline double classifier_loss(const Network& net, const LabeledSet& data) {
  const Matrix logits = apply_network(net, data.features, data.sample_shape, 64);
  return softmax_cross_entropy(Tensor({logits.rows, logits.cols}, logits.values), data.labels).item();
}

struct FinetuneSchedule {
  int pretrain_steps = 10000;
  int finetune_steps = 10000;
};

struct PretrainFinetuneResult {
  ClassifierCurve pretrain;
  ClassifierCurve finetune;
  ParameterSet after_pretrain;
};

/// Trains on generated data, then continues from those parameters on the
/// original data.
inline PretrainFinetuneResult pretrain_finetune(Network& net, const LabeledSet& generated, const LabeledSet& original,
                                                TrainConfig config, FinetuneSchedule schedule = {}) {
  if (generated.size() && original.size() &&
      (generated.features.cols != original.features.cols || generated.sample_shape != original.sample_shape)) {
    throw DataError("pretrain_finetune: generated and original samples differ in shape");
  }
  if (generated.num_classes != original.num_classes) throw DataError("pretrain_finetune: label spaces differ");
  if (schedule.pretrain_steps < 0 || schedule.finetune_steps < 0) throw ConfigError("stage lengths must be >= 0");
  PretrainFinetuneResult result;
  const std::uint64_t root = config.seed;
  if (schedule.pretrain_steps > 0) {
    config.steps = schedule.pretrain_steps;
    config.seed = derive_seed(root, "pretrain");
    result.pretrain = train_classifier(net, generated, config);
  }
  result.after_pretrain = net.params;
  config.steps = schedule.finetune_steps;
  config.seed = derive_seed(root, "finetune");
  result.finetune = train_classifier(net, original, config);
  return result;
}

}  // namespace gaug
