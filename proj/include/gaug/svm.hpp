#pragma once

// Linear one-vs-rest SVM trained by Pegasos-style stochastic subgradient
// descent, plus confusion-matrix evaluation.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "gaug/csv.hpp"
#include "gaug/data.hpp"
#include "json.hpp"

namespace gaug {

struct LinearSvmModel {
  Matrix weights;               // K x D, in standardized feature space
  std::vector<double> biases;   // K
  double reg_lambda = 1e-3;
  std::vector<double> feature_mean;
  std::vector<double> feature_scale;
  std::vector<bool> trained_class;  // classes present in the training data
  double training_accuracy = 0.0;
  std::vector<double> epoch_objective;  // sum over classes of the primal objective

  std::size_t num_classes() const { return biases.size(); }
};

struct SvmOptions {
  double reg_lambda = 1e-3;
  int epochs = 20;
  std::uint64_t seed = 0;
};

/// (x - mean) / scale per feature.
inline Matrix standardize(const LinearSvmModel& model, const Matrix& features) {
  if (features.cols != model.feature_mean.size()) {
    throw DataError("svm: feature dimension " + std::to_string(features.cols) + " does not match model dimension " +
                    std::to_string(model.feature_mean.size()));
  }
  Matrix out = features;
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c) out(r, c) = (out(r, c) - model.feature_mean[c]) / model.feature_scale[c];
  return out;
}

/// Raw class scores w_k . z + b_k on standardized features z (N x K).
inline Matrix svm_scores(const LinearSvmModel& model, const Matrix& features) {
  const Matrix z = standardize(model, features);
  const std::size_t k = model.num_classes();
  Matrix scores(z.rows, k);
  for (std::size_t r = 0; r < z.rows; ++r)
    for (std::size_t c = 0; c < k; ++c) {
      double s = model.biases[c];
      for (std::size_t d = 0; d < z.cols; ++d) s += model.weights(c, d) * z(r, d);
      scores(r, c) = s;
    }
  return scores;
}

/// Argmax over trained classes; ties go to the lowest class index.
inline std::vector<int> svm_predict(const LinearSvmModel& model, const Matrix& features) {
  const Matrix scores = svm_scores(model, features);
  std::vector<int> out(scores.rows, 0);
  for (std::size_t r = 0; r < scores.rows; ++r) {
    double best = -std::numeric_limits<double>::infinity();
    int best_c = -1;
    for (std::size_t c = 0; c < scores.cols; ++c) {
      if (!model.trained_class.empty() && !model.trained_class[c]) continue;
      if (best_c < 0 || scores(r, c) > best) {
        best = scores(r, c);
        best_c = static_cast<int>(c);
      }
    }
    out[r] = std::max(best_c, 0);
  }
  return out;
}

namespace detail {

// lambda/2 |w|^2 + mean hinge, summed over the K binary problems.
inline double svm_objective(const Matrix& w, std::span<const double> b, const Matrix& z, std::span<const int> labels,
                            double lambda) {
  double total = 0.0;
  for (std::size_t c = 0; c < w.rows; ++c) {
    double norm = b[c] * b[c];
    for (std::size_t d = 0; d < w.cols; ++d) norm += w(c, d) * w(c, d);
    double hinge = 0.0;
    for (std::size_t r = 0; r < z.rows; ++r) {
      const double y = labels[r] == static_cast<int>(c) ? 1.0 : -1.0;
      double s = b[c];
      for (std::size_t d = 0; d < z.cols; ++d) s += w(c, d) * z(r, d);
      hinge += std::max(0.0, 1.0 - y * s);
    }
    total += 0.5 * lambda * norm + hinge / static_cast<double>(z.rows);
  }
  return total;
}

}  // namespace detail

/// One-vs-rest hinge loss with L2 regularization, minimized by stochastic
/// subgradient steps of size 1/(lambda t). The bias is an extra weight on a
/// constant feature and is regularized with the rest. Features are
/// standardized with statistics fitted here and stored in the model.
inline LinearSvmModel svm_train(const LabeledSet& data, const SvmOptions& opts = {}) {
  check_labels(data);
  if (!(opts.reg_lambda > 0)) throw ParameterError("svm_train: reg_lambda must be > 0");
  if (opts.epochs < 1) throw ParameterError("svm_train: epochs must be >= 1");
  const auto hist = class_histogram(data);
  if (std::count_if(hist.begin(), hist.end(), [](std::size_t n) { return n > 0; }) < 2) {
    throw DataError("svm_train: need at least two classes in the training data");
  }
  const std::size_t n = data.size(), dim = data.features.cols, k = static_cast<std::size_t>(data.num_classes);

  LinearSvmModel model;
  model.reg_lambda = opts.reg_lambda;
  model.feature_mean.assign(dim, 0.0);
  model.feature_scale.assign(dim, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t d = 0; d < dim; ++d) model.feature_mean[d] += data.features(r, d);
  for (double& m : model.feature_mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = data.features(r, d) - model.feature_mean[d];
      model.feature_scale[d] += diff * diff;
    }
  for (double& s : model.feature_scale) {
    s = std::sqrt(s / static_cast<double>(n));
    if (s == 0.0) s = 1.0;
  }
  model.trained_class.resize(k);
  for (std::size_t c = 0; c < k; ++c) model.trained_class[c] = hist[c] > 0;

  const Matrix z = standardize(model, data.features);
  model.weights = Matrix(k, dim);
  model.biases.assign(k, 0.0);
  Rng rng(opts.seed);
  const double lambda = opts.reg_lambda;
  std::int64_t t = 0;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    for (std::size_t r : rng.permutation(n)) {
      ++t;
      const double eta = 1.0 / (lambda * static_cast<double>(t));
      const double shrink = 1.0 - eta * lambda;
      for (std::size_t c = 0; c < k; ++c) {
        const double y = data.labels[r] == static_cast<int>(c) ? 1.0 : -1.0;
        double s = model.biases[c];
        for (std::size_t d = 0; d < dim; ++d) s += model.weights(c, d) * z(r, d);
        for (std::size_t d = 0; d < dim; ++d) model.weights(c, d) *= shrink;
        model.biases[c] *= shrink;
        if (y * s < 1.0) {
          for (std::size_t d = 0; d < dim; ++d) model.weights(c, d) += eta * y * z(r, d);
          model.biases[c] += eta * y;
        }
      }
    }
    model.epoch_objective.push_back(detail::svm_objective(model.weights, model.biases, z, data.labels, lambda));
  }

  const auto pred = svm_predict(model, data.features);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < n; ++r) hits += pred[r] == data.labels[r];
  model.training_accuracy = static_cast<double>(hits) / static_cast<double>(n);
  return model;
}

// ---------------------------------------------------------------------------
// Evaluation

struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::size_t> counts;  // row = true class, column = predicted

  std::size_t at(std::size_t truth, std::size_t pred) const { return counts[truth * classes + pred]; }

  std::size_t total() const {
    std::size_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
};

struct AccuracyReport {
  ConfusionMatrix confusion;
  std::vector<std::optional<double>> per_class;  // empty optional: class absent from the evaluation set
  double overall = 0.0;
};

/// Per-class accuracy is diagonal / row sum; overall is trace / total.
inline AccuracyReport accuracy_from_confusion(const ConfusionMatrix& confusion) {
  AccuracyReport rep;
  rep.confusion = confusion;
  const std::size_t k = confusion.classes;
  std::size_t diag = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t row = 0;
    for (std::size_t p = 0; p < k; ++p) row += confusion.at(c, p);
    diag += confusion.at(c, c);
    if (row) {
      rep.per_class.emplace_back(static_cast<double>(confusion.at(c, c)) / static_cast<double>(row));
    } else {
      rep.per_class.emplace_back(std::nullopt);
    }
  }
  const std::size_t total = confusion.total();
  rep.overall = total ? static_cast<double>(diag) / static_cast<double>(total) : 0.0;
  return rep;
}

inline AccuracyReport evaluate(std::span<const int> predictions, std::span<const int> truth, int num_classes) {
  if (predictions.size() != truth.size()) {
    throw DataError("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                    std::to_string(truth.size()) + " labels");
  }
  const auto k = static_cast<std::size_t>(num_classes);
  ConfusionMatrix confusion;
  confusion.classes = k;
  confusion.counts.assign(k * k, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes || predictions[i] < 0 || predictions[i] >= num_classes) {
      throw DataError("evaluate: label out of range at position " + std::to_string(i));
    }
    ++confusion.counts[static_cast<std::size_t>(truth[i]) * k + static_cast<std::size_t>(predictions[i])];
  }
  return accuracy_from_confusion(confusion);
}

/// Header `true,pred_0,...,pred_{K-1}`, one row per true class.
inline void write_confusion_csv(const ConfusionMatrix& confusion, const std::string& path) {
  std::vector<std::string> header{"true"};
  for (std::size_t c = 0; c < confusion.classes; ++c) header.push_back("pred_" + std::to_string(c));
  CsvWriter csv(path, header);
  for (std::size_t t = 0; t < confusion.classes; ++t) {
    csv.cell(t);
    for (std::size_t p = 0; p < confusion.classes; ++p) csv.cell(confusion.at(t, p));
    csv.end_row();
  }
  csv.close();
}

inline ConfusionMatrix read_confusion_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  std::getline(in, line);
  ConfusionMatrix confusion;
  confusion.classes = split_fields(line).size() - 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != confusion.classes + 1) throw DataError(path + ": ragged confusion matrix row");
    for (std::size_t i = 1; i < fields.size(); ++i) {
      confusion.counts.push_back(static_cast<std::size_t>(std::stoull(std::string(fields[i]))));
    }
  }
  if (confusion.counts.size() != confusion.classes * confusion.classes) throw DataError(path + ": not square");
  return confusion;
}

/// {"overall": x, "per_class": {name: x or null}}.
inline nlohmann::json accuracy_json(const AccuracyReport& rep, const std::vector<std::string>& class_names = {}) {
  nlohmann::json per_class = nlohmann::json::object();
  for (std::size_t c = 0; c < rep.per_class.size(); ++c) {
    const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
    per_class[name] = rep.per_class[c] ? nlohmann::json(*rep.per_class[c]) : nlohmann::json(nullptr);
  }
  return {{"overall", rep.overall}, {"per_class", per_class}};
}

}  // namespace gaug
