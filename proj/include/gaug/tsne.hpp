#pragma once

// Exact O(N^2) t-SNE and the silhouette score used to summarize how well
// an embedding separates the classes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "gaug/csv.hpp"
#include "gaug/data.hpp"

namespace gaug {

struct EmbedConfig {
  double perplexity = 30.0;
  int iterations = 1000;
  double learning_rate = 200.0;
  double momentum = 0.5;
  double final_momentum = 0.8;
  int momentum_switch = 250;
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 250;
  std::uint64_t seed = 0;
  std::size_t max_points = 2000;

  void validate(std::size_t n) const {
    if (!(perplexity > 0) || !(learning_rate > 0) || !(early_exaggeration > 0) || iterations < 1) {
      throw ConfigError("embed: perplexity, learning_rate, early_exaggeration and iterations must be positive");
    }
    if (!(3.0 * perplexity < static_cast<double>(n))) {
      throw ConfigError("embed: perplexity " + format_number(perplexity) + " too large for " + std::to_string(n) +
                        " points (needs perplexity < N/3)");
    }
  }
};

struct Embedding {
  Matrix coordinates;  // N x 2
  std::vector<int> labels;
  double initial_kl = 0.0;
  double final_kl = 0.0;
  double max_abs_coordinate = 0.0;  // over the whole run

  void write_csv(const std::string& path) const {
    CsvWriter csv(path, {"x", "y", "label"});
    for (std::size_t i = 0; i < coordinates.rows; ++i) {
      csv.cell(coordinates(i, 0)).cell(coordinates(i, 1)).cell(labels[i]);
      csv.end_row();
    }
    csv.close();
  }
};

struct Affinities {
  std::size_t n = 0;
  std::vector<double> conditional;      // row i holds p_{j|i}
  std::vector<double> joint;            // (P + P^T) / 2N
  std::vector<double> row_perplexity;   // achieved exp(H_i)
};

inline std::vector<double> squared_distances(const Matrix& x) {
  const std::size_t n = x.rows;
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < x.cols; ++c) {
        const double diff = x(i, c) - x(j, c);
        s += diff * diff;
      }
      d[i * n + j] = d[j * n + i] = s;
    }
  return d;
}

/// Gaussian conditional affinities with a per-row precision found by
/// bisection so that exp(entropy) matches the perplexity, then symmetrized.
inline Affinities conditional_affinities(const Matrix& features, double perplexity) {
  const std::size_t n = features.rows;
  if (n < 3) throw ParameterError("conditional_affinities: need at least 3 points");
  if (!(perplexity > 1.0) || !(perplexity < static_cast<double>(n - 1))) {
    throw ParameterError("conditional_affinities: perplexity must lie in (1, N-1)");
  }
  const auto dist = squared_distances(features);
  Affinities aff;
  aff.n = n;
  aff.conditional.assign(n * n, 0.0);
  aff.row_perplexity.assign(n, 0.0);
  const double target = std::log(perplexity);
  constexpr double kTolerance = 1e-9;  // on entropy in nats
  constexpr int kMaxIterations = 200;

  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* d = dist.data() + i * n;
    double d_min = std::numeric_limits<double>::infinity(), d_max = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) {
        d_min = std::min(d_min, d[j]);
        d_max = std::max(d_max, d[j]);
      }
    if (d_min == d_max) {
      // equidistant neighbours: every bandwidth gives the uniform row
      for (std::size_t j = 0; j < n; ++j) aff.conditional[i * n + j] = j == i ? 0.0 : 1.0 / static_cast<double>(n - 1);
      aff.row_perplexity[i] = static_cast<double>(n - 1);
      continue;
    }

    // entropy of row i at precision beta; distances shifted by d_min for range
    auto entropy_at = [&](double beta) {
      double z = 0.0, weighted = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) {
          row[j] = 0.0;
          continue;
        }
        const double shifted = d[j] - d_min;
        row[j] = std::exp(-beta * shifted);
        z += row[j];
        weighted += shifted * row[j];
      }
      for (double& p : row) p /= z;
      return std::log(z) + beta * weighted / z;
    };

    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double h = entropy_at(beta);
    int iter = 0;
    while (std::abs(h - target) > kTolerance) {
      if (++iter > kMaxIterations) {
        throw NumericalError("conditional_affinities: bandwidth search for row " + std::to_string(i) +
                             " did not converge");
      }
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
      h = entropy_at(beta);
    }
    aff.row_perplexity[i] = std::exp(h);
    std::copy(row.begin(), row.end(), aff.conditional.begin() + static_cast<std::ptrdiff_t>(i * n));
  }

  aff.joint.assign(n * n, 0.0);
  const double denom = 2.0 * static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) aff.joint[i * n + j] = (aff.conditional[i * n + j] + aff.conditional[j * n + i]) / denom;
  return aff;
}

/// sum p log(p / q), skipping p == 0 and flooring q at 1e-12.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DimensionError("kl_divergence: distributions differ in length");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0) kl += p[i] * std::log(p[i] / std::max(q[i], 1e-12));
  }
  return kl;
}

namespace detail {

// Student-t kernel 1 / (1 + |y_i - y_j|^2) for i < j, packed row by row;
// returns the normalizer Z = sum over ordered pairs.
inline double student_kernel(const Matrix& y, std::vector<double>& kernel) {
  const std::size_t n = y.rows;
  kernel.resize(n * (n - 1) / 2);
  double z = 0.0;
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = y(i, 0), yi = y(i, 1);
    for (std::size_t j = i + 1; j < n; ++j, ++k) {
      const double dx = xi - y(j, 0), dy = yi - y(j, 1);
      kernel[k] = 1.0 / (1.0 + dx * dx + dy * dy);
      z += kernel[k];
    }
  }
  return 2.0 * z;
}

// Full q_ij matrix (zero diagonal), for evaluating the objective.
inline std::vector<double> student_q(const Matrix& y) {
  const std::size_t n = y.rows;
  std::vector<double> kernel;
  const double z = student_kernel(y, kernel);
  std::vector<double> q(n * n, 0.0);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j, ++k) q[i * n + j] = q[j * n + i] = kernel[k] / z;
  return q;
}

}  // namespace detail

/// Gradient descent on KL(P || Q) with momentum, per-coordinate gains and
/// early exaggeration. Coordinates are re-centered every iteration.
inline Embedding tsne_run(const Matrix& features, std::span<const int> labels, const EmbedConfig& config) {
  const std::size_t n = features.rows;
  if (labels.size() != n) throw DataError("tsne_run: label count differs from row count");
  config.validate(n);
  const Affinities aff = conditional_affinities(features, config.perplexity);
  const auto& p = aff.joint;
  std::vector<double> p_upper;  // packed like the kernel
  p_upper.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) p_upper.push_back(p[i * n + j]);

  Rng rng(config.seed);
  Embedding emb;
  emb.labels.assign(labels.begin(), labels.end());
  emb.coordinates = Matrix(n, 2);
  for (double& v : emb.coordinates.values) v = rng.normal(0.0, 1e-4);
  Matrix& y = emb.coordinates;
  emb.initial_kl = kl_divergence(p, detail::student_q(y));

  std::vector<double> kernel, velocity(n * 2, 0.0), gains(n * 2, 1.0), grad(n * 2);
  for (int iter = 0; iter < config.iterations; ++iter) {
    const double exaggeration = iter < config.exaggeration_iterations ? config.early_exaggeration : 1.0;
    const double momentum = iter < config.momentum_switch ? config.momentum : config.final_momentum;
    const double inv_z = 1.0 / detail::student_kernel(y, kernel);
    std::fill(grad.begin(), grad.end(), 0.0);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = y(i, 0), yi = y(i, 1);
      double gx = 0.0, gy = 0.0;
      for (std::size_t j = i + 1; j < n; ++j, ++k) {
        const double w = 4.0 * (exaggeration * p_upper[k] - kernel[k] * inv_z) * kernel[k];
        const double fx = w * (xi - y(j, 0)), fy = w * (yi - y(j, 1));
        gx += fx;
        gy += fy;
        grad[2 * j] -= fx;
        grad[2 * j + 1] -= fy;
      }
      grad[2 * i] += gx;
      grad[2 * i + 1] += gy;
    }
    for (std::size_t c = 0; c < n * 2; ++c) {
      const bool same_sign = (grad[c] > 0) == (velocity[c] > 0);
      gains[c] = same_sign ? std::max(gains[c] * 0.8, 0.01) : gains[c] + 0.2;
      velocity[c] = momentum * velocity[c] - config.learning_rate * gains[c] * grad[c];
      y.values[c] += velocity[c];
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += y(i, 0);
      my += y(i, 1);
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      y(i, 0) -= mx;
      y(i, 1) -= my;
      emb.max_abs_coordinate = std::max({emb.max_abs_coordinate, std::abs(y(i, 0)), std::abs(y(i, 1))});
      if (!std::isfinite(y(i, 0)) || !std::isfinite(y(i, 1))) {
        throw NumericalError("tsne_run: non-finite coordinate at iteration " + std::to_string(iter));
      }
    }
  }
  emb.final_kl = kl_divergence(p, detail::student_q(y));
  return emb;
}

/// Per-sample silhouette (b - a) / max(a, b) with Euclidean distances.
/// Samples whose class has a single member score 0.
inline std::vector<double> silhouette_scores(const Matrix& points, std::span<const int> labels) {
  const std::size_t n = points.rows;
  if (labels.size() != n) throw DataError("silhouette: label count differs from row count");
  int k = 0;
  for (int l : labels) k = std::max(k, l + 1);
  std::vector<std::size_t> size(static_cast<std::size_t>(k), 0);
  for (int l : labels) ++size[static_cast<std::size_t>(l)];
  std::vector<double> out(n, 0.0), sums(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) {
    const auto own = static_cast<std::size_t>(labels[i]);
    if (size[own] < 2) continue;
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < points.cols; ++c) {
        const double d = points(i, c) - points(j, c);
        s += d * d;
      }
      sums[static_cast<std::size_t>(labels[j])] += std::sqrt(s);
    }
    const double a = sums[own] / static_cast<double>(size[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < sums.size(); ++c)
      if (c != own && size[c] > 0) b = std::min(b, sums[c] / static_cast<double>(size[c]));
    if (std::isinf(b)) continue;
    const double m = std::max(a, b);
    out[i] = m > 0 ? (b - a) / m : 0.0;
  }
  return out;
}

inline double mean_silhouette(const Matrix& points, std::span<const int> labels, int only_class = -1) {
  const auto s = silhouette_scores(points, labels);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (only_class >= 0 && labels[i] != only_class) continue;
    total += s[i];
    ++count;
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace gaug
