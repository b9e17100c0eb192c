#pragma once

// Datasets: the three-Gaussian toy problem, class-domain splitting for
// CycleGAN, augmentation merging, and 48x48 image CSV ingestion.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gaug/csv.hpp"
#include "gaug/error.hpp"
#include "gaug/rng.hpp"
#include "gaug/tensor.hpp"

namespace gaug {

/// Row-major real matrix. Unlike Tensor it may have zero rows.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {
    if (values.size() != r * c) throw DimensionError("matrix storage does not match its extents");
  }

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

  void append_row(std::span<const double> row) {
    if (rows == 0 && cols == 0) cols = row.size();
    if (row.size() != cols) throw DimensionError("append_row: row width mismatch");
    values.insert(values.end(), row.begin(), row.end());
    ++rows;
  }

  /// Selected rows as a batch tensor [n, sample_shape...].
  Tensor gather(std::span<const std::size_t> idx, const Shape& sample_shape) const {
    std::vector<double> out;
    out.reserve(idx.size() * cols);
    for (std::size_t i : idx) out.insert(out.end(), values.begin() + i * cols, values.begin() + (i + 1) * cols);
    Shape shape{idx.size()};
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    return Tensor(std::move(shape), std::move(out));
  }
};

struct LabeledSet {
  Matrix features;
  std::vector<int> labels;
  int num_classes = 0;
  Shape sample_shape;  // per-row shape, e.g. {48, 48, 1}; numel == features.cols

  std::size_t size() const { return labels.size(); }
};

/// Unpaired samples of the reference class R and the target class T.
struct DomainPair {
  Matrix reference;
  Matrix target;
  int reference_label = 0;
  int target_label = 0;
  Shape sample_shape;
};

inline void check_labels(const LabeledSet& data) {
  if (data.features.rows != data.labels.size()) throw DataError("feature rows and label count differ");
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    if (data.labels[i] < 0 || data.labels[i] >= data.num_classes) {
      throw DataError("label " + std::to_string(data.labels[i]) + " at row " + std::to_string(i) + " outside [0, " +
                      std::to_string(data.num_classes) + ")");
    }
  }
}

inline std::vector<std::size_t> class_histogram(const LabeledSet& data) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(0, data.num_classes)), 0);
  for (int label : data.labels) ++counts.at(static_cast<std::size_t>(label));
  return counts;
}

// ---------------------------------------------------------------------------
// Toy Gaussians

struct GaussianSpec {
  std::vector<std::array<double, 2>> means{{0.0, 6.0}, {6.5, 7.0}, {2.0, 2.0}};
  std::array<double, 4> covariance{2.0, 1.0, 1.0, 2.0};  // row-major 2x2
  std::vector<std::size_t> train_counts{1000, 1000, 100};
  std::vector<std::size_t> test_counts{100, 100, 100};
};

struct TrainTestSplit {
  LabeledSet train;
  LabeledSet test;
};

/// Lower Cholesky factor {l00, l10, l11}; throws unless symmetric positive definite.
inline std::array<double, 3> cholesky2(const std::array<double, 4>& c) {
  if (c[1] != c[2]) throw ParameterError("covariance must be symmetric");
  if (!(c[0] > 0)) throw ParameterError("covariance is not positive definite");
  const double l00 = std::sqrt(c[0]);
  const double l10 = c[2] / l00;
  const double rest = c[3] - l10 * l10;
  if (!(rest > 0)) throw ParameterError("covariance is not positive definite");
  return {l00, l10, std::sqrt(rest)};
}

inline TrainTestSplit sample_gaussians(const GaussianSpec& spec, std::uint64_t seed) {
  const std::size_t k = spec.means.size();
  if (k == 0 || spec.train_counts.size() != k || spec.test_counts.size() != k) {
    throw ParameterError("gaussian spec: means and per-class counts must have equal length");
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (spec.train_counts[i] == 0 || spec.test_counts[i] == 0) throw ParameterError("gaussian spec: counts must be positive");
  }
  const auto l = cholesky2(spec.covariance);
  Rng rng(seed);
  auto draw = [&](const std::vector<std::size_t>& counts) {
    LabeledSet set;
    set.num_classes = static_cast<int>(k);
    set.sample_shape = {2};
    set.features.cols = 2;
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < counts[c]; ++i) {
        const double z0 = rng.normal();
        const double z1 = rng.normal();
        const double row[2] = {spec.means[c][0] + l[0] * z0, spec.means[c][1] + l[1] * z0 + l[2] * z1};
        set.features.append_row(row);
        set.labels.push_back(static_cast<int>(c));
      }
    }
    return set;
  };
  TrainTestSplit out;
  out.train = draw(spec.train_counts);
  out.test = draw(spec.test_counts);
  return out;
}

// ---------------------------------------------------------------------------
// Splitting and merging

inline DomainPair split_domains(const LabeledSet& data, int reference_label, int target_label) {
  if (reference_label == target_label) throw DataError("reference and target class must differ");
  DomainPair pair;
  pair.reference_label = reference_label;
  pair.target_label = target_label;
  pair.sample_shape = data.sample_shape;
  pair.reference.cols = pair.target.cols = data.features.cols;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] == reference_label) pair.reference.append_row(data.features.row(i));
    if (data.labels[i] == target_label) pair.target.append_row(data.features.row(i));
  }
  if (pair.reference.rows == 0) throw DataError("class " + std::to_string(reference_label) + " absent from data");
  if (pair.target.rows == 0) throw DataError("class " + std::to_string(target_label) + " absent from data");
  return pair;
}

inline LabeledSet merge_augmented(const LabeledSet& original, const LabeledSet& generated) {
  if (generated.size() == 0) return original;
  if (original.features.cols != generated.features.cols) {
    throw DataError("merge: feature dimension " + std::to_string(original.features.cols) + " vs " +
                    std::to_string(generated.features.cols));
  }
  if (original.num_classes != generated.num_classes) throw DataError("merge: class counts differ");
  LabeledSet out = original;
  out.features.values.insert(out.features.values.end(), generated.features.values.begin(),
                             generated.features.values.end());
  out.features.rows += generated.features.rows;
  out.labels.insert(out.labels.end(), generated.labels.begin(), generated.labels.end());
  return out;
}

/// Row subset in the given order.
inline LabeledSet select_rows(const LabeledSet& data, std::span<const std::size_t> rows) {
  LabeledSet out;
  out.num_classes = data.num_classes;
  out.sample_shape = data.sample_shape;
  out.features.cols = data.features.cols;
  for (std::size_t r : rows) {
    out.features.append_row(data.features.row(r));
    out.labels.push_back(data.labels[r]);
  }
  return out;
}

/// Stratified sampling without replacement: floor(fraction * count) rows per
/// class, kept in class order, deterministic per seed.
inline LabeledSet subsample_per_class(const LabeledSet& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ParameterError("subsample fraction must be in (0, 1]");
  Rng rng(seed);
  std::vector<std::size_t> keep;
  for (int c = 0; c < data.num_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (data.labels[i] == c) members.push_back(i);
    const auto order = rng.permutation(members.size());
    const auto take = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(members.size())));
    for (std::size_t i = 0; i < take; ++i) keep.push_back(members[order[i]]);
  }
  return select_rows(data, keep);
}

// ---------------------------------------------------------------------------
// CSV I/O

inline const std::vector<std::string>& emotion_names() {
  static const std::vector<std::string> names{"angry", "disgust", "fear", "happy", "sad", "surprise", "neutral"};
  return names;
}

/// Reads `label,p0 p1 ... p(side^2-1)` rows (optional header) with integer
/// pixels 0..255, scaled to [-1, 1]. At most `max_rows` rows are kept when nonzero.
inline LabeledSet load_image_csv(const std::string& path, std::size_t expected_side = 48, std::size_t max_rows = 0) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open image csv '" + path + "'");
  const std::size_t pixels = expected_side * expected_side;
  LabeledSet set;
  set.num_classes = 7;
  set.sample_shape = {expected_side, expected_side, 1};
  set.features.cols = pixels;
  std::string line;
  std::size_t row_no = 0;
  std::vector<double> row(pixels);
  while (std::getline(in, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError(path + ": row " + std::to_string(row_no) + " has no label field");
    const std::string label_text = line.substr(0, comma);
    if (row_no == 1 && !label_text.empty() && !std::isdigit(static_cast<unsigned char>(label_text[0])) &&
        label_text[0] != '-') {
      continue;  // header
    }
    int label = 0;
    try {
      std::size_t used = 0;
      label = std::stoi(label_text, &used);
      if (used != label_text.size()) throw std::invalid_argument(label_text);
    } catch (const std::exception&) {
      throw DataError(path + ": row " + std::to_string(row_no) + " has a non-integer label");
    }
    if (label < 0 || label > 6) {
      throw DataError(path + ": row " + std::to_string(row_no) + " label " + std::to_string(label) + " outside 0-6");
    }
    std::istringstream px(line.substr(comma + 1));
    std::size_t count = 0;
    long value = 0;
    while (px >> value) {
      if (value < 0 || value > 255) {
        throw DataError(path + ": row " + std::to_string(row_no) + " pixel value " + std::to_string(value) +
                        " outside 0-255");
      }
      if (count < pixels) row[count] = static_cast<double>(value) / 127.5 - 1.0;
      ++count;
    }
    if (!px.eof()) throw DataError(path + ": row " + std::to_string(row_no) + " has a non-integer pixel");
    if (count != pixels) {
      throw DataError(path + ": row " + std::to_string(row_no) + " has " + std::to_string(count) + " pixels, expected " +
                      std::to_string(pixels));
    }
    set.features.append_row(row);
    set.labels.push_back(label);
    if (max_rows && set.size() >= max_rows) break;
  }
  return set;
}

/// Inverse of load_image_csv's scaling: round((v + 1) * 127.5) clamped to 0..255.
inline void write_image_csv(const LabeledSet& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write image csv '" + path + "'");
  out << "label,pixels\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.labels[i] << ',';
    const auto row = data.features.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      const long v = std::lround((row[j] + 1.0) * 127.5);
      out << (j ? " " : "") << std::clamp(v, 0L, 255L);
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

/// `x1,x2,label` rows for two-feature data.
inline void write_toy_csv(const LabeledSet& data, const std::string& path) {
  if (data.features.cols != 2) throw DataError("toy csv needs two features, got " + std::to_string(data.features.cols));
  CsvWriter csv(path, {"x1", "x2", "label"});
  for (std::size_t i = 0; i < data.size(); ++i) {
    csv.cell(data.features(i, 0)).cell(data.features(i, 1)).cell(data.labels[i]);
    csv.end_row();
  }
  csv.close();
}

inline LabeledSet read_toy_csv(const std::string& path, int num_classes = 0) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open toy csv '" + path + "'");
  std::string line;
  std::getline(in, line);
  if (line.rfind("x1,x2,label", 0) != 0) throw DataError(path + ": expected header x1,x2,label");
  LabeledSet set;
  set.sample_shape = {2};
  set.features.cols = 2;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_fields(line);
    if (f.size() != 3) throw DataError(path + ": row " + std::to_string(row_no) + " needs 3 fields");
    try {
      const double row[2] = {parse_number(f[0]), parse_number(f[1])};
      const double label = parse_number(f[2]);
      if (label != std::floor(label) || label < 0) throw std::invalid_argument("label");
      set.features.append_row(row);
      set.labels.push_back(static_cast<int>(label));
    } catch (const std::invalid_argument&) {
      throw DataError(path + ": row " + std::to_string(row_no) + " is not numeric");
    }
    set.num_classes = std::max(set.num_classes, set.labels.back() + 1);
  }
  set.num_classes = std::max(set.num_classes, num_classes);
  return set;
}

// ---------------------------------------------------------------------------
// Synthetic expressions

/// Procedural stand-in for a 48x48 expression dataset: a bright oval face on
/// a dark background with eyes, brows and a mouth whose shape depends on the
/// class, plus per-image jitter and pixel noise. Values lie on the 0..255
/// grid (scaled to [-1, 1]) so they survive a CSV round trip exactly.
inline LabeledSet synthetic_expressions(std::size_t per_class, std::uint64_t seed, std::size_t side = 48) {
  if (per_class == 0 || side < 16) throw ParameterError("synthetic_expressions: need per_class >= 1 and side >= 16");
  // per class: mouth curvature, mouth openness, brow slant, eye size
  static constexpr double kShape[7][4] = {
      {-0.3, 0.1, 0.6, 0.8},  {-0.5, 0.0, 0.3, 0.5}, {-0.1, 0.6, -0.4, 1.3}, {0.7, 0.2, 0.0, 0.9},
      {-0.6, 0.0, -0.5, 0.8}, {0.0, 1.0, -0.6, 1.4}, {0.0, 0.0, 0.0, 1.0},
  };
  Rng rng(seed);
  LabeledSet set;
  set.num_classes = 7;
  set.sample_shape = {side, side, 1};
  set.features.cols = side * side;
  const double s = static_cast<double>(side) / 48.0;
  std::vector<double> img(side * side);
  for (int c = 0; c < 7; ++c) {
    const double* k = kShape[c];
    for (std::size_t n = 0; n < per_class; ++n) {
      const double cx = 24 * s + rng.normal(0, 1.0) * s, cy = 24 * s + rng.normal(0, 1.0) * s;
      const double scale = 1.0 + rng.normal(0, 0.05);
      const double curve = k[0] + rng.normal(0, 0.1), open = std::max(0.0, k[1] + rng.normal(0, 0.1));
      const double brow = k[2] + rng.normal(0, 0.1), eye = k[3] * (1.0 + rng.normal(0, 0.1));
      const double skin = 170 + rng.normal(0, 15);
      for (std::size_t r = 0; r < side; ++r)
        for (std::size_t q = 0; q < side; ++q) {
          const double x = (static_cast<double>(q) - cx) / (s * scale), y = (static_cast<double>(r) - cy) / (s * scale);
          double v = 30;
          if ((x * x) / 289.0 + (y * y) / 441.0 < 1.0) v = skin;
          for (double ex : {-7.0, 7.0}) {
            const double dx = x - ex, dy = y + 5;
            if (dx * dx + dy * dy < 4.0 * eye * eye) v = 40;
            // brows rise toward the centre for positive slant
            const double by = -10 - brow * (ex < 0 ? (x - ex) : (ex - x)) * 0.5;
            if (std::abs(dx) < 4 && std::abs(y - by) < 1.0) v = 60;
          }
          const double my = 9 - curve * (x * x) / 36.0;
          if (std::abs(x) < 7 && y > my - 0.8 - 3 * open && y < my + 0.8) v = open > 0.3 ? 20 : 90;
          v += rng.normal(0, 6);
          img[r * side + q] = std::round(std::clamp(v, 0.0, 255.0)) / 127.5 - 1.0;
        }
      set.features.append_row(img);
      set.labels.push_back(c);
    }
  }
  return set;
}

}  // namespace gaug
