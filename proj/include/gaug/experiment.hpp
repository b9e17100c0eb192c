#pragma once

// End-to-end experiments: the two-dimensional toy study, a reduced-scale
// image run, stand-alone embeddings, and their JSON/CSV reports.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gaug/data.hpp"
#include "gaug/nets.hpp"
#include "gaug/svm.hpp"
#include "gaug/train.hpp"
#include "gaug/tsne.hpp"
#include "json.hpp"

namespace gaug {

inline constexpr int kReportSchemaVersion = 1;

struct AugmentTarget {
  int label = 2;
  std::size_t count = 900;
};

struct AugmentPlan {
  int reference = 0;
  std::vector<AugmentTarget> targets{{2, 900}};
  bool with_replacement = false;
};

struct GridConfig {
  std::size_t resolution = 200;
  double margin = 2.0;
};

struct ImageDataConfig {
  std::string csv;                     // empty: synthetic expressions
  std::size_t max_images = 500;
  std::size_t synthetic_per_class = 60;
  double test_fraction = 0.2;
  int base_channels = 16;
  int residual_blocks = 6;
  int classifier_fc = 256;
};

struct ExperimentConfig {
  std::string kind = "toy";  // toy | image-smoke | embed
  std::uint64_t seed = 0;
  GaussianSpec toy;
  int toy_hidden = 64;
  ImageDataConfig image;
  TrainConfig cyclegan;
  TrainConfig classifier;
  SvmOptions svm{1e-3, 50, 0};
  AugmentPlan augment;
  GridConfig grid;
  EmbedConfig embed;
  bool embed_enabled = false;           // toy: also embed baseline and augmented sets
  std::vector<std::string> embed_inputs;  // embed: toy or image CSVs
  int embed_focus_class = -1;           // silhouette reported for this class; -1 = smallest class
};

/// Defaults per experiment kind. The toy GAN trains on raw 2-D points with
/// a faster generator rate and small batches; the image run uses the
/// appendix rates with batch size 1.
inline ExperimentConfig default_config(const std::string& kind) {
  ExperimentConfig c;
  c.kind = kind;
  if (kind == "toy") {
    c.cyclegan.steps = 10000;
    c.cyclegan.batch_size = 16;
    c.cyclegan.lr_g = 1e-3;
    c.cyclegan.lr_d = 1e-4;
    c.cyclegan.log_every = 100;
  } else if (kind == "image-smoke") {
    c.cyclegan.steps = 200;
    c.cyclegan.batch_size = 1;
    c.cyclegan.log_every = 10;
    c.classifier.steps = 200;
    c.classifier.batch_size = 16;
    c.classifier.log_every = 10;
    c.augment = {6, {{1, 20}}, false};
  } else if (kind != "embed") {
    throw ConfigError("unknown experiment kind '" + kind + "' (expected toy, image-smoke or embed)");
  }
  return c;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

// Reads `key` into `out` when present; rejects unknown keys afterwards.
class JsonReader {
 public:
  JsonReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <class T>
  JsonReader& get(const char* key, T& out) {
    seen_.push_back(key);
    if (!j_.contains(key)) return *this;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  const nlohmann::json* child(const char* key) {
    seen_.push_back(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (std::find(seen_.begin(), seen_.end(), k) == seen_.end()) throw ConfigError(where_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::vector<std::string> seen_;
};

inline void read_train(const nlohmann::json& j, const std::string& where, TrainConfig& c) {
  JsonReader r(j, where);
  r.get("steps", c.steps).get("batch_size", c.batch_size).get("lr_g", c.lr_g).get("lr_d", c.lr_d);
  r.get("lr", c.lr_classifier).get("lambda_cyc", c.lambda_cyc).get("beta1", c.beta1).get("log_every", c.log_every);
  r.finish();
}

inline nlohmann::json train_json(const TrainConfig& c, bool gan) {
  nlohmann::json j{{"steps", c.steps}, {"batch_size", c.batch_size}, {"beta1", c.beta1}, {"log_every", c.log_every}};
  if (gan) {
    j["lr_g"] = c.lr_g;
    j["lr_d"] = c.lr_d;
    j["lambda_cyc"] = c.lambda_cyc;
  } else {
    j["lr"] = c.lr_classifier;
  }
  return j;
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j, const std::string& fallback_kind) {
  std::string kind = fallback_kind;
  if (j.contains("kind")) {
    if (!j["kind"].is_string()) throw ConfigError("kind: expected a string");
    kind = j["kind"].get<std::string>();
  }
  ExperimentConfig c = default_config(kind);
  detail::JsonReader top(j, "config");
  top.get("kind", c.kind).get("seed", c.seed);

  if (const auto* d = top.child("toy")) {
    detail::JsonReader r(*d, "toy");
    r.get("means", c.toy.means).get("covariance", c.toy.covariance);
    r.get("train_counts", c.toy.train_counts).get("test_counts", c.toy.test_counts).get("hidden", c.toy_hidden);
    r.finish();
  }
  if (const auto* d = top.child("image")) {
    detail::JsonReader r(*d, "image");
    r.get("csv", c.image.csv).get("max_images", c.image.max_images);
    r.get("synthetic_per_class", c.image.synthetic_per_class).get("test_fraction", c.image.test_fraction);
    r.get("base_channels", c.image.base_channels).get("residual_blocks", c.image.residual_blocks);
    r.get("classifier_fc", c.image.classifier_fc);
    r.finish();
  }
  if (const auto* d = top.child("cyclegan")) detail::read_train(*d, "cyclegan", c.cyclegan);
  if (const auto* d = top.child("classifier")) detail::read_train(*d, "classifier", c.classifier);
  if (const auto* d = top.child("svm")) {
    detail::JsonReader r(*d, "svm");
    r.get("reg_lambda", c.svm.reg_lambda).get("epochs", c.svm.epochs);
    r.finish();
  }
  if (const auto* d = top.child("augment")) {
    detail::JsonReader r(*d, "augment");
    r.get("reference", c.augment.reference).get("with_replacement", c.augment.with_replacement);
    if (const auto* t = r.child("targets")) {
      if (!t->is_array()) throw ConfigError("augment.targets: expected an array");
      c.augment.targets.clear();
      for (const auto& item : *t) {
        AugmentTarget target;
        detail::JsonReader tr(item, "augment.targets[]");
        tr.get("label", target.label).get("count", target.count);
        tr.finish();
        c.augment.targets.push_back(target);
      }
    }
    r.finish();
  }
  if (const auto* d = top.child("grid")) {
    detail::JsonReader r(*d, "grid");
    r.get("resolution", c.grid.resolution).get("margin", c.grid.margin);
    r.finish();
  }
  if (const auto* d = top.child("embed")) {
    detail::JsonReader r(*d, "embed");
    r.get("enabled", c.embed_enabled).get("inputs", c.embed_inputs).get("focus_class", c.embed_focus_class);
    r.get("perplexity", c.embed.perplexity).get("iterations", c.embed.iterations);
    r.get("learning_rate", c.embed.learning_rate).get("early_exaggeration", c.embed.early_exaggeration);
    r.get("max_points", c.embed.max_points);
    r.finish();
  }
  top.finish();
  c.kind = kind;
  return c;
}

inline ExperimentConfig load_config(const std::string& path, const std::string& fallback_kind) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config(j, fallback_kind);
}

inline nlohmann::json config_json(const ExperimentConfig& c) {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : c.augment.targets) targets.push_back({{"label", t.label}, {"count", t.count}});
  nlohmann::json j{
      {"kind", c.kind},
      {"seed", c.seed},
      {"cyclegan", detail::train_json(c.cyclegan, true)},
      {"augment", {{"reference", c.augment.reference}, {"targets", targets}, {"with_replacement", c.augment.with_replacement}}},
      {"embed",
       {{"enabled", c.embed_enabled},
        {"inputs", c.embed_inputs},
        {"focus_class", c.embed_focus_class},
        {"perplexity", c.embed.perplexity},
        {"iterations", c.embed.iterations},
        {"learning_rate", c.embed.learning_rate},
        {"early_exaggeration", c.embed.early_exaggeration},
        {"max_points", c.embed.max_points}}},
  };
  if (c.kind == "toy") {
    j["toy"] = {{"means", c.toy.means},
                {"covariance", c.toy.covariance},
                {"train_counts", c.toy.train_counts},
                {"test_counts", c.toy.test_counts},
                {"hidden", c.toy_hidden}};
    j["svm"] = {{"reg_lambda", c.svm.reg_lambda}, {"epochs", c.svm.epochs}};
    j["grid"] = {{"resolution", c.grid.resolution}, {"margin", c.grid.margin}};
  } else if (c.kind == "image-smoke") {
    j["image"] = {{"csv", c.image.csv},
                  {"max_images", c.image.max_images},
                  {"synthetic_per_class", c.image.synthetic_per_class},
                  {"test_fraction", c.image.test_fraction},
                  {"base_channels", c.image.base_channels},
                  {"residual_blocks", c.image.residual_blocks},
                  {"classifier_fc", c.image.classifier_fc}};
    j["classifier"] = detail::train_json(c.classifier, false);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Validation

inline void validate_config(const ExperimentConfig& c, int num_classes) {
  auto check_class = [&](int label, const std::string& what) {
    if (label < 0 || label >= num_classes) {
      throw ConfigError(what + " class " + std::to_string(label) + " does not exist (data has " +
                        std::to_string(num_classes) + " classes)");
    }
  };
  check_class(c.augment.reference, "augment.reference");
  for (const auto& t : c.augment.targets) {
    check_class(t.label, "augment.targets");
    if (t.label == c.augment.reference) throw ConfigError("augment target equals the reference class");
  }
  c.cyclegan.validate();
  if (c.kind == "image-smoke") c.classifier.validate();
  if (c.toy_hidden < 1) throw ConfigError("toy.hidden must be >= 1");
  if (c.grid.resolution < 2 || !(c.grid.margin >= 0)) throw ConfigError("grid: resolution >= 2 and margin >= 0 required");
  if (!(c.svm.reg_lambda > 0) || c.svm.epochs < 1) throw ConfigError("svm: reg_lambda > 0 and epochs >= 1 required");
  if (c.image.max_images < 1 || c.image.max_images > 500) throw ConfigError("image.max_images must be in [1, 500]");
  if (!(c.image.test_fraction > 0 && c.image.test_fraction < 1)) throw ConfigError("image.test_fraction must be in (0, 1)");
  if (c.image.base_channels < 1 || c.image.residual_blocks < 0 || c.image.classifier_fc < 1) {
    throw ConfigError("image: base_channels, classifier_fc >= 1 and residual_blocks >= 0 required");
  }
  if (c.embed.max_points < 3) throw ConfigError("embed.max_points must be >= 3");
  if (c.kind == "toy") {
    const std::size_t k = c.toy.means.size();
    if (k < 2 || c.toy.train_counts.size() != k || c.toy.test_counts.size() != k) {
      throw ConfigError("toy: need >= 2 means with matching train_counts and test_counts");
    }
    try {
      cholesky2(c.toy.covariance);
    } catch (const ParameterError& e) {
      throw ConfigError(std::string("toy.") + e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// Reports

struct ExperimentReport {
  nlohmann::json json;
  std::vector<std::string> files;  // relative to the output directory
  std::vector<std::size_t> histogram_before;
  std::vector<std::size_t> histogram_after;
  std::optional<AccuracyReport> baseline;
  std::optional<AccuracyReport> augmented;
  std::map<int, LossCurve> gan_curves;  // by target label
  std::map<std::string, Embedding> embeddings;
};

namespace detail {

/// Tracks the output directory and every file written into it.
class OutputDir {
 public:
  explicit OutputDir(const std::string& dir) : dir_(dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec || !std::filesystem::is_directory(dir_)) throw IoError("cannot create output directory '" + dir + "'");
  }

  std::string path(const std::string& name, ExperimentReport& report) const {
    report.files.push_back(name);
    return (dir_ / name).string();
  }

 private:
  std::filesystem::path dir_;
};

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

/// Runs one pipeline stage, prefixing any library error with the stage name
/// while keeping its type (and so the CLI exit code).
template <class F>
decltype(auto) stage(const std::string& name, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(name + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(name + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(name + ": " + e.what());
  } catch (const TrainingError& e) {
    throw TrainingError(name + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(name + ": " + e.what());
  } catch (const ParameterError& e) {
    throw ParameterError(name + ": " + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(name + ": " + e.what());
  } catch (const ContractError& e) {
    throw ContractError(name + ": " + e.what());
  }
}

inline nlohmann::json accuracy_entry(const AccuracyReport& rep, const std::vector<std::string>& names,
                                     const std::string& confusion_file) {
  nlohmann::json j = accuracy_json(rep, names);
  j["confusion_csv"] = confusion_file;
  return j;
}

// Class scores of `model` on a regular grid spanning the data extent.
inline void write_margins(const LinearSvmModel& model, const Matrix& extent_of, const GridConfig& grid,
                          const std::string& path) {
  double lo[2] = {extent_of(0, 0), extent_of(0, 1)}, hi[2] = {lo[0], lo[1]};
  for (std::size_t i = 0; i < extent_of.rows; ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      lo[c] = std::min(lo[c], extent_of(i, c));
      hi[c] = std::max(hi[c], extent_of(i, c));
    }
  const std::size_t n = grid.resolution;
  Matrix points(n * n, 2);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      const double u = static_cast<double>(b) / static_cast<double>(n - 1);
      const double v = static_cast<double>(a) / static_cast<double>(n - 1);
      points(a * n + b, 0) = lo[0] - grid.margin + u * (hi[0] - lo[0] + 2 * grid.margin);
      points(a * n + b, 1) = lo[1] - grid.margin + v * (hi[1] - lo[1] + 2 * grid.margin);
    }
  const Matrix scores = svm_scores(model, points);
  std::vector<std::string> header{"x1", "x2"};
  for (std::size_t k = 0; k < scores.cols; ++k) header.push_back("score_" + std::to_string(k));
  CsvWriter csv(path, header);
  for (std::size_t i = 0; i < points.rows; ++i) {
    csv.cell(points(i, 0)).cell(points(i, 1));
    for (std::size_t k = 0; k < scores.cols; ++k) csv.cell(scores(i, k));
    csv.end_row();
  }
  csv.close();
}

inline std::vector<std::string> class_names(int k) {
  std::vector<std::string> names;
  for (int c = 0; c < k; ++c) names.push_back("class_" + std::to_string(c));
  return names;
}

inline int smallest_class(const LabeledSet& data) {
  const auto hist = class_histogram(data);
  int best = -1;
  for (std::size_t c = 0; c < hist.size(); ++c)
    if (hist[c] > 0 && (best < 0 || hist[c] < hist[static_cast<std::size_t>(best)])) best = static_cast<int>(c);
  return best;
}

}  // namespace detail

/// Embeds at most config.max_points rows, sampled per class in proportion.
inline Embedding embed_set(const LabeledSet& data, const EmbedConfig& config) {
  LabeledSet subset = data;
  if (data.size() > config.max_points) {
    subset = subsample_per_class(data, static_cast<double>(config.max_points) / static_cast<double>(data.size()),
                                 derive_seed(config.seed, "embed.subsample"));
  }
  return tsne_run(subset.features, subset.labels, config);
}

inline nlohmann::json embedding_json(const Embedding& e, int focus_class, const std::string& file) {
  return {{"csv", file},
          {"points", e.coordinates.rows},
          {"initial_kl", e.initial_kl},
          {"final_kl", e.final_kl},
          {"max_abs_coordinate", e.max_abs_coordinate},
          {"silhouette", mean_silhouette(e.coordinates, e.labels)},
          {"focus_class", focus_class},
          {"focus_silhouette", mean_silhouette(e.coordinates, e.labels, focus_class)}};
}

inline void write_report_json(const ExperimentReport& report, const std::string& dir) {
  const auto path = std::filesystem::path(dir) / "report.json";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << report.json.dump(2) << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Toy experiment

/// Gaussians -> baseline SVM -> CycleGAN reference->target per target class
/// -> generated samples merged into the training set -> augmented SVM.
inline ExperimentReport run_toy(const ExperimentConfig& config, const std::string& out_dir) {
  const auto t_start = detail::Clock::now();
  const int k = static_cast<int>(config.toy.means.size());
  validate_config(config, k);
  detail::OutputDir out(out_dir);
  ExperimentReport report;
  nlohmann::json& j = report.json;
  j["schema_version"] = kReportSchemaVersion;
  j["config"] = config_json(config);
  nlohmann::json seeds, timings;
  const auto names = detail::class_names(k);
  const std::uint64_t root = config.seed;
  auto sub_seed = [&](const std::string& name) {
    const std::uint64_t s = derive_seed(root, name);
    seeds[name] = s;
    return s;
  };

  const std::uint64_t data_seed = sub_seed("data");
  const TrainTestSplit split = detail::stage("data", [&] { return sample_gaussians(config.toy, data_seed); });
  report.histogram_before = class_histogram(split.train);
  write_toy_csv(split.train, out.path("train.csv", report));
  write_toy_csv(split.test, out.path("test.csv", report));

  auto fit_and_score = [&](const LabeledSet& train, const std::string& tag) {
    SvmOptions opts = config.svm;
    opts.seed = sub_seed("svm." + tag);
    const LinearSvmModel model = detail::stage("svm." + tag, [&] { return svm_train(train, opts); });
    const AccuracyReport rep = evaluate(svm_predict(model, split.test.features), split.test.labels, k);
    const std::string confusion = "confusion_" + tag + ".csv";
    write_confusion_csv(rep.confusion, out.path(confusion, report));
    detail::write_margins(model, split.train.features, config.grid, out.path("margins_" + tag + ".csv", report));
    j[tag] = detail::accuracy_entry(rep, names, confusion);
    j[tag]["training_accuracy"] = model.training_accuracy;
    return rep;
  };

  auto t = detail::Clock::now();
  report.baseline = fit_and_score(split.train, "baseline");
  timings["baseline"] = detail::seconds_since(t);

  LabeledSet augmented = split.train;
  nlohmann::json curves = nlohmann::json::object();
  for (const auto& target : config.augment.targets) {
    const std::string tag = "class_" + std::to_string(target.label);
    t = detail::Clock::now();
    const DomainPair domains =
        detail::stage("split." + tag, [&] { return split_domains(split.train, config.augment.reference, target.label); });
    TrainConfig gan = config.cyclegan;
    gan.seed = sub_seed("cyclegan." + tag);
    CycleGanModel model =
        make_cyclegan(build_toy_generator(config.toy_hidden), build_toy_discriminator(config.toy_hidden), gan.seed, gan);
    const LossCurve curve = detail::stage("cyclegan." + tag, [&] { return train_cyclegan(model, domains, gan); });
    const std::string curve_file = "loss_curve_" + tag + ".csv";
    curve.write_csv(out.path(curve_file, report));
    curves[tag] = curve_file;
    report.gan_curves[target.label] = curve;

    const std::uint64_t gen_seed = sub_seed("augment." + tag);
    const LabeledSet generated = detail::stage("augment." + tag, [&] {
      return generate_augmented(model, domains.reference, domains.sample_shape, target.count, target.label, k, gen_seed,
                                config.augment.with_replacement);
    });
    write_toy_csv(generated, out.path("generated_" + tag + ".csv", report));
    augmented = merge_augmented(augmented, generated);
    timings["cyclegan." + tag] = detail::seconds_since(t);
  }
  report.histogram_after = class_histogram(augmented);
  write_toy_csv(augmented, out.path("augmented_train.csv", report));

  t = detail::Clock::now();
  report.augmented = fit_and_score(augmented, "augmented");
  timings["augmented"] = detail::seconds_since(t);

  if (config.embed_enabled) {
    t = detail::Clock::now();
    const int focus = config.embed_focus_class >= 0 ? config.embed_focus_class : detail::smallest_class(split.train);
    nlohmann::json emb = nlohmann::json::object();
    for (const auto& [tag, data] : {std::pair<std::string, const LabeledSet*>{"baseline", &split.train},
                                    std::pair<std::string, const LabeledSet*>{"augmented", &augmented}}) {
      EmbedConfig ec = config.embed;
      ec.seed = sub_seed("embed." + tag);
      const Embedding e = detail::stage("embed." + tag, [&] { return embed_set(*data, ec); });
      const std::string file = "embedding_" + tag + ".csv";
      e.write_csv(out.path(file, report));
      emb[tag] = embedding_json(e, focus, file);
      report.embeddings[tag] = e;
    }
    j["embeddings"] = emb;
    timings["embed"] = detail::seconds_since(t);
  }

  j["histograms"] = {{"before", report.histogram_before}, {"after", report.histogram_after}};
  j["loss_curves"] = curves;
  j["seeds"] = seeds;
  timings["total"] = detail::seconds_since(t_start);
  j["timings_s"] = timings;
  j["files"] = report.files;
  write_report_json(report, out_dir);
  return report;
}

// ---------------------------------------------------------------------------
// Image run

namespace detail {

// Stratified train/test split: the last ceil(fraction * n_c) rows of each class go to test.
inline std::pair<LabeledSet, LabeledSet> split_train_test(const LabeledSet& data, double test_fraction,
                                                          std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> train_rows, test_rows;
  for (int c = 0; c < data.num_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (data.labels[i] == c) members.push_back(i);
    const auto order = rng.permutation(members.size());
    const auto n_test = static_cast<std::size_t>(std::ceil(test_fraction * static_cast<double>(members.size())));
    for (std::size_t i = 0; i < members.size(); ++i) {
      (i < members.size() - std::min(n_test, members.size()) ? train_rows : test_rows).push_back(members[order[i]]);
    }
  }
  return {select_rows(data, train_rows), select_rows(data, test_rows)};
}

}  // namespace detail

/// Appendix networks on at most 500 48x48 images for a small number of
/// steps: CycleGAN per target class, then baseline and augmented CNNs.
/// Losses are checked for finiteness; accuracies are informational.
inline ExperimentReport run_image_smoke(const ExperimentConfig& config, const std::string& out_dir) {
  const auto t_start = detail::Clock::now();
  validate_config(config, 7);
  detail::OutputDir out(out_dir);
  ExperimentReport report;
  nlohmann::json& j = report.json;
  j["schema_version"] = kReportSchemaVersion;
  j["config"] = config_json(config);
  nlohmann::json seeds, timings;
  const std::uint64_t root = config.seed;
  auto sub_seed = [&](const std::string& name) {
    const std::uint64_t s = derive_seed(root, name);
    seeds[name] = s;
    return s;
  };
  const auto& names = emotion_names();

  std::string csv = config.image.csv;
  if (csv.empty()) {
    const std::uint64_t s = sub_seed("synthetic");
    const LabeledSet synth = synthetic_expressions(config.image.synthetic_per_class, s);
    csv = out.path("images.csv", report);
    write_image_csv(synth, csv);
  }
  const LabeledSet images = detail::stage("load", [&] { return load_image_csv(csv, 48, config.image.max_images); });
  if (images.size() == 0) throw DataError("load: no images in '" + csv + "'");
  const std::uint64_t split_seed = sub_seed("split");
  const auto [train, test] = detail::split_train_test(images, config.image.test_fraction, split_seed);
  report.histogram_before = class_histogram(train);
  j["images"] = {{"source", config.image.csv.empty() ? "synthetic" : config.image.csv},
                 {"loaded", images.size()},
                 {"train", train.size()},
                 {"test", test.size()}};

  const ImageNetOptions opts{48, config.image.base_channels};
  const NetworkSpec gen = build_cyclegan_generator(opts, config.image.residual_blocks);
  const NetworkSpec disc = build_cyclegan_discriminator(opts);
  const NetworkSpec cnn = build_cnn_classifier(opts, 7, config.image.classifier_fc);
  auto describe = [](const NetworkSpec& s) {
    nlohmann::json chain = nlohmann::json::array();
    for (const auto& shape : shape_chain(s)) chain.push_back(shape);
    return nlohmann::json{{"name", s.name}, {"shape_chain", chain}};
  };
  j["networks"] = {describe(cnn), describe(gen), describe(disc)};

  LabeledSet augmented = train;
  nlohmann::json curves = nlohmann::json::object();
  if (config.cyclegan.steps > 0) {
    for (const auto& target : config.augment.targets) {
      const std::string tag = names[static_cast<std::size_t>(target.label)];
      const auto t = detail::Clock::now();
      const DomainPair domains =
          detail::stage("split." + tag, [&] { return split_domains(train, config.augment.reference, target.label); });
      TrainConfig gc = config.cyclegan;
      gc.seed = sub_seed("cyclegan." + tag);
      CycleGanModel model = make_cyclegan(gen, disc, gc.seed, gc);
      const LossCurve curve = detail::stage("cyclegan." + tag, [&] { return train_cyclegan(model, domains, gc); });
      const std::string curve_file = "loss_curve_" + tag + ".csv";
      curve.write_csv(out.path(curve_file, report));
      curves[tag] = curve_file;
      report.gan_curves[target.label] = curve;
      const std::uint64_t gen_seed = sub_seed("augment." + tag);
      augmented = merge_augmented(augmented, detail::stage("augment." + tag, [&] {
                                    return generate_augmented(model, domains.reference, domains.sample_shape,
                                                              target.count, target.label, 7, gen_seed,
                                                              config.augment.with_replacement);
                                  }));
      timings["cyclegan." + tag] = detail::seconds_since(t);
    }
  }
  report.histogram_after = class_histogram(augmented);

  if (config.classifier.steps > 0) {
    for (const auto& [tag, data] : {std::pair<std::string, const LabeledSet*>{"baseline", &train},
                                    std::pair<std::string, const LabeledSet*>{"augmented", &augmented}}) {
      const auto t = detail::Clock::now();
      TrainConfig cc = config.classifier;
      cc.seed = sub_seed("classifier." + tag);
      Network net = init_weights(cnn, derive_seed(cc.seed, "init"));
      const ClassifierCurve curve = detail::stage("classifier." + tag, [&] { return train_classifier(net, *data, cc); });
      const std::string curve_file = "classifier_curve_" + tag + ".csv";
      curve.write_csv(out.path(curve_file, report));
      curves["classifier_" + tag] = curve_file;
      const AccuracyReport rep = evaluate(predict_classes(net, test), test.labels, 7);
      const std::string confusion = "confusion_" + tag + ".csv";
      write_confusion_csv(rep.confusion, out.path(confusion, report));
      j[tag] = detail::accuracy_entry(rep, names, confusion);
      (tag == "baseline" ? report.baseline : report.augmented) = rep;
      timings["classifier." + tag] = detail::seconds_since(t);
    }
  }

  j["histograms"] = {{"before", report.histogram_before}, {"after", report.histogram_after}};
  j["steps"] = {{"cyclegan", config.cyclegan.steps}, {"classifier", config.classifier.steps}};
  j["loss_curves"] = curves;
  j["seeds"] = seeds;
  timings["total"] = detail::seconds_since(t_start);
  j["timings_s"] = timings;
  j["files"] = report.files;
  write_report_json(report, out_dir);
  return report;
}

// ---------------------------------------------------------------------------
// Stand-alone embedding

/// A toy CSV (header x1,x2,label) or a 48x48 image CSV.
inline LabeledSet load_any_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string header;
  std::getline(in, header);
  if (header.rfind("x1,x2,label", 0) == 0) return read_toy_csv(path);
  return load_image_csv(path);
}

inline ExperimentReport run_embed(const ExperimentConfig& config, const std::string& out_dir) {
  if (config.embed_inputs.empty()) throw ConfigError("embed.inputs: list at least one CSV file");
  detail::OutputDir out(out_dir);
  ExperimentReport report;
  nlohmann::json& j = report.json;
  j["schema_version"] = kReportSchemaVersion;
  j["config"] = config_json(config);
  nlohmann::json seeds, results = nlohmann::json::object();
  auto sub_seed = [&](const std::string& name) {
    const std::uint64_t s = derive_seed(config.seed, name);
    seeds[name] = s;
    return s;
  };
  for (std::size_t i = 0; i < config.embed_inputs.size(); ++i) {
    const std::string& input = config.embed_inputs[i];
    const LabeledSet data = detail::stage("load", [&] { return load_any_csv(input); });
    const int focus = config.embed_focus_class >= 0 ? config.embed_focus_class : detail::smallest_class(data);
    std::string tag = std::filesystem::path(input).stem().string();
    if (results.contains(tag)) tag += "_" + std::to_string(i);
    EmbedConfig ec = config.embed;
    ec.seed = sub_seed("embed." + tag);
    const Embedding e = detail::stage("embed." + tag, [&] { return embed_set(data, ec); });
    const std::string file = "embedding_" + tag + ".csv";
    e.write_csv(out.path(file, report));
    results[tag] = embedding_json(e, focus, file);
    results[tag]["input"] = input;
    report.embeddings[tag] = e;
  }
  j["embeddings"] = results;
  j["seeds"] = seeds;
  j["files"] = report.files;
  write_report_json(report, out_dir);
  return report;
}

// ---------------------------------------------------------------------------
// Report checking

/// Re-reads `dir/report.json`, checks every listed file exists and that the
/// accuracy figures match the confusion-matrix CSVs. Returns the report.
inline nlohmann::json verify_report(const std::string& dir) {
  const auto path = std::filesystem::path(dir) / "report.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (j.value("schema_version", 0) != kReportSchemaVersion) throw DataError("unsupported report schema version");
  for (const auto& f : j.at("files")) {
    if (!std::filesystem::exists(std::filesystem::path(dir) / f.get<std::string>())) {
      throw IoError("report lists missing file '" + f.get<std::string>() + "'");
    }
  }
  for (const char* tag : {"baseline", "augmented"}) {
    if (!j.contains(tag)) continue;
    const auto file = (std::filesystem::path(dir) / j[tag]["confusion_csv"].get<std::string>()).string();
    const auto rep = accuracy_from_confusion(read_confusion_csv(file));
    if (std::abs(rep.overall - j[tag]["overall"].get<double>()) > 1e-12) {
      throw DataError(std::string(tag) + " accuracy in report disagrees with " + file);
    }
  }
  return j;
}

}  // namespace gaug
