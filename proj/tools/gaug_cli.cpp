// gaug: command-line driver for the augmentation experiments.
//
//   gaug toy         [--config f] [--seed n] [--out dir] [--steps n]
//   gaug image-smoke [--config f] [--seed n] [--out dir] [--steps n]
//   gaug embed        --config f  [--seed n] [--out dir]
//   gaug report                              [--out dir]
//
// Exit codes: 0 ok, 1 configuration, 2 training/numerical, 3 I/O.

#include <cstdio>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "gaug/experiment.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 1, kTraining = 2, kIo = 3 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  std::string out;
};

gaug::ExperimentConfig resolve(const std::string& kind, const Options& o) {
  gaug::ExperimentConfig c = o.config.empty() ? gaug::default_config(kind) : gaug::load_config(o.config, kind);
  if (c.kind != kind) throw gaug::ConfigError("config is for '" + c.kind + "', not '" + kind + "'");
  if (o.seed) c.seed = *o.seed;
  if (o.steps) {
    c.cyclegan.steps = *o.steps;
    if (kind == "image-smoke") c.classifier.steps = *o.steps;
  }
  return c;
}

void print_accuracy(const char* tag, const std::optional<gaug::AccuracyReport>& rep) {
  if (rep) std::printf("%-10s accuracy %.4f\n", tag, rep->overall);
}

void print_histograms(const gaug::ExperimentReport& r) {
  std::printf("train counts before:");
  for (auto n : r.histogram_before) std::printf(" %zu", n);
  std::printf("\ntrain counts after: ");
  for (auto n : r.histogram_after) std::printf(" %zu", n);
  std::printf("\n");
}

int run(const std::string& kind, const Options& o) {
  const std::string out = o.out.empty() ? "out/" + kind : o.out;
  if (kind == "report") {
    const auto j = gaug::verify_report(out);
    std::printf("report %s: %zu files present\n", out.c_str(), j["files"].size());
    for (const char* tag : {"baseline", "augmented"}) {
      if (j.contains(tag)) std::printf("%-10s accuracy %.4f (matches confusion csv)\n", tag, j[tag]["overall"].get<double>());
    }
    return kOk;
  }
  const auto config = resolve(kind, o);
  gaug::ExperimentReport r;
  if (kind == "toy") {
    r = gaug::run_toy(config, out);
  } else if (kind == "image-smoke") {
    r = gaug::run_image_smoke(config, out);
  } else {
    r = gaug::run_embed(config, out);
  }
  if (kind != "embed") print_histograms(r);
  print_accuracy("baseline", r.baseline);
  print_accuracy("augmented", r.augmented);
  for (const auto& [tag, e] : r.embeddings) {
    std::printf("embedding %s: kl %.4f -> %.4f, silhouette %.4f\n", tag.c_str(), e.initial_kl, e.final_kl,
                gaug::mean_silhouette(e.coordinates, e.labels));
  }
  std::printf("wrote %s/report.json\n", out.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GAN-based data augmentation experiments"};
  app.require_subcommand(1);
  Options opts;
  std::uint64_t seed = 0;
  int steps = 0;

  auto add_common = [&](CLI::App* sub, bool training) {
    sub->add_option("--out", opts.out, "output directory (default out/<command>)");
    if (sub->get_name() == "report") return;
    sub->add_option("--config", opts.config, "JSON configuration file");
    sub->add_option("--seed", seed, "root seed");
    if (training) sub->add_option("--steps", steps, "training steps")->check(CLI::NonNegativeNumber);
  };
  add_common(app.add_subcommand("toy", "two-dimensional Gaussian study"), true);
  add_common(app.add_subcommand("image-smoke", "reduced-scale image pipeline"), true);
  add_common(app.add_subcommand("embed", "t-SNE of CSV datasets listed in the config"), false);
  add_common(app.add_subcommand("report", "verify and summarize an output directory"), false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }
  CLI::App* sub = app.get_subcommands().front();
  auto given = [&](const char* name) {
    const CLI::Option* opt = sub->get_option_no_throw(name);
    return opt && opt->count() > 0;
  };
  if (given("--seed")) opts.seed = seed;
  if (given("--steps")) opts.steps = steps;

  try {
    return run(sub->get_name(), opts);
  } catch (const gaug::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const gaug::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const gaug::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kIo;
  } catch (const gaug::Error& e) {
    std::cerr << "training error: " << e.what() << '\n';
    return kTraining;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kTraining;
  }
}
