#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctcdro/config.hpp"
#include "ctcdro/errors.hpp"
#include "ctcdro/experiment.hpp"
#include "ctcdro/trainer.hpp"

using namespace ctcdro;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kRuntime = 4 };

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<double> eta_q, alpha, duration;
  std::optional<std::size_t> steps;
  std::optional<std::string> norm;
  bool lid_prefix = false;

  void add_to(CLI::App* app) {
    app->add_option("--seed", seed, "Run seed");
    app->add_option("--mode", mode, "baseline, gdro, ctcdro, ctcdro_no_dur or ctcdro_no_smooth");
    app->add_option("--eta-q", eta_q, "Group-weight step size");
    app->add_option("--alpha", alpha, "Smoothing parameter");
    app->add_option("--duration", duration, "Seconds of audio per batch");
    app->add_option("--steps", steps, "Training steps");
    app->add_option("--norm", norm, "Per-utterance loss normalization")->check(CLI::IsMember({"none", "frame", "target"}));
    app->add_flag("--lid-prefix", lid_prefix, "Prepend a group token to every target");
  }

  void apply(TrainConfig& c) const {
    if (seed) c.seed = *seed;
    if (mode) c.mode = parse_mode(*mode);
    if (eta_q) c.dro.eta_q = *eta_q;
    if (alpha) c.dro.alpha = *alpha;
    if (duration) c.batch_duration = *duration;
    if (steps) {
      c.steps = *steps;
      c.eval_every = std::min(c.eval_every, std::max<std::size_t>(c.steps, 1));
    }
    if (norm) c.norm = parse_loss_norm(*norm);
    if (lid_prefix) c.lid_prefix = true;
    validate(c);
  }
};

TrainConfig load_config(const std::string& file) {
  return file.empty() ? TrainConfig{} : train_config_from_json(read_json_file(file));
}

std::string num(double v, int digits = 2) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string eta_str(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

int cmd_gen(const std::string& spec_file, const fs::path& out, std::optional<std::uint64_t> seed) {
  CorpusSpec spec = spec_file.empty() ? collapse_scenario_spec() : corpus_spec_from_json(read_json_file(spec_file));
  if (seed) spec.seed = *seed;
  const Corpus c = build_corpus(spec);
  write_corpus(c, out);
  for (const auto& w : c.warnings) std::cerr << "warning: " << w << "\n";

  std::printf("%-3s %-12s %6s %9s %9s %9s %9s %10s\n", "g", "name", "n", "mean_s", "std_s", "min_s", "max_s", "total_s");
  for (std::size_t g = 0; g < c.groups(); ++g) {
    std::vector<double> d;
    for (const auto& u : c.utterances)
      if (u.group == static_cast<int>(g)) d.push_back(u.duration);
    double mean = 0.0, var = 0.0, total = 0.0;
    for (double x : d) total += x;
    mean = d.empty() ? 0.0 : total / static_cast<double>(d.size());
    for (double x : d) var += (x - mean) * (x - mean);
    if (d.size() > 1) var /= static_cast<double>(d.size() - 1);
    const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
    std::printf("%-3zu %-12s %6zu %9.3f %9.3f %9.3f %9.3f %10.1f\n", g, c.specs[g].name.c_str(), d.size(), mean,
                std::sqrt(var), d.empty() ? 0.0 : *lo, d.empty() ? 0.0 : *hi, total);
  }
  std::printf("train %zu  dev %zu  test %zu  -> %s\n", c.train.size(), c.dev.size(), c.test.size(), out.c_str());
  return kOk;
}

int cmd_train(const std::string& config_file, const fs::path& corpus_dir, const fs::path& out, const Overrides& o) {
  TrainConfig c = load_config(config_file);
  o.apply(c);
  const Corpus corpus = read_corpus(corpus_dir);
  const RunSummary s = run_training(c, corpus, out);
  std::printf("%s: selected step %zu, test max CER %s (group %d), avg CER %s -> %s\n",
              std::string(to_string(c.mode)).c_str(), s.selected_step, num(s.test.summary.max_cer).c_str(),
              s.test.summary.max_group, num(s.test.summary.avg_cer).c_str(), out.c_str());
  return kOk;
}

struct Row {
  std::string variant;
  TrainConfig config;
  std::vector<RunSummary> runs;
};

// Seed-averaged row; the worst group is the one with the largest mean CER.
void write_rows(const std::vector<Row>& rows, const fs::path& file, bool with_grid) {
  std::ofstream os(file);
  if (!os) throw DataError("cannot write " + file.string());
  os << "variant," << (with_grid ? "eta_q,alpha," : "") << "max_cer,max_group,avg_cer,lid\n";
  for (const auto& r : rows) {
    if (r.runs.empty()) continue;
    std::vector<double> per_group(r.runs[0].test.cer.size(), 0.0);
    double max_cer = 0.0, avg = 0.0, lid = 0.0;
    for (const auto& s : r.runs) {
      for (std::size_t g = 0; g < per_group.size(); ++g) per_group[g] += s.test.cer[g];
      max_cer += s.test.summary.max_cer;
      avg += s.test.summary.avg_cer;
      lid += s.test.lid_accuracy;
    }
    const double n = static_cast<double>(r.runs.size());
    const auto worst = std::max_element(per_group.begin(), per_group.end()) - per_group.begin();
    os << r.variant << ",";
    if (with_grid) os << eta_str(r.config.dro.eta_q) << "," << eta_str(r.config.dro.alpha) << ",";
    os << num(max_cer / n) << "," << worst << "," << num(avg / n) << "," << num(lid / n) << "\n";
  }
}

// Runs every (row, seed); failures are reported and the rest carry on.
int run_rows(std::vector<Row>& rows, const Corpus& corpus, const fs::path& root, const std::vector<std::uint64_t>& seeds) {
  int failed = 0;
  for (auto& r : rows) {
    for (auto seed : seeds) {
      TrainConfig c = r.config;
      c.seed = seed;
      const fs::path dir = root / r.variant / ("seed_" + std::to_string(seed));
      try {
        r.runs.push_back(run_training(c, corpus, dir));
        std::printf("  %-20s seed %llu  test max CER %s\n", r.variant.c_str(), static_cast<unsigned long long>(seed),
                    num(r.runs.back().test.summary.max_cer).c_str());
        std::fflush(stdout);
      } catch (const std::exception& e) {
        ++failed;
        std::fprintf(stderr, "run %s seed %llu failed: %s\n", r.variant.c_str(), static_cast<unsigned long long>(seed),
                     e.what());
      }
    }
  }
  if (failed) std::fprintf(stderr, "%d run(s) failed\n", failed);
  return failed ? kRuntime : kOk;
}

int cmd_sweep(const std::string& manifest_file, const std::optional<fs::path>& out) {
  if (manifest_file.empty()) throw ConfigInvalid("sweep needs --config <manifest>");
  ExperimentManifest m = manifest_from_json(read_json_file(manifest_file), fs::path(manifest_file).parent_path());
  if (out) m.output_root = *out;
  if (std::none_of(m.variants.begin(), m.variants.end(), [](const Variant& v) { return v.config.mode == Mode::baseline; }))
    throw ConfigInvalid("manifest needs a baseline variant");
  const Corpus corpus = read_corpus(m.corpus);
  std::vector<Row> rows;
  for (const auto& v : m.variants) rows.push_back({v.name, v.config, {}});
  const int rc = run_rows(rows, corpus, m.output_root, m.seeds);
  write_rows(rows, m.output_root / "summary.csv", true);
  std::printf("summary -> %s\n", (m.output_root / "summary.csv").c_str());
  return rc;
}

int cmd_ablate(const std::string& config_file, const fs::path& corpus_dir, const fs::path& out, const Overrides& o,
               const std::vector<std::uint64_t>& seeds) {
  TrainConfig base = load_config(config_file);
  o.apply(base);
  if (base.mode != Mode::ctcdro) throw ConfigInvalid("ablate needs a base config with mode ctcdro");
  const Corpus corpus = read_corpus(corpus_dir);
  std::vector<Row> rows;
  for (Mode m : {Mode::ctcdro, Mode::ctcdro_no_dur, Mode::ctcdro_no_smooth, Mode::baseline}) {
    TrainConfig c = base;
    c.mode = m;
    rows.push_back({std::string(to_string(m)), c, {}});
  }
  const int rc = run_rows(rows, corpus, out, seeds.empty() ? std::vector<std::uint64_t>{base.seed} : seeds);
  write_rows(rows, out / "ablation.csv", false);
  std::printf("ablation -> %s\n", (out / "ablation.csv").c_str());
  return rc;
}

int cmd_plot_weights(const fs::path& run, const std::optional<fs::path>& out) {
  std::ifstream is(run / "trajectory.csv");
  if (!is) throw ConfigInvalid("no trajectory.csv in " + run.string());
  const fs::path file = out.value_or(run / "weights.csv");
  std::ofstream os(file);
  if (!os) throw DataError("cannot write " + file.string());
  std::string line;
  std::getline(is, line);
  std::size_t groups = 0;
  for (std::size_t p = 0; (p = line.find(",q_", p)) != std::string::npos; ++p) ++groups;
  os << "step,group,q\n";
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string step, cell;
    std::getline(ss, step, ',');
    std::getline(ss, cell, ',');
    for (std::size_t g = 0; g < groups; ++g) {
      std::getline(ss, cell, ',');
      os << step << "," << g << "," << cell << "\n";
      ++rows;
    }
  }
  std::printf("%zu rows -> %s\n", rows, file.c_str());
  return kOk;
}

int cmd_eval(const fs::path& run, const fs::path& corpus_dir, const std::string& split_name,
             const std::optional<std::size_t>& step) {
  const TrainConfig c = train_config_from_json([&] {
    auto j = read_json_file(run / "config.json");
    j.erase("resolved_batch_size");
    return j;
  }());
  std::string ckpt;
  if (step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "step_%06zu", *step);
    ckpt = buf;
  } else {
    ckpt = read_json_file(run / "metrics.json").at("selected_checkpoint").get<std::string>();
  }
  const Corpus corpus = read_corpus(corpus_dir);
  auto [params, meta] = load_checkpoint(run / "checkpoints" / ckpt);
  const GroupReport r = evaluate(params, corpus, corpus.split_ids(split_name), c.lid_prefix);
  std::printf("checkpoint %s (step %zu), %s split\n", ckpt.c_str(), meta.step, split_name.c_str());
  std::printf("%-3s %-12s %8s %6s %6s %6s %8s\n", "g", "name", "cer", "ins", "sub", "del", "ref_len");
  for (std::size_t g = 0; g < r.cer.size(); ++g)
    std::printf("%-3zu %-12s %8s %6zu %6zu %6zu %8zu\n", g, corpus.specs[g].name.c_str(), num(r.cer[g]).c_str(),
                r.counts[g].insertions, r.counts[g].substitutions, r.counts[g].deletions,
                r.counts[g].reference_length);
  std::printf("max CER %s (group %d)  avg CER %s  LID %s\n", num(r.summary.max_cer).c_str(), r.summary.max_group,
              num(r.summary.avg_cer).c_str(), num(r.lid_accuracy).c_str());
  return kOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigInvalid*>(&e) || dynamic_cast<const InvalidSpec*>(&e) ||
      dynamic_cast<const InvalidFractions*>(&e) || dynamic_cast<const InvalidDims*>(&e))
    return kConfig;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const DimMismatch*>(&e)) return kData;
  return kRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CTC-DRO desk-scale experiments"};
  app.require_subcommand(1);

  std::string config, corpus, split_name = "test";
  std::optional<fs::path> out;
  std::optional<std::size_t> step;
  std::vector<std::uint64_t> seeds;
  fs::path run;
  Overrides o;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic corpus");
  gen->add_option("--config", config, "Corpus spec JSON (default: the bundled collapse scenario)");
  gen->add_option("--out", out, "Corpus directory")->required();
  gen->add_option("--seed", o.seed, "Override the spec seed");

  auto* train = app.add_subcommand("train", "Train one run");
  train->add_option("--config", config, "Training config JSON");
  train->add_option("--corpus", corpus, "Corpus directory")->required();
  train->add_option("--out", out, "Run directory")->required();
  o.add_to(train);

  auto* sweep = app.add_subcommand("sweep", "Run every variant and seed of a manifest");
  sweep->add_option("--config", config, "Experiment manifest JSON")->required();
  sweep->add_option("--out", out, "Override the manifest output root");

  auto* ablate = app.add_subcommand("ablate", "Run ctcdro, both ablations and the baseline");
  ablate->add_option("--config", config, "Base training config JSON (mode ctcdro)");
  ablate->add_option("--corpus", corpus, "Corpus directory")->required();
  ablate->add_option("--out", out, "Output root")->required();
  ablate->add_option("--seeds", seeds, "Seeds to run")->delimiter(',');
  o.add_to(ablate);

  auto* plot = app.add_subcommand("plot-weights", "Write the group-weight series as tidy CSV");
  plot->add_option("--run", run, "Run directory")->required();
  plot->add_option("--out", out, "Output CSV (default: <run>/weights.csv)");

  auto* eval = app.add_subcommand("eval", "Score a stored checkpoint");
  eval->add_option("--run", run, "Run directory")->required();
  eval->add_option("--corpus", corpus, "Corpus directory")->required();
  eval->add_option("--split", split_name, "train, dev or test")->check(CLI::IsMember({"train", "dev", "test"}));
  eval->add_option("--step", step, "Checkpoint step (default: the selected one)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_gen(config, *out, o.seed);
    if (*train) return cmd_train(config, corpus, *out, o);
    if (*sweep) return cmd_sweep(config, out);
    if (*ablate) return cmd_ablate(config, corpus, *out, o, seeds);
    if (*plot) return cmd_plot_weights(run, out);
    if (*eval) return cmd_eval(run, corpus, split_name, step);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kOk;
}
