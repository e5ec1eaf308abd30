// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero if
// any gated criterion fails; report-only lines never change it.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ctcdro/ctc.hpp"
#include "ctcdro/dro.hpp"
#include "ctcdro/experiment.hpp"
#include "ctcdro/metrics.hpp"
#include "ctcdro/model.hpp"
#include "helpers.hpp"

using namespace ctcdro;

namespace {

// tolerances and budgets
constexpr double kOracleTol = 1e-9;
constexpr double kOracleSeconds = 10.0;
constexpr double kFdStep = 1e-6;
constexpr double kFdTol = 1e-5;
constexpr double kFdSeconds = 30.0;
constexpr double kSimplexTol = 1e-12;
constexpr double kLimitAlpha = 1e8;
constexpr double kLimitTol = 1e-6;
constexpr double kFixedPointTol = 1e-4;
constexpr std::size_t kFixedPointSteps = 100000;
constexpr double kFixedPointEta = 0.05;
constexpr double kGapTol = 1e-3;
constexpr std::size_t kGapSteps = 10000;
constexpr double kCollapseWeight = 0.95;
constexpr double kCollapseFraction = 0.30;
constexpr double kStableWeight = 0.8;
constexpr double kWarmup = 0.1;
constexpr double kModeSeconds = 600.0;
constexpr int kSeeds = 5;

int failures = 0;

void line(int id, bool pass, const std::string& detail, bool gated = true) {
  std::printf("criterion %2d: %s  %s%s\n", id, pass ? "PASS" : "FAIL", detail.c_str(), gated ? "" : "  (report only)");
  std::fflush(stdout);
  if (gated && !pass) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void ctc_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng = make_rng(101, "acceptance");
  double worst = 0.0;
  int n = 0;
  while (n < 200) {
    const int V = 1 + static_cast<int>(uniform_index(rng, 3));
    const std::size_t D = 1 + uniform_index(rng, 6);
    auto y = testing::random_labels(rng, uniform_index(rng, 4), V);
    if (min_frames(y) > D) continue;
    auto lp = testing::random_lp(rng, D, V);
    worst = std::max(worst, std::abs(ctc_forward(lp, y).loss - ctc_loss_bruteforce(lp, y).loss));
    ++n;
  }
  const double secs = seconds_since(t0);
  line(1, worst <= kOracleTol && secs < kOracleSeconds, fmt("max |forward - brute| = %.2e over 200, %.2fs", worst, secs));
}

double fd_ctc_logits(Rng& rng) {
  for (;;) {
    const int V = 1 + static_cast<int>(uniform_index(rng, 3));
    const std::size_t D = 1 + uniform_index(rng, 5);
    auto y = testing::random_labels(rng, 1 + uniform_index(rng, 2), V);
    if (min_frames(y) > D) continue;
    RowMatrix z = testing::random_logits(rng, D, static_cast<std::size_t>(V) + 1);
    auto lp = LogProbSequence::from_logits(z);
    RowMatrix g = logit_gradient(lp, ctc_grad(lp, y).grad);
    std::vector<double> an(g.data(), g.data() + g.size()), fd;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      RowMatrix up = z, dn = z;
      up.data()[i] += kFdStep;
      dn.data()[i] -= kFdStep;
      fd.push_back((ctc_forward(LogProbSequence::from_logits(up), y).loss -
                    ctc_forward(LogProbSequence::from_logits(dn), y).loss) / (2 * kFdStep));
    }
    return testing::rel_error(an, fd);
  }
}

double fd_model(Rng& rng, std::uint64_t seed) {
  ModelDims d{1 + uniform_index(rng, 3), uniform_index(rng, 2), 2 + uniform_index(rng, 4), 1 + uniform_index(rng, 3)};
  auto p = init_params(d, seed);
  const std::size_t D = 2 + uniform_index(rng, 4);
  std::vector<float> x(D * d.feature_dim);
  for (auto& v : x) v = static_cast<float>(2 * uniform01(rng) - 1);
  auto y = testing::random_labels(rng, 1, static_cast<int>(d.vocab));
  auto loss = [&] { return ctc_forward(forward(p, x, D).logprobs, y).loss; };
  auto fwd = forward(p, x, D);
  auto an = backward(p, fwd, ctc_grad(fwd.logprobs, y).grad);
  std::vector<double> fd(an.size());
  for (std::size_t k = 0; k < an.size(); ++k) {
    const double keep = p.flat()[k];
    p.flat()[k] = keep + kFdStep;
    const double up = loss();
    p.flat()[k] = keep - kFdStep;
    const double dn = loss();
    p.flat()[k] = keep;
    fd[k] = (up - dn) / (2 * kFdStep);
  }
  return testing::rel_error(an, fd);
}

void gradient_checks() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng = make_rng(102, "acceptance");
  double ctc = 0.0, model = 0.0;
  for (int i = 0; i < 50; ++i) {
    ctc = std::max(ctc, fd_ctc_logits(rng));
    model = std::max(model, fd_model(rng, 500 + static_cast<std::uint64_t>(i)));
  }
  const double secs = seconds_since(t0);
  line(2, ctc <= kFdTol && model <= kFdTol && secs < kFdSeconds,
       fmt("max rel error ctc %.2e, model %.2e over 50 each, %.2fs", ctc, model, secs));
}

std::vector<double> random_losses(Rng& rng, std::size_t g, double scale) {
  std::vector<double> l(g);
  for (auto& v : l) v = scale * uniform01(rng);
  return l;
}

GroupWeights random_weights(Rng& rng, std::size_t g) {
  std::vector<double> q(g);
  double s = 0.0;
  for (auto& v : q) s += (v = 0.05 + uniform01(rng));
  for (auto& v : q) v /= s;
  return GroupWeights(std::move(q));
}

void simplex() {
  Rng rng = make_rng(103, "acceptance");
  const double etas[] = {1e-3, 1e-4};
  const double alphas[] = {0.1, 0.5, 1.0};
  double worst = 0.0;
  bool nonneg = true;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t g = 2 + uniform_index(rng, 6);
    auto q = random_weights(rng, g);
    auto l = random_losses(rng, g, 100.0);
    const double eta = etas[uniform_index(rng, 2)];
    auto out = i % 2 ? group_dro_update(q, l, eta) : ctc_dro_update(q, l, {eta, alphas[uniform_index(rng, 3)]});
    double s = 0.0;
    for (double v : out.values()) {
      s += v;
      nonneg = nonneg && v >= 0.0;
    }
    worst = std::max(worst, std::abs(s - 1.0));
  }
  line(3, nonneg && worst <= kSimplexTol, fmt("max |sum q - 1| = %.2e over 10^4 updates", worst));
}

void alpha_limit() {
  Rng rng = make_rng(104, "acceptance");
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t g = 2 + uniform_index(rng, 5);
    auto q = random_weights(rng, g);
    auto l = random_losses(rng, g, 20.0);
    const double eta = 1e-3 + 0.1 * uniform01(rng);
    auto a = ctc_dro_update(q, l, {eta * kLimitAlpha, kLimitAlpha});
    auto b = group_dro_update(q, l, eta);
    for (std::size_t k = 0; k < g; ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
  }
  line(4, worst <= kLimitTol, fmt("max entrywise difference %.2e over 100 at alpha = 1e8", worst));
}

void fixed_point() {
  Rng rng = make_rng(105, "acceptance");
  const double alphas[] = {0.1, 0.5, 1.0};
  int ok = 0, tried = 0;
  std::size_t slowest = 0;
  while (tried < 100) {
    const std::size_t g = 2 + uniform_index(rng, 4);
    auto l = random_losses(rng, g, 4.0);
    for (auto& v : l) v += 0.5;
    const double alpha = alphas[uniform_index(rng, 3)];
    auto target = optimal_weights(l, alpha);
    if (!target.valid) continue;
    ++tried;
    auto q = GroupWeights::uniform(g);
    for (std::size_t t = 1; t <= kFixedPointSteps; ++t) {
      q = ctc_dro_update(q, l, {kFixedPointEta, alpha});
      double dist = 0.0;
      for (std::size_t k = 0; k < g; ++k) dist = std::max(dist, std::abs(q[k] - target.q[k]));
      if (dist <= kFixedPointTol) {
        ++ok;
        slowest = std::max(slowest, t);
        break;
      }
    }
  }
  line(5, ok == 100, fmt("%d/100 converged, slowest after %zu steps", ok, slowest));
}

void gap_closing() {
  GroupWeights q({0.8, 0.2});
  const std::vector<double> l{10.0, 10.0};
  double gap = 0.6;
  bool decreasing = true;
  std::size_t reached = 0;
  for (std::size_t t = 1; t <= kGapSteps; ++t) {
    q = ctc_dro_update(q, l, {1e-3, 1.0});
    const double g = std::abs(q[0] - q[1]);
    decreasing = decreasing && g < gap;
    gap = g;
    if (gap < kGapTol) {
      reached = t;
      break;
    }
  }
  line(6, decreasing && reached > 0, fmt("gap %.2e, strictly decreasing: %s, below 1e-3 at step %zu", gap,
                                         decreasing ? "yes" : "no", reached));
}

struct Variant {
  std::string name;
  Mode mode;
  LossNorm norm = LossNorm::none;
};

struct Outcome {
  double collapse_fraction = 0.0;
  double max_after_warmup = 0.0;
  double worst_test_cer = 0.0;
};

void experiment() {
  const std::vector<Variant> variants{{"baseline", Mode::baseline},
                                      {"gdro", Mode::gdro},
                                      {"ctcdro", Mode::ctcdro},
                                      {"ctcdro_no_dur", Mode::ctcdro_no_dur},
                                      {"ctcdro_no_smooth", Mode::ctcdro_no_smooth},
                                      {"gdro_frame", Mode::gdro, LossNorm::frame},
                                      {"gdro_target", Mode::gdro, LossNorm::target}};
  std::map<std::string, std::vector<Outcome>> out;
  std::map<std::string, double> elapsed;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const Corpus corpus = build_corpus(collapse_scenario_spec(static_cast<std::uint64_t>(seed)));
    for (const auto& v : variants) {
      TrainConfig c = collapse_scenario_config(v.mode, static_cast<std::uint64_t>(seed));
      c.norm = v.norm;
      const auto t0 = std::chrono::steady_clock::now();
      const RunTrajectory t = train(c, corpus);
      const std::size_t sel = select_checkpoint(t, resolve_selector(c));
      const GroupReport test = evaluate(t.snapshots[sel], corpus, corpus.test, c.lid_prefix);
      elapsed[v.name] += seconds_since(t0);
      Outcome o{fraction_of_steps_above(t, kCollapseWeight), max_weight_after(t, kWarmup), test.summary.max_cer};
      std::printf("  seed %d %-16s collapse %.2f  max q after warmup %.3f  worst test CER %.2f\n", seed,
                  v.name.c_str(), o.collapse_fraction, o.max_after_warmup, o.worst_test_cer);
      std::fflush(stdout);
      out[v.name].push_back(o);
    }
  }

  double slowest = 0.0;
  for (const auto& [name, s] : elapsed) slowest = std::max(slowest, s);

  int dynamics = 0;
  for (int s = 0; s < kSeeds; ++s)
    if (out["gdro"][s].collapse_fraction >= kCollapseFraction && out["ctcdro"][s].max_after_warmup < kStableWeight)
      ++dynamics;
  line(7, dynamics >= 4 && slowest <= kModeSeconds,
       fmt("gdro collapses and ctcdro stays stable on %d/5 seeds, slowest mode %.0fs for 5 seeds", dynamics, slowest));

  int ordering = 0;
  for (int s = 0; s < kSeeds; ++s) {
    const double c = out["ctcdro"][s].worst_test_cer;
    if (c <= out["gdro"][s].worst_test_cer && c <= out["baseline"][s].worst_test_cer) ++ordering;
  }
  line(8, ordering >= 4, fmt("ctcdro worst-group CER <= gdro and baseline on %d/5 seeds", ordering));

  int ablation = 0, smooth_worst = 0;
  for (int s = 0; s < kSeeds; ++s) {
    const double full = out["ctcdro"][s].worst_test_cer;
    const double dur = out["ctcdro_no_dur"][s].worst_test_cer;
    const double smooth = out["ctcdro_no_smooth"][s].worst_test_cer;
    if (full <= dur && full <= smooth) ++ablation;
    if (smooth >= full && smooth >= dur) ++smooth_worst;
  }
  line(9, ablation >= 3, fmt("full ctcdro worst-group CER <= both ablations on %d/5 seeds", ablation));
  line(9, smooth_worst >= 3, fmt("ctcdro_no_smooth worst of the three on %d/5 seeds", smooth_worst), false);

  int frame = 0, target = 0;
  for (int s = 0; s < kSeeds; ++s) {
    frame += out["gdro_frame"][s].max_after_warmup >= kStableWeight;
    target += out["gdro_target"][s].max_after_warmup >= kStableWeight;
  }
  line(10, frame >= 3 && target >= 3,
       fmt("max q after warmup >= 0.8 for gdro frame-normalized on %d/5, target-normalized on %d/5", frame, target),
       false);
}

void metrics() {
  bool exact = true;
  const std::vector<int> abc{0, 1, 2};
  exact = exact && edit_distance(abc, abc) == EditCounts{0, 0, 0, 3};
  exact = exact && edit_distance(abc, std::vector<int>{}) == EditCounts{0, 0, 3, 3};
  exact = exact && edit_distance(abc, std::vector<int>{0, 23, 2}) == EditCounts{0, 1, 0, 3};
  exact = exact && cer({0, 0, 0, 10}) == 0.0 && cer({1, 1, 1, 10}) == 30.0 && cer({12, 0, 0, 10}) == 120.0;
  auto a = aggregate({{0, 10.0}, {1, 20.0}, {2, 60.0}});
  exact = exact && a.max_cer == 60.0 && a.max_group == 2 && a.avg_cer == 30.0;
  exact = exact && aggregate({{0, 5.0}, {1, 7.0}, {2, 7.0}}).max_group == 1;

  Rng rng = make_rng(106, "acceptance");
  int agree = 0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<int> r(uniform_index(rng, 13)), h(uniform_index(rng, 13));
    for (auto& v : r) v = static_cast<int>(uniform_index(rng, 4));
    for (auto& v : h) v = static_cast<int>(uniform_index(rng, 4));
    std::vector<std::vector<std::size_t>> t(r.size() + 1, std::vector<std::size_t>(h.size() + 1));
    for (std::size_t x = 0; x <= r.size(); ++x) t[x][0] = x;
    for (std::size_t y = 0; y <= h.size(); ++y) t[0][y] = y;
    for (std::size_t x = 1; x <= r.size(); ++x)
      for (std::size_t y = 1; y <= h.size(); ++y)
        t[x][y] = std::min({t[x - 1][y] + 1, t[x][y - 1] + 1, t[x - 1][y - 1] + (r[x - 1] != h[y - 1])});
    agree += edit_distance(r, h).errors() == t[r.size()][h.size()];
  }
  line(11, exact && agree == 1000, fmt("unit cases %s, Levenshtein agreement %d/1000", exact ? "exact" : "wrong", agree));
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void determinism() {
  const Corpus corpus = build_corpus(collapse_scenario_spec(0));
  TrainConfig c = collapse_scenario_config(Mode::ctcdro, 3);
  c.steps = 300;
  c.eval_every = 100;
  const auto root = std::filesystem::temp_directory_path() / "ctcdro_acceptance";
  std::filesystem::remove_all(root);
  run_training(c, corpus, root / "a");
  run_training(c, corpus, root / "b");
  bool same = true;
  for (const char* f : {"trajectory.csv", "metrics.json"}) {
    const auto x = slurp(root / "a" / f);
    same = same && !x.empty() && x == slurp(root / "b" / f);
  }
  std::filesystem::remove_all(root);
  line(12, same, same ? "trajectory.csv and metrics.json byte-identical" : "run outputs differ");
}

}  // namespace

int main() {
  ctc_oracle();
  gradient_checks();
  simplex();
  alpha_limit();
  fixed_point();
  gap_closing();
  experiment();
  metrics();
  determinism();
  std::printf("%s: %d gated failure(s)\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
