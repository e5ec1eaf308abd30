#include "ctcdro/experiment.hpp"

#include <algorithm>
#include <cmath>

namespace ctcdro {

CorpusSpec collapse_scenario_spec(std::uint64_t seed) {
  CorpusSpec s;
  s.seed = seed;
  s.feature_dim = 12;
  s.options.gap_prob = 0.2;
  s.options.disjoint_vocab = false;
  s.split = {0.6, 0.2, 0.2};
  GroupSpec slow{"slow", 1500, 6, 4, 10, 6.0, 0.0, 0.9, 0.02};
  GroupSpec mid{"mid", 1500, 6, 4, 10, 2.0, 0.0, 0.6, 0.02};
  GroupSpec hard{"hard", 1500, 6, 4, 10, 2.0, 0.0, 0.7, 0.02};
  s.groups = {slow, mid, hard};
  return s;
}

TrainConfig collapse_scenario_config(Mode mode, std::uint64_t seed) {
  TrainConfig c;
  c.mode = mode;
  c.seed = seed;
  c.eta_theta = 0.002;
  // losses here are a few nats per utterance, far smaller than real speech,
  // so the weight step is raised to get comparable exponents
  c.dro = {1e-2, 1.0};
  c.batch_duration = 4.0;
  c.steps = 4000;
  c.eval_every = 200;
  c.hidden = 32;
  return c;
}

Corpus build_corpus(const CorpusSpec& spec) {
  Corpus c = generate_corpus(spec.groups, spec.feature_dim, spec.seed, spec.options);
  return split(std::move(c), spec.split, spec.seed);
}

double fraction_of_steps_above(const RunTrajectory& t, double threshold) {
  if (t.steps.empty()) return 0.0;
  std::size_t n = 0;
  for (const auto& s : t.steps)
    if (*std::max_element(s.q.begin(), s.q.end()) > threshold) ++n;
  return static_cast<double>(n) / static_cast<double>(t.steps.size());
}

double max_weight_after(const RunTrajectory& t, double warmup_fraction) {
  const auto start = static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(t.steps.size())));
  double m = 0.0;
  for (std::size_t i = start; i < t.steps.size(); ++i)
    m = std::max(m, *std::max_element(t.steps[i].q.begin(), t.steps[i].q.end()));
  return m;
}

}  // namespace ctcdro
