#pragma once

// The weight-collapse scenario: three groups sharing one vocabulary, one of
// which has three times the frames per label and the heaviest noise. Its
// per-utterance loss stays the largest by a wide margin while its per-second
// loss is only moderately larger than the others'.

#include <cstdint>
#include <span>

#include "ctcdro/config.hpp"
#include "ctcdro/trainer.hpp"

namespace ctcdro {

CorpusSpec collapse_scenario_spec(std::uint64_t seed = 0);
TrainConfig collapse_scenario_config(Mode mode, std::uint64_t seed = 0);

/// generate_corpus followed by split.
Corpus build_corpus(const CorpusSpec& spec);

/// Fraction of logged steps whose largest group weight exceeds `threshold`.
double fraction_of_steps_above(const RunTrajectory& t, double threshold);
/// Largest group weight seen after the first `warmup_fraction` of steps.
double max_weight_after(const RunTrajectory& t, double warmup_fraction);

}  // namespace ctcdro
