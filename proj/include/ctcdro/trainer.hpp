#pragma once

// Training loops: length-matched ERM baseline, group DRO with mixed batches,
// CTC-DRO with length-matched single-group batches and a gated smoothed
// weight update, and the two ablations that remove one CTC-DRO component.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctcdro/data.hpp"
#include "ctcdro/dro.hpp"
#include "ctcdro/metrics.hpp"
#include "ctcdro/model.hpp"
#include "ctcdro/sampler.hpp"

namespace ctcdro {

enum class Mode { baseline, gdro, ctcdro, ctcdro_no_dur, ctcdro_no_smooth };

Mode parse_mode(std::string_view s);
std::string_view to_string(Mode m);
/// Whether the mode maintains non-trivial group weights.
bool is_dro(Mode m);
/// Whether the mode draws fixed-size batches mixed across groups.
bool uses_mixed_batches(Mode m);

enum class Selector { automatic, dev_loss, worst_dev_cer };

Selector parse_selector(std::string_view s);
std::string_view to_string(Selector s);

struct TrainConfig {
  int version = 1;
  Mode mode = Mode::ctcdro;
  double eta_theta = 0.002;
  DroHyper dro{1e-3, 1.0};
  /// Target seconds per length-matched batch.
  double batch_duration = 4.0;
  /// Mixed-batch size; 0 picks the size whose mean duration matches batch_duration.
  std::size_t batch_size = 0;
  std::size_t steps = 1000;
  std::size_t accumulate = 1;
  std::size_t eval_every = 100;
  std::uint64_t seed = 0;
  LossNorm norm = LossNorm::none;
  bool lid_prefix = false;
  GroupSampling group_sampling = GroupSampling::uniform;
  bool with_replacement = false;
  std::size_t context = 1;
  std::size_t hidden = 64;
  OptimizerKind optimizer = OptimizerKind::sgd;
  /// `automatic`: dev loss for the baseline, worst-group dev CER for DRO modes.
  Selector selector = Selector::automatic;
};

/// Throws ConfigInvalid.
void validate(const TrainConfig& c);

struct GroupReport {
  std::vector<EditCounts> counts;
  std::vector<double> cer;
  Aggregate summary;
  /// NaN when the run has no LID prefix.
  double lid_accuracy = 0.0;
};

struct StepRecord {
  std::size_t step = 0;
  /// Sampled group, or -1 for a mixed batch.
  int group = -1;
  std::vector<double> q;
  /// Value of the descent objective for this step.
  double train_loss = 0.0;
  bool weights_updated = false;
};

struct EvalRecord {
  std::size_t step = 0;
  std::vector<double> dev_loss;
  double mean_dev_loss = 0.0;
  GroupReport dev;
  std::string checkpoint;
};

struct RunTrajectory {
  std::size_t groups = 0;
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  /// Parameter snapshots, one per eval.
  std::vector<ModelParams> snapshots;
  std::size_t skipped = 0;
  std::size_t weight_updates = 0;
  std::size_t batch_size = 0;
};

/// Effective mixed-batch size for `c` on `corpus`.
std::size_t resolve_batch_size(const TrainConfig& c, const Corpus& corpus);
/// Model dims implied by a config and corpus (LID tokens appended to the vocab).
ModelDims model_dims(const TrainConfig& c, const Corpus& corpus);
/// Target for training and scoring; with a LID prefix the group token comes first.
LabelSequence training_target(const Utterance& u, const Corpus& corpus, bool lid_prefix);

RunTrajectory train(const TrainConfig& config, const Corpus& corpus);

/// Index into `trajectory.evals`. Ties go to the earliest step. Throws NoEvals.
std::size_t select_checkpoint(const RunTrajectory& trajectory, Selector selector,
                              std::optional<double> baseline_worst_dev_cer = std::nullopt);
Selector resolve_selector(const TrainConfig& c);

/// Greedy-decodes `split` and scores it per group (micro-averaged CER).
GroupReport evaluate(const ModelParams& params, const Corpus& corpus, std::span<const std::size_t> split,
                     bool lid_prefix);

/// Length-matched dev loss per group: summed loss per second times `batch_duration`.
std::vector<double> length_matched_loss(const ModelParams& params, const Corpus& corpus,
                                        std::span<const std::size_t> split, const TrainConfig& config);

struct RunSummary {
  std::size_t selected_eval = 0;
  std::size_t selected_step = 0;
  GroupReport dev;
  GroupReport test;
};

/// Writes config.json, trajectory.csv, metrics.json and checkpoints/ under `dir`.
RunSummary write_run(const TrainConfig& config, const Corpus& corpus, const RunTrajectory& trajectory,
                     const std::filesystem::path& dir);

/// train + write_run.
RunSummary run_training(const TrainConfig& config, const Corpus& corpus, const std::filesystem::path& dir);

}  // namespace ctcdro
