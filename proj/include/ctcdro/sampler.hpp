#pragma once

// Batch construction for group-robust training. Single-group batches are
// matched on duration; mixed batches have a fixed utterance count. The loss
// ledger holds group-weight updates back until every group has reported.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "ctcdro/dro.hpp"
#include "ctcdro/rng.hpp"

namespace ctcdro {

enum class GroupSampling { uniform, proportional };

GroupSampling parse_group_sampling(std::string_view s);
std::string_view to_string(GroupSampling s);

/// Draws a group id, uniformly or in proportion to pool sizes.
class GroupSampler {
 public:
  GroupSampler(std::vector<std::size_t> pool_sizes, GroupSampling mode);

  int sample(Rng& rng) const;
  std::size_t groups() const { return pool_sizes_.size(); }

 private:
  std::vector<std::size_t> pool_sizes_;
  std::size_t total_ = 0;
  GroupSampling mode_;
};

/// Uniform draw over `groups` ids.
int sample_group(std::size_t groups, Rng& rng);

/// Cycles through a fixed id pool. Without replacement the pool is reshuffled
/// at the start of every epoch, so each id appears once per pass.
class PoolCycler {
 public:
  explicit PoolCycler(std::vector<std::size_t> ids, bool with_replacement = false);

  std::size_t next(Rng& rng);
  std::size_t size() const { return ids_.size(); }
  /// Completed passes over the pool (without-replacement mode).
  std::size_t epoch() const { return epoch_; }

 private:
  std::vector<std::size_t> ids_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
  bool with_replacement_;
  bool shuffled_ = false;
};

struct BatchPlan {
  int group = 0;
  std::vector<std::size_t> utterances;
  double total_duration = 0.0;
};

/// Appends utterances from `pool` until the total duration meets or exceeds
/// `target_seconds`. `durations` is indexed by utterance id.
BatchPlan make_batch(PoolCycler& pool, std::span<const double> durations, int group, double target_seconds,
                     Rng& rng);

/// Fixed-size batches drawn from the union of all groups.
class MixedBatcher {
 public:
  MixedBatcher(std::vector<std::size_t> ids, std::size_t batch_size, bool with_replacement = false);

  std::vector<std::size_t> next(Rng& rng);
  std::size_t batch_size() const { return batch_size_; }

 private:
  PoolCycler pool_;
  std::size_t batch_size_;
};

/// Per-group lists of summed batch losses awaiting a weight update.
class LossLedger {
 public:
  explicit LossLedger(std::size_t groups);

  void record(int group, double summed_loss);
  /// True iff every group has at least one entry.
  bool ready() const;
  /// Per-group mean of the recorded sums; empties every list. Throws NotReady.
  GroupLosses drain();

  std::size_t groups() const { return entries_.size(); }
  std::span<const double> entries(int group) const { return entries_.at(static_cast<std::size_t>(group)); }

 private:
  std::vector<std::vector<double>> entries_;
};

}  // namespace ctcdro
