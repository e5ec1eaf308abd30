#include "ctcdro/sampler.hpp"

#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "ctcdro/errors.hpp"

namespace ctcdro {

GroupSampling parse_group_sampling(std::string_view s) {
  if (s == "uniform") return GroupSampling::uniform;
  if (s == "proportional") return GroupSampling::proportional;
  throw ConfigInvalid("unknown group sampling '" + std::string(s) + "'");
}

std::string_view to_string(GroupSampling s) {
  return s == GroupSampling::uniform ? "uniform" : "proportional";
}

GroupSampler::GroupSampler(std::vector<std::size_t> pool_sizes, GroupSampling mode)
    : pool_sizes_(std::move(pool_sizes)), mode_(mode) {
  if (pool_sizes_.empty()) throw ConfigInvalid("group sampler needs at least one group");
  total_ = std::accumulate(pool_sizes_.begin(), pool_sizes_.end(), std::size_t{0});
  if (mode_ == GroupSampling::proportional && total_ == 0)
    throw ConfigInvalid("proportional group sampling needs nonempty pools");
}

int GroupSampler::sample(Rng& rng) const {
  if (mode_ == GroupSampling::uniform) return sample_group(pool_sizes_.size(), rng);
  std::uint64_t r = uniform_index(rng, total_);
  for (std::size_t g = 0; g < pool_sizes_.size(); ++g) {
    if (r < pool_sizes_[g]) return static_cast<int>(g);
    r -= pool_sizes_[g];
  }
  return static_cast<int>(pool_sizes_.size() - 1);
}

int sample_group(std::size_t groups, Rng& rng) {
  if (groups == 0) throw ConfigInvalid("cannot sample from zero groups");
  return static_cast<int>(uniform_index(rng, groups));
}

PoolCycler::PoolCycler(std::vector<std::size_t> ids, bool with_replacement)
    : ids_(std::move(ids)), with_replacement_(with_replacement) {
  if (ids_.empty()) throw ConfigInvalid("cannot cycle an empty pool");
}

std::size_t PoolCycler::next(Rng& rng) {
  if (with_replacement_) return ids_[uniform_index(rng, ids_.size())];
  if (cursor_ == ids_.size()) {
    cursor_ = 0;
    ++epoch_;
    shuffled_ = false;
  }
  if (!shuffled_) {
    for (std::size_t i = ids_.size(); i > 1; --i) std::swap(ids_[i - 1], ids_[uniform_index(rng, i)]);
    shuffled_ = true;
  }
  return ids_[cursor_++];
}

BatchPlan make_batch(PoolCycler& pool, std::span<const double> durations, int group, double target_seconds,
                     Rng& rng) {
  if (!(target_seconds > 0.0)) throw ConfigInvalid("batch duration must be positive");
  BatchPlan plan;
  plan.group = group;
  while (plan.total_duration < target_seconds) {
    const std::size_t id = pool.next(rng);
    const double dur = durations[id];
    if (!(dur > 0.0)) throw DataError("utterance " + std::to_string(id) + " has nonpositive duration");
    plan.utterances.push_back(id);
    plan.total_duration += dur;
  }
  return plan;
}

MixedBatcher::MixedBatcher(std::vector<std::size_t> ids, std::size_t batch_size, bool with_replacement)
    : pool_(std::move(ids), with_replacement), batch_size_(batch_size) {
  if (batch_size_ == 0) throw ConfigInvalid("batch size must be positive");
}

std::vector<std::size_t> MixedBatcher::next(Rng& rng) {
  std::vector<std::size_t> out;
  out.reserve(batch_size_);
  for (std::size_t i = 0; i < batch_size_; ++i) out.push_back(pool_.next(rng));
  return out;
}

LossLedger::LossLedger(std::size_t groups) : entries_(groups) {
  if (groups == 0) throw ConfigInvalid("loss ledger needs at least one group");
}

void LossLedger::record(int group, double summed_loss) {
  if (!std::isfinite(summed_loss)) throw DataError("non-finite batch loss recorded");
  entries_.at(static_cast<std::size_t>(group)).push_back(summed_loss);
}

bool LossLedger::ready() const {
  for (const auto& e : entries_)
    if (e.empty()) return false;
  return true;
}

GroupLosses LossLedger::drain() {
  if (!ready()) throw NotReady("loss ledger drained before every group reported");
  GroupLosses out;
  out.reserve(entries_.size());
  for (auto& e : entries_) {
    out.push_back(std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(e.size()));
    e.clear();
  }
  return out;
}

}  // namespace ctcdro
