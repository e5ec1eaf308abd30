#pragma once

// Character error rate and group aggregation.

#include <cstddef>
#include <map>
#include <span>
#include <utility>
#include <vector>

namespace ctcdro {

struct EditCounts {
  std::size_t insertions = 0;
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t reference_length = 0;

  std::size_t errors() const { return insertions + substitutions + deletions; }
  EditCounts& operator+=(const EditCounts& o);
  friend bool operator==(const EditCounts&, const EditCounts&) = default;
};

/// Unit-cost minimum edit alignment of `hyp` against `ref`. Among minimum-cost
/// alignments the back-trace prefers fewer insertions, then fewer deletions.
EditCounts edit_distance(std::span<const int> ref, std::span<const int> hyp);

/// (I + S + D) / N * 100. Throws EmptyReference when N == 0.
double cer(const EditCounts& counts);

struct Aggregate {
  double max_cer = 0.0;
  int max_group = 0;
  double avg_cer = 0.0;
};

/// Worst group (ties to the lowest id) and unweighted mean.
Aggregate aggregate(const std::map<int, double>& per_group);

/// Percentage of pairs (true token, decoded first token) that match. A decoded
/// token of -1 stands for an empty hypothesis and never matches.
double lid_accuracy(std::span<const std::pair<int, int>> pairs);

}  // namespace ctcdro
