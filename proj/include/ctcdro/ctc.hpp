#pragma once

// Connectionist temporal classification: alignment semantics, the log-space
// forward/backward recursions over the blank-interleaved label lattice, an
// exhaustive-enumeration oracle and best-path decoding.
//
// Conventions: a LogProbSequence has D rows (frames) and V+1 columns; column
// V is the blank. Label ids live in [0, V).

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace ctcdro {

using LabelSequence = std::vector<int>;
using Alignment = std::vector<int>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

/// Numerically stable log(exp(a) + exp(b)).
double log_add(double a, double b);
/// Numerically stable log(sum(exp(x))). Returns kLogZero for an empty span.
double log_sum_exp(std::span<const double> xs);

/// A D x (V+1) table of per-frame natural-log probabilities.
///
/// The checked constructor enforces that each row log-sum-exps to zero within
/// 1e-9 and that no entry is above 1e-12. `unchecked` skips that validation and
/// is meant for finite-difference probes that perturb individual entries.
class LogProbSequence {
 public:
  explicit LogProbSequence(RowMatrix table);

  static LogProbSequence unchecked(RowMatrix table);
  /// Row-wise log-softmax of arbitrary real logits.
  static LogProbSequence from_logits(const RowMatrix& logits);

  std::size_t frames() const { return static_cast<std::size_t>(table_.rows()); }
  /// Number of non-blank labels V; the table has V+1 columns.
  int vocab() const { return static_cast<int>(table_.cols()) - 1; }
  int blank() const { return vocab(); }

  double operator()(std::size_t d, int k) const { return table_(static_cast<Eigen::Index>(d), k); }
  const RowMatrix& table() const { return table_; }

 private:
  struct NoCheck {};
  LogProbSequence(RowMatrix table, NoCheck);

  RowMatrix table_;
};

struct CtcResult {
  double loss = 0.0;
  /// d loss / d logprob, same shape as the input table. Empty for loss-only calls.
  RowMatrix grad;
};

/// Merges consecutive duplicates, then removes blanks.
LabelSequence collapse(std::span<const int> alignment, int blank);

/// Smallest D for which `labels` is reachable: U plus one separating blank per
/// adjacent repeat.
std::size_t min_frames(std::span<const int> labels);

/// Throws InvalidLabels unless every id is in [0, vocab).
void check_labels(std::span<const int> labels, int vocab);

inline constexpr std::uint64_t kDefaultOracleBudget = 1'000'000;

/// Every length-D alignment over V+1 symbols collapsing to `labels`, in
/// lexicographic order. Exhaustive; throws OracleTooLarge when (V+1)^D exceeds
/// `budget`.
std::vector<Alignment> valid_alignments(std::size_t frames, std::span<const int> labels, int vocab,
                                        std::uint64_t budget = kDefaultOracleBudget);

/// Loss by explicit marginalization over `valid_alignments`. Test oracle.
CtcResult ctc_loss_bruteforce(const LogProbSequence& lp, std::span<const int> labels,
                              std::uint64_t budget = kDefaultOracleBudget);

/// Loss by the O(D*U) forward recursion.
CtcResult ctc_forward(const LogProbSequence& lp, std::span<const int> labels);

/// Loss and gradient with respect to the log-probability entries, by
/// forward-backward.
CtcResult ctc_grad(const LogProbSequence& lp, std::span<const int> labels);

/// Maps a gradient wrt log-softmax outputs to a gradient wrt the logits that
/// produced them: g_k - p_k * sum_j g_j per row.
RowMatrix logit_gradient(const LogProbSequence& lp, const RowMatrix& grad_logprob);

/// Best-path decoding: per-frame argmax (ties to the lowest id), then collapse.
LabelSequence greedy_decode(const LogProbSequence& lp);

}  // namespace ctcdro
