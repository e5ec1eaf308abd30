#include "ctcdro/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ctcdro/errors.hpp"

namespace ctcdro {

double log_add(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return kLogZero;
  const double hi = *std::max_element(xs.begin(), xs.end());
  if (hi == kLogZero) return kLogZero;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

LogProbSequence::LogProbSequence(RowMatrix table) : table_(std::move(table)) {
  if (table_.rows() < 1 || table_.cols() < 2)
    throw InvalidLogProbs("log-prob table needs at least one frame and one label plus blank");
  for (Eigen::Index d = 0; d < table_.rows(); ++d) {
    const double* row = table_.row(d).data();
    std::span<const double> r(row, static_cast<std::size_t>(table_.cols()));
    for (double v : r) {
      if (std::isnan(v) || v > 1e-12)
        throw InvalidLogProbs("log-prob entry out of range at frame " + std::to_string(d));
    }
    if (std::abs(log_sum_exp(r)) > 1e-9)
      throw InvalidLogProbs("log-prob row " + std::to_string(d) + " is not normalized");
  }
}

LogProbSequence::LogProbSequence(RowMatrix table, NoCheck) : table_(std::move(table)) {
  if (table_.rows() < 1 || table_.cols() < 2)
    throw InvalidLogProbs("log-prob table needs at least one frame and one label plus blank");
}

LogProbSequence LogProbSequence::unchecked(RowMatrix table) {
  return LogProbSequence(std::move(table), NoCheck{});
}

LogProbSequence LogProbSequence::from_logits(const RowMatrix& logits) {
  RowMatrix out(logits.rows(), logits.cols());
  for (Eigen::Index d = 0; d < logits.rows(); ++d) {
    const double hi = logits.row(d).maxCoeff();
    const double lse = hi + std::log((logits.row(d).array() - hi).exp().sum());
    out.row(d) = logits.row(d).array() - lse;
  }
  return LogProbSequence(std::move(out), NoCheck{});
}

LabelSequence collapse(std::span<const int> alignment, int blank) {
  LabelSequence out;
  int prev = -1;
  for (int s : alignment) {
    if (s != prev && s != blank) out.push_back(s);
    prev = s;
  }
  return out;
}

std::size_t min_frames(std::span<const int> labels) {
  std::size_t n = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (labels[i] == labels[i - 1]) ++n;
  return n;
}

void check_labels(std::span<const int> labels, int vocab) {
  for (int l : labels)
    if (l < 0 || l >= vocab)
      throw InvalidLabels("label " + std::to_string(l) + " outside [0, " + std::to_string(vocab) + ")");
}

namespace {

void require_feasible(std::size_t frames, std::span<const int> labels) {
  if (min_frames(labels) > frames)
    throw NoValidAlignment("no valid alignment: " + std::to_string(labels.size()) + " labels need at least " +
                           std::to_string(min_frames(labels)) + " frames, have " + std::to_string(frames));
}

// Blank-interleaved lattice: blank, y1, blank, y2, ..., yU, blank.
std::vector<int> extend(std::span<const int> labels, int blank) {
  std::vector<int> ext;
  ext.reserve(2 * labels.size() + 1);
  ext.push_back(blank);
  for (int l : labels) {
    ext.push_back(l);
    ext.push_back(blank);
  }
  return ext;
}

// Whether state s may be entered directly from s-2 (skipping a blank).
bool can_skip(const std::vector<int>& ext, std::size_t s, int blank) {
  return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
}

RowMatrix forward_table(const LogProbSequence& lp, const std::vector<int>& ext) {
  const auto frames = static_cast<Eigen::Index>(lp.frames());
  const auto states = static_cast<Eigen::Index>(ext.size());
  const int blank = lp.blank();
  RowMatrix alpha = RowMatrix::Constant(frames, states, kLogZero);
  alpha(0, 0) = lp(0, ext[0]);
  if (states > 1) alpha(0, 1) = lp(0, ext[1]);
  for (Eigen::Index d = 1; d < frames; ++d) {
    for (Eigen::Index s = 0; s < states; ++s) {
      double acc = alpha(d - 1, s);
      if (s >= 1) acc = log_add(acc, alpha(d - 1, s - 1));
      if (can_skip(ext, static_cast<std::size_t>(s), blank)) acc = log_add(acc, alpha(d - 1, s - 2));
      if (acc != kLogZero) alpha(d, s) = acc + lp(static_cast<std::size_t>(d), ext[static_cast<std::size_t>(s)]);
    }
  }
  return alpha;
}

double total_log_prob(const RowMatrix& alpha) {
  const Eigen::Index last = alpha.rows() - 1;
  const Eigen::Index states = alpha.cols();
  double lp = alpha(last, states - 1);
  if (states > 1) lp = log_add(lp, alpha(last, states - 2));
  return lp;
}

}  // namespace

std::vector<Alignment> valid_alignments(std::size_t frames, std::span<const int> labels, int vocab,
                                        std::uint64_t budget) {
  check_labels(labels, vocab);
  const auto symbols = static_cast<std::uint64_t>(vocab) + 1;
  std::uint64_t total = 1;
  for (std::size_t d = 0; d < frames; ++d) {
    if (total > budget / symbols)
      throw OracleTooLarge("(V+1)^D exceeds the oracle budget of " + std::to_string(budget));
    total *= symbols;
  }
  std::vector<Alignment> out;
  Alignment z(frames, 0);
  for (std::uint64_t code = 0; code < total; ++code) {
    std::uint64_t c = code;
    for (std::size_t d = frames; d-- > 0;) {
      z[d] = static_cast<int>(c % symbols);
      c /= symbols;
    }
    const LabelSequence y = collapse(z, vocab);
    if (std::equal(y.begin(), y.end(), labels.begin(), labels.end())) out.push_back(z);
  }
  return out;
}

CtcResult ctc_loss_bruteforce(const LogProbSequence& lp, std::span<const int> labels, std::uint64_t budget) {
  const auto alignments = valid_alignments(lp.frames(), labels, lp.vocab(), budget);
  if (alignments.empty())
    throw NoValidAlignment("no valid alignment of length " + std::to_string(lp.frames()));
  std::vector<double> path_scores;
  path_scores.reserve(alignments.size());
  for (const auto& z : alignments) {
    double s = 0.0;
    for (std::size_t d = 0; d < z.size(); ++d) s += lp(d, z[d]);
    path_scores.push_back(s);
  }
  return CtcResult{-log_sum_exp(path_scores), {}};
}

CtcResult ctc_forward(const LogProbSequence& lp, std::span<const int> labels) {
  check_labels(labels, lp.vocab());
  require_feasible(lp.frames(), labels);
  const RowMatrix alpha = forward_table(lp, extend(labels, lp.blank()));
  return CtcResult{-total_log_prob(alpha), {}};
}

CtcResult ctc_grad(const LogProbSequence& lp, std::span<const int> labels) {
  check_labels(labels, lp.vocab());
  require_feasible(lp.frames(), labels);
  const int blank = lp.blank();
  const std::vector<int> ext = extend(labels, blank);
  const RowMatrix alpha = forward_table(lp, ext);
  const double log_p = total_log_prob(alpha);
  if (log_p == kLogZero) throw NoValidAlignment("all valid alignments have zero probability");

  const auto frames = static_cast<Eigen::Index>(lp.frames());
  const auto states = static_cast<Eigen::Index>(ext.size());
  // beta(d, s): log-probability of emitting the remaining suffix after frame d,
  // given state s at frame d (emission at d excluded).
  RowMatrix beta = RowMatrix::Constant(frames, states, kLogZero);
  beta(frames - 1, states - 1) = 0.0;
  if (states > 1) beta(frames - 1, states - 2) = 0.0;
  for (Eigen::Index d = frames - 2; d >= 0; --d) {
    const auto next = static_cast<std::size_t>(d + 1);
    for (Eigen::Index s = 0; s < states; ++s) {
      double acc = beta(d + 1, s) + lp(next, ext[static_cast<std::size_t>(s)]);
      if (s + 1 < states) acc = log_add(acc, beta(d + 1, s + 1) + lp(next, ext[static_cast<std::size_t>(s + 1)]));
      if (s + 2 < states && can_skip(ext, static_cast<std::size_t>(s + 2), blank))
        acc = log_add(acc, beta(d + 1, s + 2) + lp(next, ext[static_cast<std::size_t>(s + 2)]));
      beta(d, s) = acc;
    }
  }

  RowMatrix grad = RowMatrix::Zero(frames, lp.vocab() + 1);
  for (Eigen::Index d = 0; d < frames; ++d) {
    for (Eigen::Index s = 0; s < states; ++s) {
      const double occ = alpha(d, s) + beta(d, s);
      if (occ == kLogZero) continue;
      grad(d, ext[static_cast<std::size_t>(s)]) -= std::exp(occ - log_p);
    }
  }
  return CtcResult{-log_p, std::move(grad)};
}

RowMatrix logit_gradient(const LogProbSequence& lp, const RowMatrix& grad_logprob) {
  const RowMatrix& table = lp.table();
  if (grad_logprob.rows() != table.rows() || grad_logprob.cols() != table.cols())
    throw InvalidLogProbs("gradient shape does not match the log-prob table");
  RowMatrix out(table.rows(), table.cols());
  for (Eigen::Index d = 0; d < table.rows(); ++d) {
    const double row_sum = grad_logprob.row(d).sum();
    out.row(d) = grad_logprob.row(d).array() - table.row(d).array().exp() * row_sum;
  }
  return out;
}

LabelSequence greedy_decode(const LogProbSequence& lp) {
  Alignment best(lp.frames());
  const RowMatrix& table = lp.table();
  for (Eigen::Index d = 0; d < table.rows(); ++d) {
    Eigen::Index arg = 0;
    for (Eigen::Index k = 1; k < table.cols(); ++k)
      if (table(d, k) > table(d, arg)) arg = k;
    best[static_cast<std::size_t>(d)] = static_cast<int>(arg);
  }
  return collapse(best, lp.blank());
}

}  // namespace ctcdro
