#include "ctcdro/dro.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "ctcdro/errors.hpp"

namespace ctcdro {

GroupWeights::GroupWeights(std::vector<double> q) : q_(std::move(q)) {
  if (q_.empty()) throw InvalidWeights("group weights need at least one group");
  double sum = 0.0;
  for (double v : q_) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidWeights("group weights must be finite and nonnegative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw InvalidWeights("group weights must sum to 1, got " + std::to_string(sum));
}

GroupWeights GroupWeights::uniform(std::size_t groups) {
  if (groups == 0) throw InvalidWeights("group weights need at least one group");
  return GroupWeights(std::vector<double>(groups, 1.0 / static_cast<double>(groups)));
}

double GroupWeights::max() const { return *std::max_element(q_.begin(), q_.end()); }

namespace {

void check_losses(const GroupWeights& q, std::span<const double> losses) {
  if (losses.size() != q.size())
    throw InvalidWeights("expected " + std::to_string(q.size()) + " group losses, got " +
                         std::to_string(losses.size()));
  for (double l : losses)
    if (!std::isfinite(l) || l < 0.0) throw InvalidWeights("group losses must be finite and nonnegative");
}

// q'_g ∝ q_g exp(e_g), with the max exponent subtracted before exponentiating.
GroupWeights reweight(const GroupWeights& q, const std::vector<double>& exponents) {
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < q.size(); ++g)
    if (q[g] > 0.0) hi = std::max(hi, exponents[g]);
  // A common exponent leaves q unchanged exactly.
  bool flat = true;
  for (std::size_t g = 0; g < q.size(); ++g)
    if (q[g] > 0.0 && exponents[g] != hi) flat = false;
  if (flat) return q;
  std::vector<double> next(q.size(), 0.0);
  double z = 0.0;
  for (std::size_t g = 0; g < q.size(); ++g) {
    if (q[g] == 0.0) continue;
    next[g] = q[g] * std::exp(exponents[g] - hi);
    z += next[g];
  }
  for (double& v : next) v /= z;
  // Absorb the last ulp or so of rounding into the largest entry.
  const double sum = std::accumulate(next.begin(), next.end(), 0.0);
  auto top = std::max_element(next.begin(), next.end());
  *top = std::max(0.0, *top + (1.0 - sum));
  return GroupWeights(std::move(next));
}

}  // namespace

GroupWeights group_dro_update(const GroupWeights& q, std::span<const double> losses, double eta_q) {
  check_losses(q, losses);
  std::vector<double> e(q.size());
  for (std::size_t g = 0; g < q.size(); ++g) e[g] = eta_q * losses[g];
  return reweight(q, e);
}

GroupWeights ctc_dro_update(const GroupWeights& q, std::span<const double> losses, const DroHyper& h) {
  check_losses(q, losses);
  if (h.alpha < 0.0) throw InvalidWeights("alpha must be nonnegative");
  std::vector<double> e(q.size(), 0.0);
  for (std::size_t g = 0; g < q.size(); ++g) {
    const double denom = q[g] + h.alpha;
    if (denom == 0.0) throw DivisionByZero("alpha = 0 with a zero group weight");
    e[g] = h.eta_q * losses[g] / denom;
  }
  return reweight(q, e);
}

OptimalWeights optimal_weights(std::span<const double> losses, double alpha) {
  const double total = std::accumulate(losses.begin(), losses.end(), 0.0);
  if (!(total > 0.0)) throw InvalidWeights("optimal weights need a positive total loss");
  const double groups = static_cast<double>(losses.size());
  OptimalWeights out;
  out.q.reserve(losses.size());
  out.valid = true;
  for (double l : losses) {
    const double q = l * (1.0 + groups * alpha) / total - alpha;
    out.q.push_back(q);
    if (!(q > 0.0)) out.valid = false;
  }
  return out;
}

LossNorm parse_loss_norm(std::string_view s) {
  if (s == "none") return LossNorm::none;
  if (s == "frame") return LossNorm::frame;
  if (s == "target") return LossNorm::target;
  throw InvalidWeights("unknown loss normalization '" + std::string(s) + "'");
}

std::string_view to_string(LossNorm n) {
  switch (n) {
    case LossNorm::none: return "none";
    case LossNorm::frame: return "frame";
    case LossNorm::target: return "target";
  }
  return "none";
}

double normalize_loss(const UtteranceLoss& u, LossNorm mode) {
  switch (mode) {
    case LossNorm::none: return u.loss;
    case LossNorm::frame: return u.loss / static_cast<double>(std::max<std::size_t>(u.frames, 1));
    case LossNorm::target: return u.loss / static_cast<double>(std::max<std::size_t>(u.targets, 1));
  }
  return u.loss;
}

std::vector<double> normalize_losses(std::span<const UtteranceLoss> items, LossNorm mode) {
  std::vector<double> out;
  out.reserve(items.size());
  for (const auto& u : items) out.push_back(normalize_loss(u, mode));
  return out;
}

double scale_for_descent(double summed_batch_loss, double q_g, std::size_t group_count) {
  return q_g * static_cast<double>(group_count) * summed_batch_loss;
}

}  // namespace ctcdro
