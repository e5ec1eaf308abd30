#pragma once

// Group-weight updates on the probability simplex.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace ctcdro {

/// A point on the |G|-simplex.
class GroupWeights {
 public:
  /// Validates nonnegativity and unit sum (within 1e-12).
  explicit GroupWeights(std::vector<double> q);
  static GroupWeights uniform(std::size_t groups);

  std::size_t size() const { return q_.size(); }
  double operator[](std::size_t g) const { return q_[g]; }
  std::span<const double> values() const { return q_; }
  double max() const;

 private:
  std::vector<double> q_;
};

struct DroHyper {
  double eta_q = 1e-3;
  double alpha = 1.0;
};

/// Per-group losses feeding a weight update; nonnegative and finite.
using GroupLosses = std::vector<double>;

/// Exponentiated-gradient ascent: q'_g ∝ q_g exp(eta_q L_g).
GroupWeights group_dro_update(const GroupWeights& q, std::span<const double> losses, double eta_q);

/// Smoothed ascent: q'_g ∝ q_g exp(eta_q L_g / (q_g + alpha)).
/// Throws DivisionByZero if alpha == 0 and some q_g == 0.
GroupWeights ctc_dro_update(const GroupWeights& q, std::span<const double> losses, const DroHyper& h);

struct OptimalWeights {
  std::vector<double> q;
  bool valid = false;  ///< every entry strictly positive
};

/// Stationary point of sum_g log(q_g + alpha) L_g over the simplex, assuming
/// an interior optimum: q_g = L_g (1 + |G| alpha) / sum L - alpha.
OptimalWeights optimal_weights(std::span<const double> losses, double alpha);

enum class LossNorm { none, frame, target };

LossNorm parse_loss_norm(std::string_view s);
std::string_view to_string(LossNorm n);

struct UtteranceLoss {
  double loss = 0.0;
  std::size_t frames = 1;
  std::size_t targets = 0;
};

/// Per-utterance length normalization: loss/D for `frame`, loss/max(U,1) for `target`.
double normalize_loss(const UtteranceLoss& u, LossNorm mode);
std::vector<double> normalize_losses(std::span<const UtteranceLoss> items, LossNorm mode);

/// q_g * |G| * summed_batch_loss; the identity at uniform weights.
double scale_for_descent(double summed_batch_loss, double q_g, std::size_t group_count);

}  // namespace ctcdro
