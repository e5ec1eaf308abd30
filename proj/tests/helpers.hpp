#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ctcdro/ctc.hpp"
#include "ctcdro/rng.hpp"

namespace testing {

using ctcdro::RowMatrix;

inline RowMatrix random_logits(ctcdro::Rng& rng, std::size_t rows, std::size_t cols, double spread = 4.0) {
  RowMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = spread * (ctcdro::uniform01(rng) - 0.5);
  return m;
}

inline ctcdro::LogProbSequence random_lp(ctcdro::Rng& rng, std::size_t frames, int vocab) {
  return ctcdro::LogProbSequence::from_logits(random_logits(rng, frames, static_cast<std::size_t>(vocab) + 1));
}

inline std::vector<int> random_labels(ctcdro::Rng& rng, std::size_t length, int vocab) {
  std::vector<int> y(length);
  for (auto& v : y) v = static_cast<int>(ctcdro::uniform_index(rng, static_cast<std::uint64_t>(vocab)));
  return y;
}

/// max |a - b| / max(max |b|, floor)
inline double rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
  double diff = 0.0, scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return diff / scale;
}

}  // namespace testing
