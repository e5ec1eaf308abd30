#include "ctcdro/metrics.hpp"

#include <algorithm>
#include <limits>

#include "ctcdro/errors.hpp"

namespace ctcdro {

EditCounts& EditCounts::operator+=(const EditCounts& o) {
  insertions += o.insertions;
  substitutions += o.substitutions;
  deletions += o.deletions;
  reference_length += o.reference_length;
  return *this;
}

EditCounts edit_distance(std::span<const int> ref, std::span<const int> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  // Lexicographic cost (edits, insertions, deletions) makes the tie-break part
  // of the DP itself rather than of the back-trace.
  struct Cell {
    std::size_t cost = 0, ins = 0, del = 0, sub = 0;
    bool operator<(const Cell& o) const {
      if (cost != o.cost) return cost < o.cost;
      if (ins != o.ins) return ins < o.ins;
      return del < o.del;
    }
  };
  std::vector<Cell> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = Cell{j, j, 0, 0};
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = Cell{i, 0, i, 0};
    for (std::size_t j = 1; j <= m; ++j) {
      Cell diag = prev[j - 1];
      if (ref[i - 1] != hyp[j - 1]) {
        ++diag.cost;
        ++diag.sub;
      }
      Cell del = prev[j];
      ++del.cost;
      ++del.del;
      Cell ins = cur[j - 1];
      ++ins.cost;
      ++ins.ins;
      cur[j] = std::min({diag, del, ins});
    }
    std::swap(prev, cur);
  }
  const Cell& c = prev[m];
  return EditCounts{c.ins, c.sub, c.del, n};
}

double cer(const EditCounts& counts) {
  if (counts.reference_length == 0) throw EmptyReference("CER is undefined for an empty reference");
  return static_cast<double>(counts.errors()) / static_cast<double>(counts.reference_length) * 100.0;
}

Aggregate aggregate(const std::map<int, double>& per_group) {
  if (per_group.empty()) throw Error("aggregate needs at least one group");
  Aggregate out;
  out.max_cer = -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (const auto& [g, v] : per_group) {
    if (v > out.max_cer) {
      out.max_cer = v;
      out.max_group = g;
    }
    sum += v;
  }
  out.avg_cer = sum / static_cast<double>(per_group.size());
  return out;
}

double lid_accuracy(std::span<const std::pair<int, int>> pairs) {
  if (pairs.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& [truth, decoded] : pairs)
    if (decoded >= 0 && decoded == truth) ++hits;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(pairs.size());
}

}  // namespace ctcdro
