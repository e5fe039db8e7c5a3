#pragma once

#include "cmtc/eval.hpp"

namespace cmtc_test {

// Counting-based CMC/AP scorer, independent of the sorting implementation in
// cmc_map: ranks come from explicit pairwise comparisons only.
struct CmcOracleResult {
  double rank1 = 0, rank5 = 0, rank10 = 0, map = 0;
  std::size_t used = 0, skipped = 0;
};

inline CmcOracleResult brute_force_cmc_map(const cmtc::DistanceMatrix& dist,
                                           const std::vector<cmtc::ClipEmbedding>& queries,
                                           const std::vector<cmtc::ClipEmbedding>& gallery) {
  CmcOracleResult out;
  double h1 = 0, h5 = 0, h10 = 0, ap_sum = 0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::vector<std::size_t> valid;
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      if (gallery[g].person_id == queries[q].person_id &&
          gallery[g].camera_id == queries[q].camera_id) {
        continue;
      }
      valid.push_back(g);
    }
    auto rank_of = [&](std::size_t target) {
      std::size_t rank = 1;
      for (std::size_t g : valid) {
        if (g == target) continue;
        const double dg = dist.at(q, g), dt = dist.at(q, target);
        if (dg < dt || (dg == dt && g < target)) ++rank;
      }
      return rank;
    };
    std::vector<std::size_t> pos;
    for (std::size_t g : valid) {
      if (gallery[g].person_id == queries[q].person_id) pos.push_back(g);
    }
    if (pos.empty()) {
      ++out.skipped;
      continue;
    }
    std::size_t best_rank = gallery.size() + 1;
    double ap = 0;
    for (std::size_t p : pos) {
      const std::size_t rp = rank_of(p);
      best_rank = std::min(best_rank, rp);
      std::size_t pos_at_or_before = 0;
      for (std::size_t p2 : pos) {
        if (rank_of(p2) <= rp) ++pos_at_or_before;
      }
      ap += static_cast<double>(pos_at_or_before) / static_cast<double>(rp);
    }
    ap /= static_cast<double>(pos.size());
    h1 += best_rank <= 1;
    h5 += best_rank <= 5;
    h10 += best_rank <= 10;
    ap_sum += ap;
    ++out.used;
  }
  if (out.used > 0) {
    const double n = static_cast<double>(out.used);
    out.rank1 = h1 / n;
    out.rank5 = h5 / n;
    out.rank10 = h10 / n;
    out.map = ap_sum / n;
  }
  return out;
}

}  // namespace cmtc_test
