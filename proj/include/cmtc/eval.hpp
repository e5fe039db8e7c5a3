#pragma once

#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmtc/common.hpp"

namespace cmtc {

/// Clip-level embedding with its retrieval metadata. Metric math runs in
/// double regardless of the training precision.
struct ClipEmbedding {
  std::vector<double> vec;
  int person_id = -1;
  int camera_id = -1;
};

/// Pairwise Euclidean distances between L2-normalized embeddings;
/// rows = queries, cols = gallery, entries in [0, 2].
struct DistanceMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> d;

  double at(std::size_t r, std::size_t c) const { return d[r * cols + c]; }
};

namespace detail_eval {

inline std::vector<double> l2_normalize(const std::vector<double>& v) {
  double ss = 0;
  for (double x : v) ss += x * x;
  const double n = std::sqrt(ss);
  std::vector<double> out(v.size());
  if (n < 1e-30) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

}  // namespace detail_eval

inline DistanceMatrix distance_matrix(const std::vector<ClipEmbedding>& queries,
                                      const std::vector<ClipEmbedding>& gallery) {
  if (queries.empty() || gallery.empty()) {
    throw ValueError("distance_matrix: empty query or gallery set");
  }
  const std::size_t dim = queries[0].vec.size();
  for (const auto& e : queries) {
    if (e.vec.size() != dim) throw ShapeError("distance_matrix: query dim mismatch");
  }
  for (const auto& e : gallery) {
    if (e.vec.size() != dim) throw ShapeError("distance_matrix: gallery dim mismatch");
  }
  std::vector<std::vector<double>> qn, gn;
  qn.reserve(queries.size());
  gn.reserve(gallery.size());
  for (const auto& e : queries) qn.push_back(detail_eval::l2_normalize(e.vec));
  for (const auto& e : gallery) gn.push_back(detail_eval::l2_normalize(e.vec));

  DistanceMatrix m;
  m.rows = queries.size();
  m.cols = gallery.size();
  m.d.resize(m.rows * m.cols);
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      double ss = 0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double diff = qn[r][k] - gn[c][k];
        ss += diff * diff;
      }
      m.d[r * m.cols + c] = std::sqrt(ss);
    }
  }
  return m;
}

struct QueryRanking {
  std::size_t query_index = 0;
  int person_id = -1;
  int camera_id = -1;
  bool skipped = false;  // no valid cross-camera positive
  double ap = 0.0;
  std::vector<std::size_t> ranked_gallery;  // after exclusion, ascending distance
  std::vector<double> ranked_distance;
  std::vector<bool> ranked_correct;
};

struct EvalReport {
  double rank1 = 0.0, rank5 = 0.0, rank10 = 0.0;
  double map = 0.0;
  std::size_t num_queries = 0;    // queries contributing to the averages
  std::size_t skipped_queries = 0;
  std::vector<QueryRanking> rankings;
};

/// CMC / mAP with the standard cross-camera protocol: gallery entries that
/// share both person and camera with the query are excluded; remaining
/// entries are ranked by distance with gallery index as the deterministic
/// tie-break; AP averages precision at each positive's rank.
inline EvalReport cmc_map(const DistanceMatrix& dist, const std::vector<ClipEmbedding>& queries,
                          const std::vector<ClipEmbedding>& gallery) {
  if (dist.rows != queries.size() || dist.cols != gallery.size()) {
    throw ShapeError("cmc_map: distance matrix is " + std::to_string(dist.rows) + "x" +
                     std::to_string(dist.cols) + " but metadata has " +
                     std::to_string(queries.size()) + " queries and " +
                     std::to_string(gallery.size()) + " gallery entries");
  }
  EvalReport rep;
  double hits1 = 0, hits5 = 0, hits10 = 0, ap_sum = 0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    QueryRanking r;
    r.query_index = q;
    r.person_id = queries[q].person_id;
    r.camera_id = queries[q].camera_id;

    std::vector<std::size_t> keep;
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      const bool same_id = gallery[g].person_id == queries[q].person_id;
      const bool same_cam = gallery[g].camera_id == queries[q].camera_id;
      if (same_id && same_cam) continue;
      keep.push_back(g);
    }
    std::sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) {
      const double da = dist.at(q, a), db = dist.at(q, b);
      if (da != db) return da < db;
      return a < b;
    });

    std::size_t n_pos = 0;
    for (std::size_t g : keep) n_pos += gallery[g].person_id == queries[q].person_id;
    if (n_pos == 0) {
      r.skipped = true;
      ++rep.skipped_queries;
      rep.rankings.push_back(std::move(r));
      continue;
    }

    r.ranked_gallery = keep;
    r.ranked_distance.reserve(keep.size());
    r.ranked_correct.reserve(keep.size());
    std::size_t seen_pos = 0;
    bool in1 = false, in5 = false, in10 = false;
    double ap = 0;
    for (std::size_t rank = 0; rank < keep.size(); ++rank) {
      const std::size_t g = keep[rank];
      const bool correct = gallery[g].person_id == queries[q].person_id;
      r.ranked_distance.push_back(dist.at(q, g));
      r.ranked_correct.push_back(correct);
      if (correct) {
        ++seen_pos;
        ap += static_cast<double>(seen_pos) / static_cast<double>(rank + 1);
        if (rank < 1) in1 = true;
        if (rank < 5) in5 = true;
        if (rank < 10) in10 = true;
      }
    }
    r.ap = ap / static_cast<double>(n_pos);
    hits1 += in1;
    hits5 += in5;
    hits10 += in10;
    ap_sum += r.ap;
    ++rep.num_queries;
    rep.rankings.push_back(std::move(r));
  }
  if (rep.num_queries == 0) {
    throw ValueError("cmc_map: no query has a valid cross-camera positive");
  }
  const double n = static_cast<double>(rep.num_queries);
  rep.rank1 = hits1 / n;
  rep.rank5 = hits5 / n;
  rep.rank10 = hits10 / n;
  rep.map = ap_sum / n;
  return rep;
}

inline nlohmann::json report_to_json(const EvalReport& rep) {
  nlohmann::json j;
  j["rank1"] = rep.rank1;
  j["rank5"] = rep.rank5;
  j["rank10"] = rep.rank10;
  j["mAP"] = rep.map;
  j["num_queries"] = rep.num_queries;
  j["skipped_queries"] = rep.skipped_queries;
  return j;
}

inline void write_report(const EvalReport& rep, const std::string& json_path,
                         const std::string& csv_path) {
  {
    std::ofstream f(json_path, std::ios::trunc);
    if (!f) throw IoError("write_report: cannot open '" + json_path + "'");
    f << report_to_json(rep).dump(2) << '\n';
  }
  {
    std::ofstream f(csv_path, std::ios::trunc);
    if (!f) throw IoError("write_report: cannot open '" + csv_path + "'");
    f << "rank1,rank5,rank10,mAP,num_queries,skipped_queries\n";
    f << rep.rank1 << ',' << rep.rank5 << ',' << rep.rank10 << ',' << rep.map << ','
      << rep.num_queries << ',' << rep.skipped_queries << '\n';
  }
}

/// Per-query top-k ranking lists: query_id, rank, gallery_id, distance, correct.
inline void write_rankings_csv(const EvalReport& rep, const std::vector<ClipEmbedding>& gallery,
                               const std::string& path, std::size_t top_k = 10) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("write_rankings_csv: cannot open '" + path + "'");
  f << "query_index,query_person_id,rank,gallery_person_id,distance,correct\n";
  for (const auto& r : rep.rankings) {
    if (r.skipped) continue;
    const std::size_t n = std::min(top_k, r.ranked_gallery.size());
    for (std::size_t k = 0; k < n; ++k) {
      f << r.query_index << ',' << r.person_id << ',' << (k + 1) << ','
        << gallery[r.ranked_gallery[k]].person_id << ',' << r.ranked_distance[k] << ','
        << (r.ranked_correct[k] ? 1 : 0) << '\n';
    }
  }
}

}  // namespace cmtc
