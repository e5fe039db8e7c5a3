#pragma once

#include <iostream>
#include <set>

#include "cmtc/nn.hpp"

namespace cmtc {

/// Pools every pair feature over space and averages across pairs, producing
/// the clip's pre-neck descriptor of shape 1 x d. Order of the pair list
/// does not matter.
template <typename T>
Tensor<T> aggregate_pair_features(const std::vector<Tensor<T>>& pair_features) {
  if (pair_features.empty()) {
    throw ValueError("aggregate_pair_features: empty pair-feature list");
  }
  std::vector<Tensor<T>> pooled;
  pooled.reserve(pair_features.size());
  const std::int64_t d = pair_features[0].dim(1);
  for (const auto& f : pair_features) {
    if (f.rank() != 4 || f.dim(0) != 1 || f.dim(1) != d) {
      throw ShapeError("aggregate_pair_features: inconsistent feature shape " +
                       shape_str(f.shape()));
    }
    pooled.push_back(reshape(global_avg_pool2d(f), {1, d}));
  }
  if (pooled.size() == 1) return pooled[0];
  return reduce_mean_axis(concat(pooled, 0), 0);
}

template <typename T>
struct ReidLossOut {
  Tensor<T> total;
  double id_part = 0.0;
  double triplet_part = 0.0;
  bool triplet_skipped = false;
};

/// Identity cross-entropy plus batch-hard triplet. A batch with fewer than
/// two distinct identities cannot form triplets; the term is skipped with a
/// warning and the loss reduces to the classification part.
template <typename T>
ReidLossOut<T> reid_loss(const Tensor<T>& embeddings, const Tensor<T>& logits,
                         const std::vector<std::int64_t>& labels, double margin) {
  if (embeddings.rank() != 2 || logits.rank() != 2 || embeddings.dim(0) != logits.dim(0)) {
    throw ShapeError("reid_loss: embeddings " + shape_str(embeddings.shape()) + " and logits " +
                     shape_str(logits.shape()) + " disagree");
  }
  ReidLossOut<T> out;
  Tensor<T> id_term = cross_entropy(logits, labels);
  out.id_part = static_cast<double>(id_term.item());
  const std::set<std::int64_t> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2) {
    std::cerr << "reid_loss: batch has " << distinct.size()
              << " identity; skipping the triplet term\n";
    out.triplet_skipped = true;
    out.total = id_term;
    return out;
  }
  Tensor<T> tri = batch_hard_triplet(embeddings, labels, margin);
  out.triplet_part = static_cast<double>(tri.item());
  out.total = add(id_term, tri);
  return out;
}

}  // namespace cmtc
