#pragma once

#include <map>
#include <set>
#include <vector>

#include "cmtc/common.hpp"

namespace cmtc {

/// Identity-disjoint train/test partition with a cross-camera query/gallery
/// protocol inside the test half. Members index into the caller's clip list.
struct ProtocolSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> query;
  std::vector<std::size_t> gallery;
  std::vector<int> train_ids;  // sorted
  std::vector<int> test_ids;   // sorted
  int query_camera = 0;
};

struct ClipLabel {
  int person_id;
  int camera_id;
};

/// Shuffles the identity set by seed, takes half for training, and inside
/// the test half uses the lowest camera's clips as queries with everything
/// else as gallery. Every query identity is guaranteed a cross-camera
/// gallery clip.
inline ProtocolSplit protocol_split(const std::vector<ClipLabel>& clips, std::uint64_t seed) {
  std::set<int> id_set;
  std::set<int> cam_set;
  for (const auto& c : clips) {
    id_set.insert(c.person_id);
    cam_set.insert(c.camera_id);
  }
  if (id_set.size() < 4) {
    throw ValueError("protocol_split: need at least 4 identities, got " +
                     std::to_string(id_set.size()));
  }
  if (cam_set.size() < 2) {
    throw ValueError("protocol_split: need at least 2 cameras, got " +
                     std::to_string(cam_set.size()));
  }

  std::vector<int> ids(id_set.begin(), id_set.end());
  Rng rng = Rng(seed).fork("protocol");
  shuffle(ids.begin(), ids.end(), rng);
  const std::size_t n_train = ids.size() / 2;

  ProtocolSplit split;
  split.query_camera = *cam_set.begin();
  split.train_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(split.train_ids.begin(), split.train_ids.end());
  std::sort(split.test_ids.begin(), split.test_ids.end());

  const std::set<int> train_ids(split.train_ids.begin(), split.train_ids.end());
  std::map<int, std::set<int>> gallery_cams_per_id;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (train_ids.count(clips[i].person_id)) {
      split.train.push_back(i);
    } else if (clips[i].camera_id == split.query_camera) {
      split.query.push_back(i);
    } else {
      split.gallery.push_back(i);
      gallery_cams_per_id[clips[i].person_id].insert(clips[i].camera_id);
    }
  }
  for (std::size_t qi : split.query) {
    const int pid = clips[qi].person_id;
    if (!gallery_cams_per_id.count(pid)) {
      throw ValueError("protocol_split: identity " + std::to_string(pid) +
                       " has no cross-camera gallery clip");
    }
  }
  return split;
}

}  // namespace cmtc
