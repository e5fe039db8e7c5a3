#pragma once

#include <string>

#include "cmtc/events.hpp"
#include "cmtc/ops.hpp"

namespace cmtc {

/// A clip of two-channel event frames: channel 0 counts positive events,
/// channel 1 negative. Values live in [0, 1] after clamp-normalization.
template <typename T>
struct FrameStack {
  Tensor<T> frames;  // clip_len x 2 x H x W
  std::uint64_t t_window_us = 0;
  std::string source_id;
  int person_id = -1;
  int camera_id = -1;

  std::int64_t clip_len() const { return frames.dim(0); }
  std::int64_t height() const { return frames.dim(2); }
  std::int64_t width() const { return frames.dim(3); }
};

/// Bins a stream into clip_len windows of t_window_us each, counting events
/// per pixel and polarity. Counts are clamped to clip_cap and divided by it.
/// Window k covers [t0 + k*w, t0 + (k+1)*w) with t0 the first timestamp;
/// events past the last window are dropped. Pass raw_counts to receive the
/// pre-clamp counts (same layout as the frames).
template <typename T>
FrameStack<T> voxelize(const EventStream& stream, std::int64_t clip_len,
                       std::uint64_t t_window_us, std::int64_t clip_cap,
                       std::vector<std::int64_t>* raw_counts = nullptr) {
  if (stream.records.empty()) throw ValueError("voxelize: empty stream");
  if (clip_len < 2) throw ValueError("voxelize: clip_len must be >= 2 (temporal pairs need neighbors)");
  if (t_window_us == 0) throw ValueError("voxelize: t_window must be positive");
  if (clip_cap < 1) throw ValueError("voxelize: clip_cap must be >= 1");
  if (stream.sensor_width == 0 || stream.sensor_height == 0) {
    throw ValueError("voxelize: stream has no sensor dimensions");
  }
  const std::uint64_t t0 = stream.records.front().t;
  const std::uint64_t t_last = stream.records.back().t;
  const std::uint64_t needed = static_cast<std::uint64_t>(clip_len - 1) * t_window_us;
  if (t_last - t0 < needed) {
    throw ValueError("voxelize: stream spans " + std::to_string(t_last - t0) +
                     " us but " + std::to_string(clip_len) + " windows of " +
                     std::to_string(t_window_us) +
                     " us need more; use a smaller t_window");
  }

  const std::int64_t H = stream.sensor_height;
  const std::int64_t W = stream.sensor_width;
  std::vector<std::int64_t> counts(static_cast<std::size_t>(clip_len * 2 * H * W), 0);
  for (const auto& e : stream.records) {
    const std::uint64_t k = (e.t - t0) / t_window_us;
    if (k >= static_cast<std::uint64_t>(clip_len)) continue;
    const std::int64_t pol = (e.p > 0) ? 0 : 1;
    counts[static_cast<std::size_t>(((static_cast<std::int64_t>(k) * 2 + pol) * H + e.y) * W +
                                    e.x)]++;
  }
  if (raw_counts) *raw_counts = counts;

  std::vector<T> vals(counts.size());
  const T inv = T(1) / static_cast<T>(clip_cap);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    vals[i] = static_cast<T>(std::min(counts[i], clip_cap)) * inv;
  }
  FrameStack<T> out;
  out.frames = Tensor<T>::from({clip_len, 2, H, W}, std::move(vals));
  out.t_window_us = t_window_us;
  return out;
}

/// Bilinear resize of every frame and channel; metadata is carried over.
template <typename T>
FrameStack<T> resize_frames(const FrameStack<T>& stack, std::int64_t out_h, std::int64_t out_w) {
  FrameStack<T> out = stack;
  if (stack.height() == out_h && stack.width() == out_w) return out;
  out.frames = upsample_bilinear(stack.frames, out_h, out_w);
  return out;
}

}  // namespace cmtc
