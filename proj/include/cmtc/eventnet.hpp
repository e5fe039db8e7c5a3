#pragma once

#include <array>
#include <functional>
#include <string>

#include "cmtc/checkpoint.hpp"
#include "cmtc/dataset.hpp"
#include "cmtc/nn.hpp"
#include "cmtc/optim.hpp"

namespace cmtc {

// Encoder-decoder that maps two-channel event frames to one-channel
// contour-like auxiliary frames in (0,1). Encoder: three conv3x3+leaky
// stages with 2x2 average pooling; decoder mirrors them with bilinear 2x
// upsampling; a final 1x1 conv + sigmoid produces the output.
template <typename T>
struct EventNet {
  nn::Conv2d<T> enc1, enc2, enc3;
  nn::Conv2d<T> dec1, dec2, dec3, head;
  double slope = 0.1;

  EventNet() = default;

  EventNet(std::int64_t in_ch, std::array<std::int64_t, 3> chans, double slope_, Rng rng)
      : slope(slope_) {
    enc1 = nn::Conv2d<T>(in_ch, chans[0], 3, 1, 1, slope, rng.fork("enc1"));
    enc2 = nn::Conv2d<T>(chans[0], chans[1], 3, 1, 1, slope, rng.fork("enc2"));
    enc3 = nn::Conv2d<T>(chans[1], chans[2], 3, 1, 1, slope, rng.fork("enc3"));
    dec1 = nn::Conv2d<T>(chans[2], chans[1], 3, 1, 1, slope, rng.fork("dec1"));
    dec2 = nn::Conv2d<T>(chans[1], chans[0], 3, 1, 1, slope, rng.fork("dec2"));
    dec3 = nn::Conv2d<T>(chans[0], chans[0], 3, 1, 1, slope, rng.fork("dec3"));
    head = nn::Conv2d<T>(chans[0], 1, 1, 1, 0, slope, rng.fork("head"));
  }

  static constexpr std::int64_t kDownsample = 8;

  /// frames: N x in_ch x H x W -> auxiliaries N x 1 x H x W, values in (0,1).
  Tensor<T> operator()(const Tensor<T>& frames) const {
    if (frames.rank() != 4) {
      throw ShapeError("eventnet: expected rank-4 input, got " + shape_str(frames.shape()));
    }
    const std::int64_t H = frames.dim(2), W = frames.dim(3);
    if (H % kDownsample != 0 || W % kDownsample != 0) {
      throw ValueError("eventnet: spatial dims " + std::to_string(H) + "x" + std::to_string(W) +
                       " must be multiples of " + std::to_string(kDownsample));
    }
    auto h1 = avg_pool2d(leaky_relu(enc1(frames), slope), 2, 2);
    auto h2 = avg_pool2d(leaky_relu(enc2(h1), slope), 2, 2);
    auto h3 = avg_pool2d(leaky_relu(enc3(h2), slope), 2, 2);
    auto u1 = leaky_relu(dec1(upsample_bilinear(h3, H / 4, W / 4)), slope);
    auto u2 = leaky_relu(dec2(upsample_bilinear(u1, H / 2, W / 2)), slope);
    auto u3 = leaky_relu(dec3(upsample_bilinear(u2, H, W)), slope);
    return sigmoid(head(u3));
  }

  void collect(const std::string& prefix, nn::ParamMap<T>& out) {
    enc1.collect(prefix + ".enc1", out);
    enc2.collect(prefix + ".enc2", out);
    enc3.collect(prefix + ".enc3", out);
    dec1.collect(prefix + ".dec1", out);
    dec2.collect(prefix + ".dec2", out);
    dec3.collect(prefix + ".dec3", out);
    head.collect(prefix + ".head", out);
  }
};

/// Frozen random conv stack used as the perceptual feature space for the
/// reconstruction loss. Parameters are fixed at construction and never
/// registered with any optimizer.
template <typename T>
struct PerceptualExtractor {
  nn::Conv2d<T> c1, c2, c3;
  double slope = 0.1;

  PerceptualExtractor() = default;

  explicit PerceptualExtractor(std::uint64_t seed, double slope_ = 0.1) : slope(slope_) {
    Rng rng(Rng::hash_combine(seed, 0x70657263ULL));
    c1 = nn::Conv2d<T>(1, 8, 3, 2, 1, slope, rng.fork("c1"));
    c2 = nn::Conv2d<T>(8, 16, 3, 2, 1, slope, rng.fork("c2"));
    c3 = nn::Conv2d<T>(16, 32, 3, 2, 1, slope, rng.fork("c3"));
    for (auto* conv : {&c1, &c2, &c3}) {
      conv->weight.set_requires_grad(false);
      conv->bias.set_requires_grad(false);
    }
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return leaky_relu(c3(leaky_relu(c2(leaky_relu(c1(x), slope)), slope)), slope);
  }

  /// Bit-level digest of all parameters; constant over the object's lifetime.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto feed = [&](const Tensor<T>& t) {
      for (const T v : t.values()) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, &v, sizeof(T));
        h = Rng::hash_combine(h, bits);
      }
    };
    for (const auto* conv : {&c1, &c2, &c3}) {
      feed(conv->weight);
      feed(conv->bias);
    }
    return h;
  }
};

/// Boundary map of a binary mask: pixels whose value differs from at least
/// one 4-neighbor (out-of-bounds reads as 0), dilated by one pixel with a
/// 3x3 structuring element. Output is {0,1}-valued, shape 1 x H x W.
template <typename T>
Tensor<T> contour_target(const Tensor<T>& mask) {
  if (mask.rank() != 2) {
    throw ShapeError("contour_target: expected rank-2 mask, got " + shape_str(mask.shape()));
  }
  const std::int64_t H = mask.dim(0), W = mask.dim(1);
  const auto mv = mask.values();
  std::vector<std::uint8_t> bin(mv.size());
  for (std::size_t i = 0; i < mv.size(); ++i) {
    if (mv[i] == T(0)) {
      bin[i] = 0;
    } else if (mv[i] == T(1)) {
      bin[i] = 1;
    } else {
      throw ValueError("contour_target: mask must be binary, found value " +
                       std::to_string(static_cast<double>(mv[i])));
    }
  }
  auto at = [&](std::int64_t y, std::int64_t x) -> std::uint8_t {
    if (y < 0 || y >= H || x < 0 || x >= W) return 0;
    return bin[static_cast<std::size_t>(y * W + x)];
  };
  std::vector<std::uint8_t> edge(mv.size(), 0);
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x) {
      const std::uint8_t c = at(y, x);
      if (at(y - 1, x) != c || at(y + 1, x) != c || at(y, x - 1) != c || at(y, x + 1) != c) {
        edge[static_cast<std::size_t>(y * W + x)] = 1;
      }
    }
  }
  std::vector<T> out(mv.size(), T(0));
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x) {
      bool hit = false;
      for (std::int64_t dy = -1; dy <= 1 && !hit; ++dy) {
        for (std::int64_t dx = -1; dx <= 1 && !hit; ++dx) {
          const std::int64_t yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < H && xx >= 0 && xx < W &&
              edge[static_cast<std::size_t>(yy * W + xx)]) {
            hit = true;
          }
        }
      }
      if (hit) out[static_cast<std::size_t>(y * W + x)] = T(1);
    }
  }
  return Tensor<T>::from({1, H, W}, std::move(out));
}

/// Contour targets for a whole clip's mask stack: clip_len x 1 x H x W.
template <typename T>
Tensor<T> contour_targets_for_clip(const std::vector<std::uint8_t>& masks, std::int64_t clip_len,
                                   std::int64_t H, std::int64_t W) {
  if (static_cast<std::int64_t>(masks.size()) != clip_len * H * W) {
    throw ShapeError("contour_targets_for_clip: mask buffer size mismatch");
  }
  std::vector<Tensor<T>> per_frame;
  per_frame.reserve(static_cast<std::size_t>(clip_len));
  for (std::int64_t k = 0; k < clip_len; ++k) {
    std::vector<T> mv(static_cast<std::size_t>(H * W));
    for (std::int64_t i = 0; i < H * W; ++i) {
      mv[static_cast<std::size_t>(i)] = static_cast<T>(masks[static_cast<std::size_t>(k * H * W + i)]);
    }
    Tensor<T> target = contour_target(Tensor<T>::from({H, W}, std::move(mv)));
    per_frame.push_back(reshape(target, {1, 1, H, W}));
  }
  return concat(per_frame, 0);
}

template <typename T>
struct EventNetLoss {
  Tensor<T> total;
  double mse_part = 0.0;
  double perceptual_part = 0.0;
};

/// Reconstruction loss: MSE(aux, target) + lambda_p * MSE in the frozen
/// perceptual feature space.
template <typename T>
EventNetLoss<T> eventnet_loss(const Tensor<T>& aux, const Tensor<T>& target,
                              const PerceptualExtractor<T>& extractor, double lambda_p) {
  if (aux.shape() != target.shape()) {
    throw ShapeError("eventnet_loss: shapes differ, " + shape_str(aux.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  EventNetLoss<T> out;
  Tensor<T> rec = mse(aux, target);
  out.mse_part = static_cast<double>(rec.item());
  if (lambda_p != 0.0) {
    Tensor<T> perc = mse(extractor(aux), extractor(target));
    out.perceptual_part = static_cast<double>(perc.item());
    out.total = add(rec, scale(perc, lambda_p));
  } else {
    out.total = rec;
  }
  return out;
}

struct PretrainConfig {
  int epochs = 5;
  int batch_clips = 4;
  double lr = 3e-4;
  double lambda_p = 0.1;
  std::uint64_t seed = 1;
  std::string checkpoint_dir;  // per-epoch checkpoints when non-empty
};

struct PretrainHistoryRow {
  int epoch;
  double mse;
  double perceptual;
  double total;
};

/// Supervised pretraining of EventNet against contour targets. Deterministic
/// per (clips, config); aborts with the failing step index if the loss ever
/// turns non-finite.
template <typename T>
std::vector<PretrainHistoryRow> pretrain_eventnet(EventNet<T>& model,
                                                  const std::vector<LoadedClip<T>>& clips,
                                                  const PerceptualExtractor<T>& extractor,
                                                  const PretrainConfig& cfg) {
  if (clips.empty()) throw ValueError("pretrain_eventnet: no clips");
  for (const auto& c : clips) {
    if (c.masks.empty()) throw ValueError("pretrain_eventnet: dataset has no supervision masks");
  }
  nn::ParamMap<T> params;
  model.collect("eventnet", params);
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  Adam<T> opt(params, acfg);

  const std::int64_t H = clips[0].frames.height(), W = clips[0].frames.width();
  const std::int64_t clip_len = clips[0].frames.clip_len();
  std::vector<Tensor<T>> targets;
  targets.reserve(clips.size());
  for (const auto& c : clips) {
    targets.push_back(contour_targets_for_clip<T>(c.masks, clip_len, H, W));
  }

  std::vector<PretrainHistoryRow> history;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(clips.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng erng = Rng(cfg.seed).fork("eventnet_pretrain").fork(static_cast<std::uint64_t>(epoch));
    shuffle(order.begin(), order.end(), erng);

    double mse_sum = 0, perc_sum = 0, total_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_clips)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_clips));
      std::vector<Tensor<T>> frame_parts, target_parts;
      for (std::size_t i = start; i < stop; ++i) {
        frame_parts.push_back(clips[order[i]].frames.frames);
        target_parts.push_back(targets[order[i]]);
      }
      Tensor<T> frames = frame_parts.size() == 1 ? frame_parts[0] : concat(frame_parts, 0);
      Tensor<T> target = target_parts.size() == 1 ? target_parts[0] : concat(target_parts, 0);

      ++step;
      opt.zero_grad();
      Tape<T> tape;
      EventNetLoss<T> loss;
      {
        GradScope<T> scope(tape);
        Tensor<T> aux = model(frames);
        loss = eventnet_loss(aux, target, extractor, cfg.lambda_p);
        if (!std::isfinite(static_cast<double>(loss.total.item()))) {
          throw ValueError("pretrain_eventnet: non-finite loss at step " + std::to_string(step));
        }
        tape.backward(loss.total);
      }
      opt.step();
      mse_sum += loss.mse_part;
      perc_sum += loss.perceptual_part;
      total_sum += static_cast<double>(loss.total.item());
      ++batches;
    }
    history.push_back({epoch, mse_sum / static_cast<double>(batches),
                       perc_sum / static_cast<double>(batches),
                       total_sum / static_cast<double>(batches)});
    if (!cfg.checkpoint_dir.empty()) {
      Checkpoint ck;
      for (const auto& p : params) {
        ck.put<T>(p.path, {p.tensor->values().begin(), p.tensor->values().end()},
                  p.tensor->shape());
      }
      ck.put_scalar<std::uint64_t>("pretrain/epoch", static_cast<std::uint64_t>(epoch));
      char name[64];
      std::snprintf(name, sizeof(name), "eventnet_epoch_%04d.ckpt", epoch);
      ck.save(cfg.checkpoint_dir + "/" + name);
    }
  }
  return history;
}

}  // namespace cmtc
