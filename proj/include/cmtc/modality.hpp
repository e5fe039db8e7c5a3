#pragma once

#include <array>

#include "cmtc/nn.hpp"

namespace cmtc {

// Modality Collaboration: per-frame differential modality, Cross-Modality
// Synchronization (difference-queried attention over spatial tokens) and
// Cross-Modality Fusion (scalar modality weights plus channel and spatial
// attention), producing the fused per-frame feature with twice the encoder
// channel count.

struct AttentionOptions {
  bool scale_by_sqrt_dim = false;  // optional 1/sqrt(C) on logits, off by default
};

namespace detail_tok {

/// 1 x C x h x w -> (h*w) x C token matrix.
template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x) {
  const std::int64_t C = x.dim(1), N = x.dim(2) * x.dim(3);
  return transpose2d(reshape(x, {C, N}));
}

/// (h*w) x C -> 1 x C x h x w.
template <typename T>
Tensor<T> from_tokens(const Tensor<T>& t, std::int64_t h, std::int64_t w) {
  const std::int64_t C = t.dim(1);
  return reshape(transpose2d(t), {1, C, h, w});
}

}  // namespace detail_tok

/// Two-branch frame encoder; both branches share the stage layout so their
/// feature maps are subtractable.
template <typename T>
struct FrameEncoder {
  nn::Conv2d<T> c1, c2, c3;
  double slope = 0.1;

  FrameEncoder() = default;

  FrameEncoder(std::int64_t in_ch, std::array<std::int64_t, 3> chans, double slope_, Rng rng)
      : slope(slope_) {
    c1 = nn::Conv2d<T>(in_ch, chans[0], 3, 1, 1, slope, rng.fork("c1"));
    c2 = nn::Conv2d<T>(chans[0], chans[1], 3, 1, 1, slope, rng.fork("c2"));
    c3 = nn::Conv2d<T>(chans[1], chans[2], 3, 1, 1, slope, rng.fork("c3"));
  }

  /// N x in_ch x H x W -> N x chans[2] x H/8 x W/8.
  Tensor<T> operator()(const Tensor<T>& x) const {
    auto h1 = avg_pool2d(leaky_relu(c1(x), slope), 2, 2);
    auto h2 = avg_pool2d(leaky_relu(c2(h1), slope), 2, 2);
    return avg_pool2d(leaky_relu(c3(h2), slope), 2, 2);
  }

  void collect(const std::string& prefix, nn::ParamMap<T>& out) {
    c1.collect(prefix + ".c1", out);
    c2.collect(prefix + ".c2", out);
    c3.collect(prefix + ".c3", out);
  }
};

/// Event branch (2-channel input) and auxiliary branch (1-channel input).
template <typename T>
struct Encoder {
  FrameEncoder<T> event_branch;
  FrameEncoder<T> aux_branch;
  std::int64_t out_channels = 0;

  Encoder() = default;

  Encoder(std::array<std::int64_t, 3> chans, double slope, Rng rng)
      : event_branch(2, chans, slope, rng.fork("event")),
        aux_branch(1, chans, slope, rng.fork("aux")),
        out_channels(chans[2]) {}

  void collect(const std::string& prefix, nn::ParamMap<T>& out) {
    event_branch.collect(prefix + ".event", out);
    aux_branch.collect(prefix + ".aux", out);
  }
};

/// Per-frame features for both modalities: frames T x 2 x H x W and
/// auxiliaries T x 1 x H x W to a pair of T x C x H' x W' maps.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> encode(const Tensor<T>& frames, const Tensor<T>& aux,
                                       const Encoder<T>& enc) {
  if (frames.rank() != 4 || aux.rank() != 4 || frames.dim(0) != aux.dim(0) ||
      frames.dim(2) != aux.dim(2) || frames.dim(3) != aux.dim(3)) {
    throw ShapeError("encode: frame/auxiliary stacks disagree, " + shape_str(frames.shape()) +
                     " vs " + shape_str(aux.shape()));
  }
  Tensor<T> fe = enc.event_branch(frames);
  Tensor<T> fa = enc.aux_branch(aux);
  if (fe.shape() != fa.shape()) {
    throw ShapeError("encode: branch outputs diverge, " + shape_str(fe.shape()) + " vs " +
                     shape_str(fa.shape()));
  }
  return {fe, fa};
}

/// Differential modality: D = event - auxiliary, elementwise.
template <typename T>
Tensor<T> diff_modality(const Tensor<T>& event_feat, const Tensor<T>& aux_feat) {
  if (event_feat.shape() != aux_feat.shape()) {
    throw ShapeError("diff_modality: shapes differ, " + shape_str(event_feat.shape()) + " vs " +
                     shape_str(aux_feat.shape()));
  }
  return sub(event_feat, aux_feat);
}

/// Cross-Modality Synchronization projections: one query head on the
/// differential modality, per-modality key/value heads. All 1x1, channel
/// preserving, shared by both fusion directions.
template <typename T>
struct CmsBlock {
  nn::Conv2d<T> q_proj;
  nn::Conv2d<T> k_event, v_event;
  nn::Conv2d<T> k_aux, v_aux;

  CmsBlock() = default;

  CmsBlock(std::int64_t channels, double slope, Rng rng) {
    // key/value heads start as channel identities so the synchronized
    // features carry the real modality content from the first step
    q_proj = nn::Conv2d<T>(channels, channels, 1, 1, 0, slope, rng.fork("q"));
    k_event = nn::Conv2d<T>(channels, channels, 1, 1, 0, slope, rng.fork("ke")).init_identity();
    v_event = nn::Conv2d<T>(channels, channels, 1, 1, 0, slope, rng.fork("ve")).init_identity();
    k_aux = nn::Conv2d<T>(channels, channels, 1, 1, 0, slope, rng.fork("ka")).init_identity();
    v_aux = nn::Conv2d<T>(channels, channels, 1, 1, 0, slope, rng.fork("va")).init_identity();
  }

  void collect(const std::string& prefix, nn::ParamMap<T>& out) {
    q_proj.collect(prefix + ".q", out);
    k_event.collect(prefix + ".k_event", out);
    v_event.collect(prefix + ".v_event", out);
    k_aux.collect(prefix + ".k_aux", out);
    v_aux.collect(prefix + ".v_aux", out);
  }
};

template <typename T>
struct CmsOut {
  Tensor<T> synced_event;  // row-stochastic attention applied to V_E
  Tensor<T> synced_aux;
  Tensor<T> attn_event;  // N x N attention matrices, exposed for checks
  Tensor<T> attn_aux;
};

/// One attention head: softmax(Q K^T) V over spatial tokens.
template <typename T>
Tensor<T> token_attention(const Tensor<T>& q_map, const Tensor<T>& k_map, const Tensor<T>& v_map,
                          const AttentionOptions& opt, Tensor<T>* attn_out = nullptr) {
  const std::int64_t h = q_map.dim(2), w = q_map.dim(3);
  Tensor<T> q = detail_tok::to_tokens(q_map);
  Tensor<T> k = detail_tok::to_tokens(k_map);
  Tensor<T> v = detail_tok::to_tokens(v_map);
  Tensor<T> logits = matmul(q, transpose2d(k));
  if (opt.scale_by_sqrt_dim) {
    logits = scale(logits, 1.0 / std::sqrt(static_cast<double>(q.dim(1))));
  }
  Tensor<T> attn = softmax(logits, 1);
  if (attn_out) *attn_out = attn;
  return detail_tok::from_tokens(matmul(attn, v), h, w);
}

/// Eq.-2 style synchronization: the differential modality queries both
/// modalities' key/value spaces.
template <typename T>
CmsOut<T> cms(const Tensor<T>& event_feat, const Tensor<T>& aux_feat, const Tensor<T>& diff,
              const CmsBlock<T>& block, const AttentionOptions& opt = {}) {
  if (event_feat.shape() != aux_feat.shape() || event_feat.shape() != diff.shape()) {
    throw ShapeError("cms: feature shapes differ");
  }
  Tensor<T> q_map = block.q_proj(diff);
  CmsOut<T> out;
  out.synced_event = token_attention(q_map, block.k_event(event_feat), block.v_event(event_feat),
                                     opt, &out.attn_event);
  out.synced_aux =
      token_attention(q_map, block.k_aux(aux_feat), block.v_aux(aux_feat), opt, &out.attn_aux);
  return out;
}

/// Cross-Modality Fusion heads: one weight head per fusion direction, shared
/// channel-attention bottleneck, shared 7x7 spatial-attention conv.
template <typename T>
struct CmfBlock {
  nn::Conv2d<T> weight_event;  // 2C -> 1
  nn::Conv2d<T> weight_aux;
  nn::Linear<T> ch_fc1, ch_fc2;  // C -> C/r -> C
  nn::Conv2d<T> spatial_conv;    // 2 -> 1, 7x7
  double slope = 0.1;

  CmfBlock() = default;

  CmfBlock(std::int64_t channels, double slope_, Rng rng) : slope(slope_) {
    const std::int64_t bottleneck = std::max<std::int64_t>(1, channels / 8);
    // zero-initialized weight heads give the neutral W = 0.5 at the start
    weight_event = nn::Conv2d<T>(2 * channels, 1, 1, 1, 0, slope, rng.fork("we")).init_constant(T(0));
    weight_aux = nn::Conv2d<T>(2 * channels, 1, 1, 1, 0, slope, rng.fork("wa")).init_constant(T(0));
    ch_fc1 = nn::Linear<T>(channels, bottleneck, slope, rng.fork("cf1"));
    ch_fc2 = nn::Linear<T>(bottleneck, channels, slope, rng.fork("cf2"));
    spatial_conv = nn::Conv2d<T>(2, 1, 7, 1, 3, slope, rng.fork("sp"));
  }

  void collect(const std::string& prefix, nn::ParamMap<T>& out) {
    weight_event.collect(prefix + ".weight_event", out);
    weight_aux.collect(prefix + ".weight_aux", out);
    ch_fc1.collect(prefix + ".ch_fc1", out);
    ch_fc2.collect(prefix + ".ch_fc2", out);
    spatial_conv.collect(prefix + ".spatial", out);
  }
};

/// Eq. 3: W = GlobalAvg(Sigmoid(Conv(Concat(a, b)))) as a per-sample scalar.
template <typename T>
Tensor<T> cmf_weight(const Tensor<T>& synced, const Tensor<T>& other_raw,
                     const nn::Conv2d<T>& weight_head) {
  if (synced.shape() != other_raw.shape()) {
    throw ShapeError("cmf_weight: shapes differ, " + shape_str(synced.shape()) + " vs " +
                     shape_str(other_raw.shape()));
  }
  Tensor<T> cat = concat<T>({synced, other_raw}, 1);
  return global_avg_pool2d(sigmoid(weight_head(cat)));  // 1 x 1 x 1 x 1
}

/// Pooled-bottleneck channel attention map, values in (0,1), shape N x C x 1 x 1.
template <typename T>
Tensor<T> channel_attention(const Tensor<T>& x, const CmfBlock<T>& block) {
  const std::int64_t C = x.dim(1);
  auto mlp = [&](const Tensor<T>& pooled) {
    Tensor<T> v = reshape(pooled, {pooled.dim(0), C});
    return block.ch_fc2(leaky_relu(block.ch_fc1(v), block.slope));
  };
  Tensor<T> avg = mlp(global_avg_pool2d(x));
  Tensor<T> mx = mlp(global_max_pool2d(x));
  return reshape(sigmoid(add(avg, mx)), {x.dim(0), C, 1, 1});
}

/// Channel-pooled 7x7 spatial attention map, shape N x 1 x H x W.
template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& x, const CmfBlock<T>& block) {
  Tensor<T> mean_map = reduce_mean_axis(x, 1);
  Tensor<T> max_map = reduce_max_axis(x, 1);
  return sigmoid(block.spatial_conv(concat<T>({mean_map, max_map}, 1)));
}

template <typename T>
struct ModalityOut {
  Tensor<T> diff;
  Tensor<T> synced_event, synced_aux;
  Tensor<T> weight_event, weight_aux;  // scalars in (0,1)
  Tensor<T> branch_alpha, branch_beta;
  Tensor<T> fused;  // 1 x 2C x h x w
};

namespace detail_mc {

/// Channel+spatial refinement (Eq. 5): x'' = Spatial(x') * x', x' = Channel(x) * x.
template <typename T>
Tensor<T> refine(const Tensor<T>& x, const CmfBlock<T>& block) {
  Tensor<T> primed = mul(x, channel_attention(x, block));
  return mul(primed, spatial_attention(primed, block));
}

}  // namespace detail_mc

/// Eqs. 4-6 fusion of already synchronized features.
template <typename T>
ModalityOut<T> cmf_fuse(const Tensor<T>& event_feat, const Tensor<T>& aux_feat,
                        const CmsOut<T>& synced, const CmfBlock<T>& block) {
  ModalityOut<T> out;
  out.synced_event = synced.synced_event;
  out.synced_aux = synced.synced_aux;
  out.weight_event = cmf_weight(synced.synced_event, aux_feat, block.weight_event);
  out.weight_aux = cmf_weight(synced.synced_aux, event_feat, block.weight_aux);
  Tensor<T> weighted_event = mul(synced.synced_event, out.weight_event);
  Tensor<T> weighted_aux = mul(synced.synced_aux, out.weight_aux);
  out.branch_alpha = add(weighted_aux, detail_mc::refine(weighted_event, block));
  out.branch_beta = add(weighted_event, detail_mc::refine(weighted_aux, block));
  out.fused = concat<T>({out.branch_alpha, out.branch_beta}, 1);
  return out;
}

/// Full Modality Collaboration for one frame pair of features (1 x C x h x w).
template <typename T>
ModalityOut<T> mc_forward(const Tensor<T>& event_feat, const Tensor<T>& aux_feat,
                          const CmsBlock<T>& cms_block, const CmfBlock<T>& cmf_block,
                          const AttentionOptions& opt = {}) {
  Tensor<T> diff = diff_modality(event_feat, aux_feat);
  CmsOut<T> synced = cms(event_feat, aux_feat, diff, cms_block, opt);
  ModalityOut<T> out = cmf_fuse(event_feat, aux_feat, synced, cmf_block);
  out.diff = diff;
  return out;
}

}  // namespace cmtc
