#pragma once

#include "cmtc/modality.hpp"

namespace cmtc {

// Temporal Collaboration: Cross-Temporal Attention from frame i queries onto
// frame i+1 keys/values, combined across modalities by an elementwise
// product, then Cross-Temporal Integration gating against the Modality
// Collaboration output.

struct TemporalOptions {
  AttentionOptions attention;
  bool renormalize_combined = false;  // row-renormalize t1 * t2, off by default
};

/// Per-modality 1x1 query/key/value projections for neighboring frames.
template <typename T>
struct CtaBlock {
  nn::Conv2d<T> q_event, k_event, v_event;
  nn::Conv2d<T> q_aux, k_aux, v_aux;

  CtaBlock() = default;

  CtaBlock(std::int64_t channels, double slope, Rng rng) {
    q_event = nn::Conv2d<T>(channels, channels, 1, 1, 0, slope, rng.fork("qe"));
    k_event = nn::Conv2d<T>(channels, channels, 1, 1, 0, slope, rng.fork("ke")).init_identity();
    v_event = nn::Conv2d<T>(channels, channels, 1, 1, 0, slope, rng.fork("ve")).init_identity();
    q_aux = nn::Conv2d<T>(channels, channels, 1, 1, 0, slope, rng.fork("qa"));
    k_aux = nn::Conv2d<T>(channels, channels, 1, 1, 0, slope, rng.fork("ka")).init_identity();
    v_aux = nn::Conv2d<T>(channels, channels, 1, 1, 0, slope, rng.fork("va")).init_identity();
  }

  void collect(const std::string& prefix, nn::ParamMap<T>& out) {
    q_event.collect(prefix + ".q_event", out);
    k_event.collect(prefix + ".k_event", out);
    v_event.collect(prefix + ".v_event", out);
    q_aux.collect(prefix + ".q_aux", out);
    k_aux.collect(prefix + ".k_aux", out);
    v_aux.collect(prefix + ".v_aux", out);
  }
};

template <typename T>
struct CtaOut {
  Tensor<T> attended_event;  // 1 x C x h x w, neighbor features under T
  Tensor<T> attended_aux;
  Tensor<T> t1, t2;       // per-modality row-stochastic attention, N x N
  Tensor<T> combined;     // T = t1 (.) t2
};

/// Eqs. 7-9: t1/t2 are per-modality softmax attentions, T their elementwise
/// product (no renormalization unless asked), and the attended neighbor
/// features are T * V.
template <typename T>
CtaOut<T> cta(const Tensor<T>& event_i, const Tensor<T>& event_next, const Tensor<T>& aux_i,
              const Tensor<T>& aux_next, const CtaBlock<T>& block, const TemporalOptions& opt = {}) {
  if (event_i.shape() != event_next.shape() || event_i.shape() != aux_i.shape() ||
      event_i.shape() != aux_next.shape()) {
    throw ShapeError("cta: all four features must share one shape, got " +
                     shape_str(event_i.shape()) + " vs " + shape_str(event_next.shape()) + ", " +
                     shape_str(aux_i.shape()) + ", " + shape_str(aux_next.shape()));
  }
  const std::int64_t h = event_i.dim(2), w = event_i.dim(3);

  auto branch_attention = [&](const nn::Conv2d<T>& qp, const nn::Conv2d<T>& kp,
                              const Tensor<T>& cur, const Tensor<T>& next) {
    Tensor<T> q = detail_tok::to_tokens(qp(cur));
    Tensor<T> k = detail_tok::to_tokens(kp(next));
    Tensor<T> logits = matmul(q, transpose2d(k));
    if (opt.attention.scale_by_sqrt_dim) {
      logits = scale(logits, 1.0 / std::sqrt(static_cast<double>(q.dim(1))));
    }
    return softmax(logits, 1);
  };

  CtaOut<T> out;
  out.t1 = branch_attention(block.q_event, block.k_event, event_i, event_next);
  out.t2 = branch_attention(block.q_aux, block.k_aux, aux_i, aux_next);
  out.combined = mul(out.t1, out.t2);
  if (opt.renormalize_combined) {
    out.combined = div(out.combined, reduce_mean_axis(scale(out.combined, out.combined.dim(1)), 1));
  }
  Tensor<T> ve = detail_tok::to_tokens(block.v_event(event_next));
  Tensor<T> va = detail_tok::to_tokens(block.v_aux(aux_next));
  out.attended_event = detail_tok::from_tokens(matmul(out.combined, ve), h, w);
  out.attended_aux = detail_tok::from_tokens(matmul(out.combined, va), h, w);
  return out;
}

/// Gate head for one branch of Cross-Temporal Integration. The attended
/// neighbor feature carries C channels against the fused feature's 2C, so a
/// learned 1x1 lift aligns it first.
template <typename T>
struct CtiBlock {
  nn::Conv2d<T> lift;  // C -> 2C
  nn::Conv2d<T> gate;  // 4C -> 2C on pooled descriptors

  CtiBlock() = default;

  CtiBlock(std::int64_t channels, double slope, Rng rng) {
    // the lift starts as a stacked channel identity and the gate as the
    // constant 1, so integration begins at the Eq.-11 pass-through limit
    lift = nn::Conv2d<T>(channels, 2 * channels, 1, 1, 0, slope, rng.fork("lift")).init_identity();
    gate = nn::Conv2d<T>(4 * channels, 2 * channels, 1, 1, 0, slope, rng.fork("gate"))
               .init_constant(T(1));
  }

  void collect(const std::string& prefix, nn::ParamMap<T>& out) {
    lift.collect(prefix + ".lift", out);
    gate.collect(prefix + ".gate", out);
  }
};

/// Eqs. 10-11: P = Conv(Concat(AvgPool(psi), AvgPool(lifted))) as a
/// per-channel gate broadcast over space; F = psi * P + lifted * P.
template <typename T>
Tensor<T> cti(const Tensor<T>& fused, const Tensor<T>& attended, const CtiBlock<T>& block) {
  if (fused.dim(2) != attended.dim(2) || fused.dim(3) != attended.dim(3)) {
    throw ShapeError("cti: spatial dims differ, " + shape_str(fused.shape()) + " vs " +
                     shape_str(attended.shape()));
  }
  Tensor<T> lifted = block.lift(attended);
  if (lifted.dim(1) != fused.dim(1)) {
    throw ShapeError("cti: lifted channels " + std::to_string(lifted.dim(1)) +
                     " do not match fused channels " + std::to_string(fused.dim(1)));
  }
  Tensor<T> pooled = concat<T>({global_avg_pool2d(fused), global_avg_pool2d(lifted)}, 1);
  Tensor<T> gate = block.gate(pooled);  // 1 x 2C x 1 x 1
  return add(mul(fused, gate), mul(lifted, gate));
}

/// Eq. 12: channel-concat of both branch integrations.
template <typename T>
Tensor<T> tc_forward(const Tensor<T>& fused, const CtaOut<T>& attended,
                     const CtiBlock<T>& cti_event, const CtiBlock<T>& cti_aux) {
  Tensor<T> f_phi = cti(fused, attended.attended_event, cti_event);
  Tensor<T> f_eta = cti(fused, attended.attended_aux, cti_aux);
  return concat<T>({f_phi, f_eta}, 1);
}

/// Neighboring-frame index pairs (0,1), (1,2), ..., (T-2, T-1).
inline std::vector<std::pair<std::int64_t, std::int64_t>> pair_schedule(std::int64_t clip_len) {
  if (clip_len < 2) {
    throw ValueError("pair_schedule: clip_len must be >= 2, got " + std::to_string(clip_len));
  }
  std::vector<std::pair<std::int64_t, std::int64_t>> out;
  out.reserve(static_cast<std::size_t>(clip_len - 1));
  for (std::int64_t i = 0; i + 1 < clip_len; ++i) out.emplace_back(i, i + 1);
  return out;
}

}  // namespace cmtc
