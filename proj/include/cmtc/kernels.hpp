#pragma once

#include <cstdint>

#include "cmtc/common.hpp"

namespace cmtc::detail {

// Row-major C[M,N] += A[M,K] * B[K,N].
//
// Column blocks keep a K x NB slab of B cache-resident while four C rows
// accumulate in registers. Every C element still sums in ascending-k order,
// so results are bit-identical to the naive loop for any block size or
// worker count.
template <typename T>
void gemm_nn(std::int64_t M, std::int64_t N, std::int64_t K, const T* A, const T* B, T* C) {
  constexpr std::int64_t kColBlock = 256;
  auto run_cols = [&](std::int64_t b0, std::int64_t b1) {
    for (std::int64_t blk = b0; blk < b1; ++blk) {
      const std::int64_t n0 = blk * kColBlock;
      const std::int64_t nb = std::min(kColBlock, N - n0);
      std::int64_t m = 0;
      for (; m + 4 <= M; m += 4) {
        const T* __restrict__ a0 = A + (m + 0) * K;
        const T* __restrict__ a1 = A + (m + 1) * K;
        const T* __restrict__ a2 = A + (m + 2) * K;
        const T* __restrict__ a3 = A + (m + 3) * K;
        T* __restrict__ c0 = C + (m + 0) * N + n0;
        T* __restrict__ c1 = C + (m + 1) * N + n0;
        T* __restrict__ c2 = C + (m + 2) * N + n0;
        T* __restrict__ c3 = C + (m + 3) * N + n0;
        for (std::int64_t k = 0; k < K; ++k) {
          const T* __restrict__ b = B + k * N + n0;
          const T x0 = a0[k], x1 = a1[k], x2 = a2[k], x3 = a3[k];
          for (std::int64_t n = 0; n < nb; ++n) {
            const T bv = b[n];
            c0[n] += x0 * bv;
            c1[n] += x1 * bv;
            c2[n] += x2 * bv;
            c3[n] += x3 * bv;
          }
        }
      }
      for (; m < M; ++m) {
        const T* __restrict__ a_row = A + m * K;
        T* __restrict__ c_row = C + m * N + n0;
        for (std::int64_t k = 0; k < K; ++k) {
          const T* __restrict__ b = B + k * N + n0;
          const T x = a_row[k];
          for (std::int64_t n = 0; n < nb; ++n) c_row[n] += x * b[n];
        }
      }
    }
  };
  const std::int64_t blocks = (N + kColBlock - 1) / kColBlock;
  if (blocks >= 2 && thread_count() > 1 && M * N * K > (1 << 20)) {
    parallel_for(blocks, run_cols);
  } else {
    run_cols(0, blocks);
  }
}

// out[c * R + r] = in[r * C + c]
template <typename T>
void transpose(std::int64_t R, std::int64_t C, const T* in, T* out) {
  constexpr std::int64_t kBlock = 32;
  for (std::int64_t rb = 0; rb < R; rb += kBlock) {
    const std::int64_t re = std::min(R, rb + kBlock);
    for (std::int64_t cb = 0; cb < C; cb += kBlock) {
      const std::int64_t ce = std::min(C, cb + kBlock);
      for (std::int64_t r = rb; r < re; ++r) {
        for (std::int64_t c = cb; c < ce; ++c) out[c * R + r] = in[r * C + c];
      }
    }
  }
}

// Unrolls conv patches of one C x H x W image into a (C*Kh*Kw) x (OH*OW)
// matrix; out-of-bounds taps read as zero.
template <typename T>
void im2col(const T* img, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t Kh,
            std::int64_t Kw, std::int64_t stride, std::int64_t pad, std::int64_t OH,
            std::int64_t OW, T* cols) {
  for (std::int64_t c = 0; c < C; ++c) {
    const T* plane = img + c * H * W;
    for (std::int64_t kh = 0; kh < Kh; ++kh) {
      for (std::int64_t kw = 0; kw < Kw; ++kw) {
        T* row = cols + ((c * Kh + kh) * Kw + kw) * OH * OW;
        for (std::int64_t oh = 0; oh < OH; ++oh) {
          const std::int64_t ih = oh * stride - pad + kh;
          T* dst = row + oh * OW;
          if (ih < 0 || ih >= H) {
            for (std::int64_t ow = 0; ow < OW; ++ow) dst[ow] = T(0);
            continue;
          }
          const T* src = plane + ih * W;
          const std::int64_t iw0 = -pad + kw;
          for (std::int64_t ow = 0; ow < OW; ++ow) {
            const std::int64_t iw = iw0 + ow * stride;
            dst[ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add inverse of im2col.
template <typename T>
void col2im(const T* cols, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t Kh,
            std::int64_t Kw, std::int64_t stride, std::int64_t pad, std::int64_t OH,
            std::int64_t OW, T* img) {
  for (std::int64_t c = 0; c < C; ++c) {
    T* plane = img + c * H * W;
    for (std::int64_t kh = 0; kh < Kh; ++kh) {
      for (std::int64_t kw = 0; kw < Kw; ++kw) {
        const T* row = cols + ((c * Kh + kh) * Kw + kw) * OH * OW;
        for (std::int64_t oh = 0; oh < OH; ++oh) {
          const std::int64_t ih = oh * stride - pad + kh;
          if (ih < 0 || ih >= H) continue;
          const T* src = row + oh * OW;
          T* dst = plane + ih * W;
          const std::int64_t iw0 = -pad + kw;
          for (std::int64_t ow = 0; ow < OW; ++ow) {
            const std::int64_t iw = iw0 + ow * stride;
            if (iw >= 0 && iw < W) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace cmtc::detail
