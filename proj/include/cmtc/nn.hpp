#pragma once

#include <string>
#include <vector>

#include "cmtc/ops.hpp"

namespace cmtc::nn {

template <typename T>
struct ParamRef {
  std::string path;
  Tensor<T>* tensor;
};

template <typename T>
using ParamMap = std::vector<ParamRef<T>>;

/// Non-trainable state that still belongs in checkpoints (running stats).
template <typename T>
struct BufferRef {
  std::string path;
  std::vector<T>* data;
};

template <typename T>
using BufferMap = std::vector<BufferRef<T>>;

template <typename T>
Tensor<T> kaiming_uniform(Shape shape, std::int64_t fan_in, double slope, Rng& rng) {
  const double gain = std::sqrt(2.0 / (1.0 + slope * slope));
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  Tensor<T> t = Tensor<T>::rand_uniform(std::move(shape), rng, -bound, bound);
  t.set_requires_grad(true);
  return t;
}

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // O x I x Kh x Kw
  Tensor<T> bias;    // O
  std::int64_t stride = 1;
  std::int64_t pad = 0;

  Conv2d() = default;

  Conv2d(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel, std::int64_t stride_,
         std::int64_t pad_, double slope, Rng rng)
      : stride(stride_), pad(pad_) {
    weight = kaiming_uniform<T>({out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel, slope, rng);
    bias = Tensor<T>::zeros({out_ch});
    bias.set_requires_grad(true);
  }

  /// Re-initializes a 1x1 conv as channel-wise identity: output channel o
  /// passes input channel o % in_ch through. Blocks that refine features
  /// start as pass-throughs and learn deviations.
  Conv2d& init_identity() {
    const auto& s = weight.shape();
    std::vector<T> w(static_cast<std::size_t>(numel(s)), T(0));
    for (std::int64_t o = 0; o < s[0]; ++o) {
      w[static_cast<std::size_t>((o * s[1] + (o % s[1])) * s[2] * s[3])] = T(1);
    }
    weight = Tensor<T>::from(s, std::move(w));
    weight.set_requires_grad(true);
    return *this;
  }

  /// Re-initializes to a constant map: zero weights, fixed bias.
  Conv2d& init_constant(T bias_value) {
    weight = Tensor<T>::zeros(weight.shape());
    weight.set_requires_grad(true);
    bias = Tensor<T>::full(bias.shape(), bias_value);
    bias.set_requires_grad(true);
    return *this;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }

  void collect(const std::string& prefix, ParamMap<T>& out) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
  }
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // in x out
  Tensor<T> bias;    // out

  Linear() = default;

  Linear(std::int64_t in_dim, std::int64_t out_dim, double slope, Rng rng) {
    weight = kaiming_uniform<T>({in_dim, out_dim}, in_dim, slope, rng);
    bias = Tensor<T>::zeros({out_dim});
    bias.set_requires_grad(true);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return add(matmul(x, weight), bias); }

  void collect(const std::string& prefix, ParamMap<T>& out) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
  }
};

namespace detail_bn {

// Fused 1-D batch norm. Training mode normalizes with batch statistics and
// updates the running buffers in place; eval mode reads the running buffers.
template <typename T>
Tensor<T> batch_norm1d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       std::vector<T>* running_mean, std::vector<T>* running_var, bool training,
                       double momentum, double eps) {
  if (x.rank() != 2) {
    throw ShapeError("batch_norm1d: expected rank-2 input, got " + shape_str(x.shape()));
  }
  const std::int64_t B = x.dim(0), D = x.dim(1);
  if (gamma.numel() != D || beta.numel() != D) {
    throw ShapeError("batch_norm1d: affine params must have " + std::to_string(D) + " entries");
  }
  if (static_cast<std::int64_t>(running_mean->size()) != D ||
      static_cast<std::int64_t>(running_var->size()) != D) {
    throw ShapeError("batch_norm1d: running stats size mismatch");
  }
  const T* xp = x.values().data();
  const T* gp = gamma.values().data();
  const T* bp = beta.values().data();

  std::vector<T> mean_v(static_cast<std::size_t>(D)), invstd_v(static_cast<std::size_t>(D));
  if (training) {
    const T invB = T(1) / static_cast<T>(B);
    for (std::int64_t c = 0; c < D; ++c) {
      T m = T(0);
      for (std::int64_t b = 0; b < B; ++b) m += xp[b * D + c];
      m *= invB;
      T var = T(0);
      for (std::int64_t b = 0; b < B; ++b) {
        const T d = xp[b * D + c] - m;
        var += d * d;
      }
      var *= invB;
      mean_v[static_cast<std::size_t>(c)] = m;
      invstd_v[static_cast<std::size_t>(c)] = T(1) / std::sqrt(var + static_cast<T>(eps));
      (*running_mean)[static_cast<std::size_t>(c)] =
          static_cast<T>((1.0 - momentum) * (*running_mean)[static_cast<std::size_t>(c)] +
                         momentum * m);
      (*running_var)[static_cast<std::size_t>(c)] =
          static_cast<T>((1.0 - momentum) * (*running_var)[static_cast<std::size_t>(c)] +
                         momentum * var);
    }
  } else {
    for (std::int64_t c = 0; c < D; ++c) {
      mean_v[static_cast<std::size_t>(c)] = (*running_mean)[static_cast<std::size_t>(c)];
      invstd_v[static_cast<std::size_t>(c)] =
          T(1) / std::sqrt((*running_var)[static_cast<std::size_t>(c)] + static_cast<T>(eps));
    }
  }

  std::vector<T> out(static_cast<std::size_t>(B * D));
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t c = 0; c < D; ++c) {
      const T xhat = (xp[b * D + c] - mean_v[static_cast<std::size_t>(c)]) *
                     invstd_v[static_cast<std::size_t>(c)];
      out[b * D + c] = gp[c] * xhat + bp[c];
    }
  }
  Tensor<T> res = Tensor<T>::from({B, D}, std::move(out));
  if (cmtc::detail::wants_grad<T>({&x, &gamma, &beta})) {
    auto xi_ = x.impl_ptr();
    auto gi_ = gamma.impl_ptr();
    auto bi_ = beta.impl_ptr();
    auto oi_ = res.impl_ptr();
    cmtc::detail::record<T>(
        {&x, &gamma, &beta}, res,
        [xi_, gi_, bi_, oi_, B, D, training, mean_v = std::move(mean_v),
         invstd_v = std::move(invstd_v)] {
          const auto& g = oi_->grad;
          const T* xp = xi_->values.data();
          const T* gp = gi_->values.data();
          const T invB = T(1) / static_cast<T>(B);
          for (std::int64_t c = 0; c < D; ++c) {
            const T mu = mean_v[static_cast<std::size_t>(c)];
            const T is = invstd_v[static_cast<std::size_t>(c)];
            T sum_g = T(0), sum_gx = T(0);
            for (std::int64_t b = 0; b < B; ++b) {
              const T xhat = (xp[b * D + c] - mu) * is;
              sum_g += g[b * D + c];
              sum_gx += g[b * D + c] * xhat;
            }
            if (bi_->requires_grad) bi_->grad_buffer()[static_cast<std::size_t>(c)] += sum_g;
            if (gi_->requires_grad) gi_->grad_buffer()[static_cast<std::size_t>(c)] += sum_gx;
            if (xi_->requires_grad) {
              auto& dx = xi_->grad_buffer();
              const T gam = gp[c];
              if (training) {
                for (std::int64_t b = 0; b < B; ++b) {
                  const T xhat = (xp[b * D + c] - mu) * is;
                  const T dxhat = g[b * D + c] * gam;
                  dx[b * D + c] += is * (dxhat - invB * gam * sum_g - xhat * invB * gam * sum_gx);
                }
              } else {
                for (std::int64_t b = 0; b < B; ++b) dx[b * D + c] += g[b * D + c] * gam * is;
              }
            }
          }
        });
  }
  return res;
}

}  // namespace detail_bn

template <typename T>
struct BatchNorm1d {
  Tensor<T> gamma;
  Tensor<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm1d() = default;

  explicit BatchNorm1d(std::int64_t dim, double momentum_ = 0.1) : momentum(momentum_) {
    gamma = Tensor<T>::ones({dim});
    gamma.set_requires_grad(true);
    beta = Tensor<T>::zeros({dim});
    beta.set_requires_grad(true);
    running_mean.assign(static_cast<std::size_t>(dim), T(0));
    running_var.assign(static_cast<std::size_t>(dim), T(1));
  }

  Tensor<T> operator()(const Tensor<T>& x, bool training) {
    return detail_bn::batch_norm1d(x, gamma, beta, &running_mean, &running_var, training, momentum,
                                   eps);
  }

  void collect(const std::string& prefix, ParamMap<T>& out) {
    out.push_back({prefix + ".gamma", &gamma});
    out.push_back({prefix + ".beta", &beta});
  }

  void collect_buffers(const std::string& prefix, BufferMap<T>& out) {
    out.push_back({prefix + ".running_mean", &running_mean});
    out.push_back({prefix + ".running_var", &running_var});
  }
};

}  // namespace cmtc::nn
