#pragma once

// Structured differentiable ops over [batch, channels, nodes, time] signals:
// dilated causal convolution, node mixing by a square support matrix, 1x1
// channel projection, bias broadcast, dropout, time padding/cropping, and the
// masked MAE objective. The time axis is innermost, so every temporal kernel
// reduces to contiguous block products.

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <random>
#include <vector>

#include "gwnet/tensor.hpp"

namespace gwnet {

namespace detail {

template <class Scalar>
void require_rank4(const TensorT<Scalar>& x, const char* op) {
  if (x.rank() != 4)
    throw DimensionError(std::string(op) + ": expected [B,C,N,L] input, got shape " + shape_to_string(x.shape()));
}

template <class Scalar>
using StridedMap =
    Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 0, Eigen::OuterStride<>>;
template <class Scalar>
using ConstStridedMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 0,
                                   Eigen::OuterStride<>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// y[b,c,:,l] = m * x[b,c,:,l]  --  one support-matrix step along the node axis

template <class Scalar>
TensorT<Scalar> graph_mix(const TensorT<Scalar>& x, const TensorT<Scalar>& m) {
  detail::require_rank4(x, "graph_mix");
  m.require_rank(2, "graph_mix support");
  const Index B = x.dim(0), C = x.dim(1), N = x.dim(2), L = x.dim(3);
  if (m.dim(0) != N || m.dim(1) != N)
    throw DimensionError("graph_mix: support " + shape_to_string(m.shape()) + " does not match node count " +
                         std::to_string(N));
  TensorT<Scalar> out(x.shape());
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c) {
      const Index off = (b * C + c) * N * L;
      typename TensorT<Scalar>::ConstMatMap xs(x.data() + off, N, L);
      typename TensorT<Scalar>::MatMap ys(out.data() + off, N, L);
      ys.noalias() = m.mat() * xs;
    }

  auto& tape = TapeT<Scalar>::current();
  if (tape.tracks(x, m)) {
    TensorT<Scalar> xc = x, mc = m, oc = out;
    tape.record(out, [xc, mc, oc, B, C, N, L]() mutable {
      for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < C; ++c) {
          const Index off = (b * C + c) * N * L;
          typename TensorT<Scalar>::ConstMatMap dy(oc.grad().data() + off, N, L);
          if (xc.requires_grad()) {
            typename TensorT<Scalar>::MatMap dx(xc.grad_buffer().data() + off, N, L);
            dx.noalias() += mc.mat().transpose() * dy;
          }
          if (mc.requires_grad()) {
            typename TensorT<Scalar>::ConstMatMap xs(xc.data() + off, N, L);
            typename TensorT<Scalar>::MatMap dm(mc.grad_buffer().data(), N, N);
            dm.noalias() += dy * xs.transpose();
          }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// y[b,:,n,l] = w^T x[b,:,n,l]  --  per-position linear map over channels

template <class Scalar>
TensorT<Scalar> channel_project(const TensorT<Scalar>& x, const TensorT<Scalar>& w) {
  detail::require_rank4(x, "channel_project");
  w.require_rank(2, "channel_project weight");
  const Index B = x.dim(0), C = x.dim(1), N = x.dim(2), L = x.dim(3);
  if (w.dim(0) != C)
    throw DimensionError("channel_project: weight " + shape_to_string(w.shape()) + " does not accept " +
                         std::to_string(C) + " input channels");
  const Index Cout = w.dim(1);
  TensorT<Scalar> out({B, Cout, N, L});
  for (Index b = 0; b < B; ++b) {
    typename TensorT<Scalar>::ConstMatMap xb(x.data() + b * C * N * L, C, N * L);
    typename TensorT<Scalar>::MatMap yb(out.data() + b * Cout * N * L, Cout, N * L);
    yb.noalias() = w.mat().transpose() * xb;
  }

  auto& tape = TapeT<Scalar>::current();
  if (tape.tracks(x, w)) {
    TensorT<Scalar> xc = x, wc = w, oc = out;
    tape.record(out, [xc, wc, oc, B, C, N, L, Cout]() mutable {
      for (Index b = 0; b < B; ++b) {
        typename TensorT<Scalar>::ConstMatMap dy(oc.grad().data() + b * Cout * N * L, Cout, N * L);
        if (xc.requires_grad()) {
          typename TensorT<Scalar>::MatMap dx(xc.grad_buffer().data() + b * C * N * L, C, N * L);
          dx.noalias() += wc.mat() * dy;
        }
        if (wc.requires_grad()) {
          typename TensorT<Scalar>::ConstMatMap xb(xc.data() + b * C * N * L, C, N * L);
          typename TensorT<Scalar>::MatMap dw(wc.grad_buffer().data(), C, Cout);
          dw.noalias() += xb * dy.transpose();
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// bias broadcast over the channel axis

template <class Scalar>
TensorT<Scalar> add_channel_bias(const TensorT<Scalar>& x, const TensorT<Scalar>& bias) {
  detail::require_rank4(x, "add_channel_bias");
  bias.require_rank(1, "add_channel_bias bias");
  const Index B = x.dim(0), C = x.dim(1), N = x.dim(2), L = x.dim(3);
  if (bias.dim(0) != C)
    throw DimensionError("add_channel_bias: bias " + shape_to_string(bias.shape()) + " vs " + std::to_string(C) +
                         " channels");
  TensorT<Scalar> out(x.shape());
  const Scalar* px = x.data();
  Scalar* po = out.data();
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c) {
      const Scalar bv = bias[c];
      const Index off = (b * C + c) * N * L;
      for (Index i = 0; i < N * L; ++i) po[off + i] = px[off + i] + bv;
    }

  auto& tape = TapeT<Scalar>::current();
  if (tape.tracks(x, bias)) {
    TensorT<Scalar> xc = x, bc = bias, oc = out;
    tape.record(out, [xc, bc, oc, B, C, N, L]() mutable {
      const auto& dy = oc.grad();
      if (xc.requires_grad()) detail::accumulate(xc, dy);
      if (bc.requires_grad()) {
        auto& gb = bc.grad_buffer();
        for (Index b = 0; b < B; ++b)
          for (Index c = 0; c < C; ++c) {
            const Index off = (b * C + c) * N * L;
            Scalar s = Scalar(0);
            for (Index i = 0; i < N * L; ++i) s += dy[static_cast<std::size_t>(off + i)];
            gb[static_cast<std::size_t>(c)] += s;
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// dilated causal convolution along time
//
// padded=true keeps the input length, reading zeros left of the sequence;
// padded=false drops the warm-up region, shortening time by d*(ks-1).

template <class Scalar>
TensorT<Scalar> dilated_causal_conv(const TensorT<Scalar>& x, const TensorT<Scalar>& kernel,
                                    const TensorT<Scalar>& bias, Index dilation, bool padded) {
  detail::require_rank4(x, "dilated_causal_conv");
  kernel.require_rank(3, "dilated_causal_conv kernel");
  bias.require_rank(1, "dilated_causal_conv bias");
  if (dilation < 1) throw ValidationError("dilated_causal_conv: dilation must be >= 1");
  const Index B = x.dim(0), C = x.dim(1), N = x.dim(2), L = x.dim(3);
  const Index Cout = kernel.dim(0), ks = kernel.dim(2);
  if (kernel.dim(1) != C)
    throw DimensionError("dilated_causal_conv: kernel " + shape_to_string(kernel.shape()) + " vs input " +
                         shape_to_string(x.shape()));
  if (bias.dim(0) != Cout)
    throw DimensionError("dilated_causal_conv: bias " + shape_to_string(bias.shape()) + " vs " +
                         std::to_string(Cout) + " output channels");
  const Index Lout = padded ? L : L - dilation * (ks - 1);
  if (Lout < 1)
    throw DimensionError("dilated_causal_conv: sequence too short, L=" + std::to_string(L) + " needs at least " +
                         std::to_string(dilation * (ks - 1) + 1) + " steps in valid mode");

  using Mat = typename TensorT<Scalar>::RowMat;
  // tap s as a dense Cout x C matrix
  std::vector<Mat> taps(static_cast<std::size_t>(ks));
  for (Index s = 0; s < ks; ++s) {
    Mat w(Cout, C);
    for (Index co = 0; co < Cout; ++co)
      for (Index c = 0; c < C; ++c) w(co, c) = kernel[(co * C + c) * ks + s];
    taps[static_cast<std::size_t>(s)] = std::move(w);
  }

  TensorT<Scalar> out({B, Cout, N, Lout});
  for (Index b = 0; b < B; ++b)
    for (Index n = 0; n < N; ++n) {
      detail::ConstStridedMap<Scalar> xs(x.data() + (b * C * N + n) * L, C, L, Eigen::OuterStride<>(N * L));
      detail::StridedMap<Scalar> ys(out.data() + (b * Cout * N + n) * Lout, Cout, Lout,
                                    Eigen::OuterStride<>(N * Lout));
      for (Index co = 0; co < Cout; ++co) ys.row(co).setConstant(bias[co]);
      for (Index s = 0; s < ks; ++s) {
        const Mat& w = taps[static_cast<std::size_t>(s)];
        if (padded) {
          const Index span = L - dilation * s;
          if (span <= 0) continue;
          ys.middleCols(dilation * s, span).noalias() += w * xs.middleCols(0, span);
        } else {
          ys.noalias() += w * xs.middleCols(dilation * (ks - 1 - s), Lout);
        }
      }
    }

  auto& tape = TapeT<Scalar>::current();
  if (tape.tracks(x, kernel, bias)) {
    TensorT<Scalar> xc = x, kc = kernel, bc = bias, oc = out;
    tape.record(out, [xc, kc, bc, oc, taps, B, C, N, L, Cout, ks, Lout, dilation, padded]() mutable {
      std::vector<Mat> dtaps(static_cast<std::size_t>(ks), Mat::Zero(Cout, C));
      for (Index b = 0; b < B; ++b)
        for (Index n = 0; n < N; ++n) {
          detail::ConstStridedMap<Scalar> dy(oc.grad().data() + (b * Cout * N + n) * Lout, Cout, Lout,
                                             Eigen::OuterStride<>(N * Lout));
          detail::ConstStridedMap<Scalar> xs(xc.data() + (b * C * N + n) * L, C, L, Eigen::OuterStride<>(N * L));
          for (Index s = 0; s < ks; ++s) {
            if (padded) {
              const Index span = L - dilation * s;
              if (span <= 0) continue;
              if (xc.requires_grad()) {
                detail::StridedMap<Scalar> dx(xc.grad_buffer().data() + (b * C * N + n) * L, C, L,
                                              Eigen::OuterStride<>(N * L));
                dx.middleCols(0, span).noalias() +=
                    taps[static_cast<std::size_t>(s)].transpose() * dy.middleCols(dilation * s, span);
              }
              if (kc.requires_grad())
                dtaps[static_cast<std::size_t>(s)].noalias() +=
                    dy.middleCols(dilation * s, span) * xs.middleCols(0, span).transpose();
            } else {
              const Index shift = dilation * (ks - 1 - s);
              if (xc.requires_grad()) {
                detail::StridedMap<Scalar> dx(xc.grad_buffer().data() + (b * C * N + n) * L, C, L,
                                              Eigen::OuterStride<>(N * L));
                dx.middleCols(shift, Lout).noalias() += taps[static_cast<std::size_t>(s)].transpose() * dy;
              }
              if (kc.requires_grad())
                dtaps[static_cast<std::size_t>(s)].noalias() += dy * xs.middleCols(shift, Lout).transpose();
            }
          }
          if (bc.requires_grad()) {
            auto& gb = bc.grad_buffer();
            for (Index co = 0; co < Cout; ++co) gb[static_cast<std::size_t>(co)] += dy.row(co).sum();
          }
        }
      if (kc.requires_grad()) {
        auto& gk = kc.grad_buffer();
        for (Index s = 0; s < ks; ++s)
          for (Index co = 0; co < Cout; ++co)
            for (Index c = 0; c < C; ++c)
              gk[static_cast<std::size_t>((co * C + c) * ks + s)] += dtaps[static_cast<std::size_t>(s)](co, c);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// time-axis plumbing

template <class Scalar>
TensorT<Scalar> pad_time_left(const TensorT<Scalar>& x, Index pad) {
  detail::require_rank4(x, "pad_time_left");
  if (pad < 0) throw ValidationError("pad_time_left: negative padding");
  if (pad == 0) return x;
  const Index B = x.dim(0), C = x.dim(1), N = x.dim(2), L = x.dim(3);
  TensorT<Scalar> out({B, C, N, L + pad});
  const Scalar* px = x.data();
  Scalar* po = out.data();
  for (Index r = 0; r < B * C * N; ++r)
    std::copy(px + r * L, px + (r + 1) * L, po + r * (L + pad) + pad);

  auto& tape = TapeT<Scalar>::current();
  if (tape.tracks(x)) {
    TensorT<Scalar> xc = x, oc = out;
    tape.record(out, [xc, oc, B, C, N, L, pad]() mutable {
      if (!xc.requires_grad()) return;
      const auto& dy = oc.grad();
      auto& gx = xc.grad_buffer();
      for (Index r = 0; r < B * C * N; ++r)
        for (Index l = 0; l < L; ++l) gx[static_cast<std::size_t>(r * L + l)] += dy[static_cast<std::size_t>(r * (L + pad) + pad + l)];
    });
  }
  return out;
}

// Keep the trailing `keep` timesteps.
template <class Scalar>
TensorT<Scalar> tail_time(const TensorT<Scalar>& x, Index keep) {
  detail::require_rank4(x, "tail_time");
  const Index B = x.dim(0), C = x.dim(1), N = x.dim(2), L = x.dim(3);
  if (keep < 1 || keep > L)
    throw DimensionError("tail_time: cannot keep " + std::to_string(keep) + " of " + std::to_string(L) + " steps");
  if (keep == L) return x;
  const Index drop = L - keep;
  TensorT<Scalar> out({B, C, N, keep});
  const Scalar* px = x.data();
  Scalar* po = out.data();
  for (Index r = 0; r < B * C * N; ++r)
    std::copy(px + r * L + drop, px + (r + 1) * L, po + r * keep);

  auto& tape = TapeT<Scalar>::current();
  if (tape.tracks(x)) {
    TensorT<Scalar> xc = x, oc = out;
    tape.record(out, [xc, oc, B, C, N, L, keep, drop]() mutable {
      if (!xc.requires_grad()) return;
      const auto& dy = oc.grad();
      auto& gx = xc.grad_buffer();
      for (Index r = 0; r < B * C * N; ++r)
        for (Index l = 0; l < keep; ++l) gx[static_cast<std::size_t>(r * L + drop + l)] += dy[static_cast<std::size_t>(r * keep + l)];
    });
  }
  return out;
}

// [B, T*D, N, 1] -> [B, T, N, D], channel index factored time-major.
template <class Scalar>
TensorT<Scalar> reshape_horizon(const TensorT<Scalar>& x, Index horizon, Index out_dim) {
  detail::require_rank4(x, "reshape_horizon");
  const Index B = x.dim(0), C = x.dim(1), N = x.dim(2), L = x.dim(3);
  if (L != 1 || C != horizon * out_dim)
    throw DimensionError("reshape_horizon: input " + shape_to_string(x.shape()) + " does not factor into T=" +
                         std::to_string(horizon) + ", D=" + std::to_string(out_dim));
  TensorT<Scalar> out({B, horizon, N, out_dim});
  const Scalar* px = x.data();
  Scalar* po = out.data();
  for (Index b = 0; b < B; ++b)
    for (Index t = 0; t < horizon; ++t)
      for (Index n = 0; n < N; ++n)
        for (Index d = 0; d < out_dim; ++d)
          po[((b * horizon + t) * N + n) * out_dim + d] = px[(b * C + t * out_dim + d) * N + n];

  auto& tape = TapeT<Scalar>::current();
  if (tape.tracks(x)) {
    TensorT<Scalar> xc = x, oc = out;
    tape.record(out, [xc, oc, B, N, horizon, out_dim, C]() mutable {
      if (!xc.requires_grad()) return;
      const auto& dy = oc.grad();
      auto& gx = xc.grad_buffer();
      for (Index b = 0; b < B; ++b)
        for (Index t = 0; t < horizon; ++t)
          for (Index n = 0; n < N; ++n)
            for (Index d = 0; d < out_dim; ++d)
              gx[static_cast<std::size_t>((b * C + t * out_dim + d) * N + n)] +=
                  dy[static_cast<std::size_t>(((b * horizon + t) * N + n) * out_dim + d)];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// inverted dropout; the sampled keep-mask is replayed in the backward pass

template <class Scalar>
TensorT<Scalar> dropout(const TensorT<Scalar>& x, Scalar p, std::mt19937_64& rng) {
  if (p < Scalar(0) || p >= Scalar(1)) throw ValidationError("dropout: p must lie in [0,1)");
  if (p == Scalar(0)) return x;
  const Scalar inv_keep = Scalar(1) / (Scalar(1) - p);
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  std::vector<Scalar> mask(static_cast<std::size_t>(x.numel()));
  for (auto& m : mask) m = keep(rng) ? inv_keep : Scalar(0);

  TensorT<Scalar> out(x.shape());
  const Scalar* px = x.data();
  Scalar* po = out.data();
  for (Index i = 0; i < x.numel(); ++i) po[i] = px[i] * mask[static_cast<std::size_t>(i)];

  auto& tape = TapeT<Scalar>::current();
  if (tape.tracks(x)) {
    TensorT<Scalar> xc = x, oc = out;
    tape.record(out, [xc, oc, mask]() mutable {
      if (!xc.requires_grad()) return;
      const auto& dy = oc.grad();
      auto& gx = xc.grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += dy[i] * mask[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// masked mean absolute error
//
// Mean |pred - target| over entries whose mask is nonzero; the divisor is the
// valid count, so an all-valid mask reproduces the plain mean. Gradient flows
// into pred only. Zero valid entries yield 0 with a warning.

template <class Scalar>
TensorT<Scalar> masked_mae(const TensorT<Scalar>& pred, const TensorT<Scalar>& target, const TensorT<Scalar>& mask) {
  detail::require_same_shape(pred, target, "masked_mae");
  detail::require_same_shape(pred, mask, "masked_mae mask");
  const Scalar* pp = pred.data();
  const Scalar* pt = target.data();
  const Scalar* pm = mask.data();
  Scalar acc = Scalar(0);
  Index valid = 0;
  for (Index i = 0; i < pred.numel(); ++i)
    if (pm[i] != Scalar(0)) {
      acc += std::abs(pp[i] - pt[i]);
      ++valid;
    }
  if (valid == 0) {
    std::cerr << "warning: masked_mae over zero valid entries, defining loss = 0\n";
    return TensorT<Scalar>::scalar(Scalar(0));
  }
  TensorT<Scalar> out = TensorT<Scalar>::scalar(acc / static_cast<Scalar>(valid));

  auto& tape = TapeT<Scalar>::current();
  if (tape.tracks(pred)) {
    TensorT<Scalar> pc = pred, tc = target, mc = mask, oc = out;
    tape.record(out, [pc, tc, mc, oc, valid]() mutable {
      if (!pc.requires_grad()) return;
      const Scalar d = oc.grad()[0] / static_cast<Scalar>(valid);
      auto& gp = pc.grad_buffer();
      const Scalar* pp2 = pc.data();
      const Scalar* pt2 = tc.data();
      const Scalar* pm2 = mc.data();
      for (std::size_t i = 0; i < gp.size(); ++i) {
        if (pm2[i] == Scalar(0)) continue;
        const Scalar e = pp2[i] - pt2[i];
        if (e > Scalar(0))
          gp[i] += d;
        else if (e < Scalar(0))
          gp[i] -= d;
      }
    });
  }
  return out;
}

}  // namespace gwnet
