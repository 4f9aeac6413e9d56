#include "crackseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "crackseg/errors.hpp"
#include "crackseg/threading.hpp"

namespace crackseg {

namespace {

template <typename S>
Tape<S>& same_tape(std::initializer_list<const Var<S>*> vars) {
  Tape<S>* t = nullptr;
  for (const Var<S>* v : vars) {
    require<ContractError>(v->tape != nullptr, "op called with an unbound variable");
    if (t == nullptr) {
      t = v->tape;
    }
    require<ContractError>(v->tape == t, "op inputs live on different tapes");
    t->check(*v);
  }
  return *t;
}

// C[M x N] += A[M x K] * B[K x N]
template <typename S>
void gemm_nn(std::int64_t M, std::int64_t N, std::int64_t K, const S* a, const S* b, S* c) {
  parallel_for(M, [&](std::int64_t m0, std::int64_t m1) {
    for (std::int64_t m = m0; m < m1; ++m) {
      const S* arow = a + m * K;
      S* crow = c + m * N;
      for (std::int64_t k = 0; k < K; ++k) {
        const S av = arow[k];
        const S* brow = b + k * N;
        for (std::int64_t n = 0; n < N; ++n) {
          crow[n] += av * brow[n];
        }
      }
    }
  });
}

// C[M x N] += A[M x K] * B[N x K]^T
template <typename S>
void gemm_nt(std::int64_t M, std::int64_t N, std::int64_t K, const S* a, const S* b, S* c) {
  parallel_for(M, [&](std::int64_t m0, std::int64_t m1) {
    for (std::int64_t m = m0; m < m1; ++m) {
      const S* arow = a + m * K;
      S* crow = c + m * N;
      for (std::int64_t n = 0; n < N; ++n) {
        const S* brow = b + n * K;
        S acc = S(0);
        for (std::int64_t k = 0; k < K; ++k) {
          acc += arow[k] * brow[k];
        }
        crow[n] += acc;
      }
    }
  });
}

// C[M x N] += A[K x M]^T * B[K x N]
template <typename S>
void gemm_tn(std::int64_t M, std::int64_t N, std::int64_t K, const S* a, const S* b, S* c) {
  parallel_for(M, [&](std::int64_t m0, std::int64_t m1) {
    for (std::int64_t m = m0; m < m1; ++m) {
      S* crow = c + m * N;
      for (std::int64_t k = 0; k < K; ++k) {
        const S av = a[k * M + m];
        const S* brow = b + k * N;
        for (std::int64_t n = 0; n < N; ++n) {
          crow[n] += av * brow[n];
        }
      }
    }
  });
}

struct ConvDims {
  std::int64_t n, c, h, w;       // input
  std::int64_t o, kh, kw;        // kernel
  std::int64_t oh, ow;           // output
  std::int64_t stride, pad;
  std::int64_t col_rows() const { return c * kh * kw; }
  std::int64_t col_cols() const { return oh * ow; }
};

template <typename S>
ConvDims conv_dims(const Tensor<S>& x, const Tensor<S>& w, int stride, int padding) {
  require<DimensionError>(x.rank() == 4, "conv2d: input must be NCHW, got shape ", x.shape_str());
  require<DimensionError>(w.rank() == 4, "conv2d: weight must be OxIxKhxKw, got shape ",
                          w.shape_str());
  require<ContractError>(stride >= 1, "conv2d: stride must be positive, got ", stride);
  require<ContractError>(padding >= 0, "conv2d: padding must be non-negative, got ", padding);
  ConvDims d;
  d.n = x.dim(0);
  d.c = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.o = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  d.stride = stride;
  d.pad = padding;
  require<DimensionError>(w.dim(1) == d.c, "conv2d: input has ", d.c,
                          " channels but weight expects ", w.dim(1));
  require<DimensionError>(d.h + 2 * d.pad >= d.kh && d.w + 2 * d.pad >= d.kw,
                          "conv2d: kernel ", d.kh, "x", d.kw, " does not fit padded input ",
                          d.h + 2 * d.pad, "x", d.w + 2 * d.pad);
  d.oh = (d.h + 2 * d.pad - d.kh) / d.stride + 1;
  d.ow = (d.w + 2 * d.pad - d.kw) / d.stride + 1;
  require<DimensionError>(d.oh >= 1 && d.ow >= 1, "conv2d: zero-size output for input ",
                          x.shape_str());
  return d;
}

// Unpacks one sample into a [C*Kh*Kw, OH*OW] patch matrix, zero padding.
template <typename S>
void im2col(const S* im, const ConvDims& d, S* col) {
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < d.c; ++c) {
    for (std::int64_t kh = 0; kh < d.kh; ++kh) {
      for (std::int64_t kw = 0; kw < d.kw; ++kw, ++row) {
        S* dst = col + row * d.col_cols();
        for (std::int64_t oh = 0; oh < d.oh; ++oh) {
          const std::int64_t ih = oh * d.stride + kh - d.pad;
          S* drow = dst + oh * d.ow;
          if (ih < 0 || ih >= d.h) {
            std::fill(drow, drow + d.ow, S(0));
            continue;
          }
          const S* srow = im + (c * d.h + ih) * d.w;
          for (std::int64_t ow = 0; ow < d.ow; ++ow) {
            const std::int64_t iw = ow * d.stride + kw - d.pad;
            drow[ow] = (iw >= 0 && iw < d.w) ? srow[iw] : S(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds a patch matrix back into image layout.
template <typename S>
void col2im(const S* col, const ConvDims& d, S* im) {
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < d.c; ++c) {
    for (std::int64_t kh = 0; kh < d.kh; ++kh) {
      for (std::int64_t kw = 0; kw < d.kw; ++kw, ++row) {
        const S* src = col + row * d.col_cols();
        for (std::int64_t oh = 0; oh < d.oh; ++oh) {
          const std::int64_t ih = oh * d.stride + kh - d.pad;
          if (ih < 0 || ih >= d.h) {
            continue;
          }
          const S* srow = src + oh * d.ow;
          S* drow = im + (c * d.h + ih) * d.w;
          for (std::int64_t ow = 0; ow < d.ow; ++ow) {
            const std::int64_t iw = ow * d.stride + kw - d.pad;
            if (iw >= 0 && iw < d.w) {
              drow[iw] += srow[ow];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename S>
Var<S> conv2d(Var<S> input, Var<S> weight, std::optional<Var<S>> bias, int stride, int padding) {
  Tape<S>& t = bias ? same_tape<S>({&input, &weight, &*bias}) : same_tape<S>({&input, &weight});
  const Tensor<S>& x = t.node(input.id).value;
  const Tensor<S>& w = t.node(weight.id).value;
  const ConvDims d = conv_dims(x, w, stride, padding);
  if (bias) {
    const Tensor<S>& b = t.node(bias->id).value;
    require<DimensionError>(b.rank() == 1 && b.dim(0) == d.o, "conv2d: bias must have shape [",
                            d.o, "], got ", b.shape_str());
  }

  Tensor<S> out({d.n, d.o, d.oh, d.ow});
  std::vector<S> col(static_cast<std::size_t>(d.col_rows() * d.col_cols()));
  for (std::int64_t n = 0; n < d.n; ++n) {
    im2col(x.data() + n * d.c * d.h * d.w, d, col.data());
    gemm_nn(d.o, d.col_cols(), d.col_rows(), w.data(), col.data(),
            out.data() + n * d.o * d.oh * d.ow);
  }
  if (bias) {
    const Tensor<S>& b = t.node(bias->id).value;
    for (std::int64_t n = 0; n < d.n; ++n) {
      for (std::int64_t o = 0; o < d.o; ++o) {
        S* plane = out.data() + (n * d.o + o) * d.oh * d.ow;
        const S bv = b[o];
        for (std::int64_t i = 0; i < d.oh * d.ow; ++i) {
          plane[i] += bv;
        }
      }
    }
  }

  const std::int32_t in_id = input.id;
  const std::int32_t w_id = weight.id;
  const std::int32_t b_id = bias ? bias->id : -1;
  auto backward = [in_id, w_id, b_id, d](Tape<S>& tape, std::int32_t self) {
    const Tensor<S>& gout = tape.node(self).grad;
    const Tensor<S>& x_ = tape.node(in_id).value;
    const Tensor<S>& w_ = tape.node(w_id).value;
    const std::int64_t plane = d.o * d.oh * d.ow;
    std::vector<S> col(static_cast<std::size_t>(d.col_rows() * d.col_cols()));
    if (tape.node_needs_grad(w_id)) {
      Tensor<S> gw(w_.shape());
      for (std::int64_t n = 0; n < d.n; ++n) {
        im2col(x_.data() + n * d.c * d.h * d.w, d, col.data());
        gemm_nt(d.o, d.col_rows(), d.col_cols(), gout.data() + n * plane, col.data(), gw.data());
      }
      tape.accumulate(w_id, gw);
    }
    if (tape.node_needs_grad(in_id)) {
      Tensor<S> gx(x_.shape());
      for (std::int64_t n = 0; n < d.n; ++n) {
        std::fill(col.begin(), col.end(), S(0));
        gemm_tn(d.col_rows(), d.col_cols(), d.o, w_.data(), gout.data() + n * plane, col.data());
        col2im(col.data(), d, gx.data() + n * d.c * d.h * d.w);
      }
      tape.accumulate(in_id, gx);
    }
    if (b_id >= 0 && tape.node_needs_grad(b_id)) {
      Tensor<S> gb({d.o});
      for (std::int64_t n = 0; n < d.n; ++n) {
        for (std::int64_t o = 0; o < d.o; ++o) {
          const S* g = gout.data() + (n * d.o + o) * d.oh * d.ow;
          S acc = S(0);
          for (std::int64_t i = 0; i < d.oh * d.ow; ++i) {
            acc += g[i];
          }
          gb[o] += acc;
        }
      }
      tape.accumulate(b_id, gb);
    }
  };
  std::vector<std::int32_t> inputs{in_id, w_id};
  if (b_id >= 0) {
    inputs.push_back(b_id);
  }
  return t.emplace(OpKind::conv2d, std::move(inputs), std::move(out), std::move(backward));
}

template <typename S>
Var<S> conv_transpose2d(Var<S> input, Var<S> weight, std::optional<Var<S>> bias) {
  Tape<S>& t = bias ? same_tape<S>({&input, &weight, &*bias}) : same_tape<S>({&input, &weight});
  const Tensor<S>& x = t.node(input.id).value;
  const Tensor<S>& w = t.node(weight.id).value;
  require<DimensionError>(x.rank() == 4, "conv_transpose2d: input must be NCHW, got ",
                          x.shape_str());
  require<DimensionError>(w.rank() == 4 && w.dim(2) == 2 && w.dim(3) == 2,
                          "conv_transpose2d: weight must be IxOx2x2, got ", w.shape_str());
  const std::int64_t N = x.dim(0), I = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t O = w.dim(1);
  require<DimensionError>(w.dim(0) == I, "conv_transpose2d: input has ", I,
                          " channels but weight expects ", w.dim(0));
  if (bias) {
    const Tensor<S>& b = t.node(bias->id).value;
    require<DimensionError>(b.rank() == 1 && b.dim(0) == O,
                            "conv_transpose2d: bias must have shape [", O, "], got ",
                            b.shape_str());
  }

  // Stride equals kernel size, so each input pixel scatters into its own
  // 2x2 output block with no overlap.
  Tensor<S> out({N, O, 2 * H, 2 * W});
  if (bias) {
    const Tensor<S>& b = t.node(bias->id).value;
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t o = 0; o < O; ++o) {
        S* plane = out.data() + (n * O + o) * 4 * H * W;
        std::fill(plane, plane + 4 * H * W, b[o]);
      }
    }
  }
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t i = 0; i < I; ++i) {
      const S* xplane = x.data() + (n * I + i) * H * W;
      for (std::int64_t o = 0; o < O; ++o) {
        const S* taps = w.data() + (i * O + o) * 4;
        S* oplane = out.data() + (n * O + o) * 4 * H * W;
        for (std::int64_t h = 0; h < H; ++h) {
          const S* xrow = xplane + h * W;
          S* orow0 = oplane + (2 * h) * 2 * W;
          S* orow1 = oplane + (2 * h + 1) * 2 * W;
          for (std::int64_t x_ = 0; x_ < W; ++x_) {
            const S v = xrow[x_];
            orow0[2 * x_] += v * taps[0];
            orow0[2 * x_ + 1] += v * taps[1];
            orow1[2 * x_] += v * taps[2];
            orow1[2 * x_ + 1] += v * taps[3];
          }
        }
      }
    }
  }

  const std::int32_t in_id = input.id;
  const std::int32_t w_id = weight.id;
  const std::int32_t b_id = bias ? bias->id : -1;
  auto backward = [in_id, w_id, b_id, N, I, O, H, W](Tape<S>& tape, std::int32_t self) {
    const Tensor<S>& gout = tape.node(self).grad;
    const Tensor<S>& x_ = tape.node(in_id).value;
    const Tensor<S>& w_ = tape.node(w_id).value;
    if (tape.node_needs_grad(in_id)) {
      Tensor<S> gx(x_.shape());
      for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t i = 0; i < I; ++i) {
          S* gxplane = gx.data() + (n * I + i) * H * W;
          for (std::int64_t o = 0; o < O; ++o) {
            const S* taps = w_.data() + (i * O + o) * 4;
            const S* gplane = gout.data() + (n * O + o) * 4 * H * W;
            for (std::int64_t h = 0; h < H; ++h) {
              const S* grow0 = gplane + (2 * h) * 2 * W;
              const S* grow1 = gplane + (2 * h + 1) * 2 * W;
              S* gxrow = gxplane + h * W;
              for (std::int64_t x2 = 0; x2 < W; ++x2) {
                gxrow[x2] += grow0[2 * x2] * taps[0] + grow0[2 * x2 + 1] * taps[1] +
                             grow1[2 * x2] * taps[2] + grow1[2 * x2 + 1] * taps[3];
              }
            }
          }
        }
      }
      tape.accumulate(in_id, gx);
    }
    if (tape.node_needs_grad(w_id)) {
      Tensor<S> gw(w_.shape());
      for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t i = 0; i < I; ++i) {
          const S* xplane = x_.data() + (n * I + i) * H * W;
          for (std::int64_t o = 0; o < O; ++o) {
            S* gtaps = gw.data() + (i * O + o) * 4;
            const S* gplane = gout.data() + (n * O + o) * 4 * H * W;
            for (std::int64_t h = 0; h < H; ++h) {
              const S* xrow = xplane + h * W;
              const S* grow0 = gplane + (2 * h) * 2 * W;
              const S* grow1 = gplane + (2 * h + 1) * 2 * W;
              for (std::int64_t x2 = 0; x2 < W; ++x2) {
                const S v = xrow[x2];
                gtaps[0] += v * grow0[2 * x2];
                gtaps[1] += v * grow0[2 * x2 + 1];
                gtaps[2] += v * grow1[2 * x2];
                gtaps[3] += v * grow1[2 * x2 + 1];
              }
            }
          }
        }
      }
      tape.accumulate(w_id, gw);
    }
    if (b_id >= 0 && tape.node_needs_grad(b_id)) {
      Tensor<S> gb({O});
      for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t o = 0; o < O; ++o) {
          const S* gplane = gout.data() + (n * O + o) * 4 * H * W;
          S acc = S(0);
          for (std::int64_t i = 0; i < 4 * H * W; ++i) {
            acc += gplane[i];
          }
          gb[o] += acc;
        }
      }
      tape.accumulate(b_id, gb);
    }
  };
  std::vector<std::int32_t> inputs{in_id, w_id};
  if (b_id >= 0) {
    inputs.push_back(b_id);
  }
  return t.emplace(OpKind::conv_transpose2d, std::move(inputs), std::move(out),
                   std::move(backward));
}

template <typename S>
Var<S> batch_norm(Var<S> input, Var<S> gamma, Var<S> beta, Tensor<S>& running_mean,
                  Tensor<S>& running_var, bool training, S momentum, S eps,
                  bool update_running_stats) {
  Tape<S>& t = same_tape<S>({&input, &gamma, &beta});
  const Tensor<S>& x = t.node(input.id).value;
  require<DimensionError>(x.rank() == 4, "batch_norm: input must be NCHW, got ", x.shape_str());
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Tensor<S>& g = t.node(gamma.id).value;
  const Tensor<S>& b = t.node(beta.id).value;
  require<DimensionError>(g.rank() == 1 && g.dim(0) == C && b.rank() == 1 && b.dim(0) == C,
                          "batch_norm: gamma/beta must have shape [", C, "]");
  require<DimensionError>(running_mean.rank() == 1 && running_mean.dim(0) == C &&
                              running_var.rank() == 1 && running_var.dim(0) == C,
                          "batch_norm: running stats must have shape [", C, "]");
  const std::int64_t m = N * H * W;
  if (training) {
    require<ContractError>(m >= 2,
                           "batch_norm: degenerate statistics, train mode needs at least two "
                           "values per channel, got ",
                           m);
  }

  std::vector<S> mean(static_cast<std::size_t>(C));
  std::vector<S> invstd(static_cast<std::size_t>(C));
  const std::int64_t hw = H * W;
  if (training) {
    for (std::int64_t c = 0; c < C; ++c) {
      S sum = S(0);
      for (std::int64_t n = 0; n < N; ++n) {
        const S* plane = x.data() + (n * C + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          sum += plane[i];
        }
      }
      const S mu = sum / static_cast<S>(m);
      S var = S(0);
      for (std::int64_t n = 0; n < N; ++n) {
        const S* plane = x.data() + (n * C + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          const S dv = plane[i] - mu;
          var += dv * dv;
        }
      }
      var /= static_cast<S>(m);
      mean[static_cast<std::size_t>(c)] = mu;
      invstd[static_cast<std::size_t>(c)] = S(1) / std::sqrt(var + eps);
      if (update_running_stats) {
        running_mean[c] = (S(1) - momentum) * running_mean[c] + momentum * mu;
        const S var_unbiased = var * static_cast<S>(m) / static_cast<S>(m - 1);
        running_var[c] = (S(1) - momentum) * running_var[c] + momentum * var_unbiased;
      }
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      mean[static_cast<std::size_t>(c)] = running_mean[c];
      invstd[static_cast<std::size_t>(c)] = S(1) / std::sqrt(running_var[c] + eps);
    }
  }

  Tensor<S> out(x.shape());
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const S* src = x.data() + (n * C + c) * hw;
      S* dst = out.data() + (n * C + c) * hw;
      const S mu = mean[static_cast<std::size_t>(c)];
      const S is = invstd[static_cast<std::size_t>(c)];
      const S gc = g[c];
      const S bc = b[c];
      for (std::int64_t i = 0; i < hw; ++i) {
        dst[i] = gc * (src[i] - mu) * is + bc;
      }
    }
  }

  const std::int32_t in_id = input.id;
  const std::int32_t g_id = gamma.id;
  const std::int32_t b_id = beta.id;
  auto backward = [in_id, g_id, b_id, N, C, hw, training, mean, invstd](Tape<S>& tape,
                                                                        std::int32_t self) {
    const Tensor<S>& gout = tape.node(self).grad;
    const Tensor<S>& x_ = tape.node(in_id).value;
    const Tensor<S>& g_ = tape.node(g_id).value;
    const S m_total = static_cast<S>(N) * static_cast<S>(hw);
    Tensor<S> dgamma({C});
    Tensor<S> dbeta({C});
    Tensor<S> dx;
    const bool want_dx = tape.node_needs_grad(in_id);
    if (want_dx) {
      dx = Tensor<S>::zeros(x_.shape());
    }
    for (std::int64_t c = 0; c < C; ++c) {
      const S mu = mean[static_cast<std::size_t>(c)];
      const S is = invstd[static_cast<std::size_t>(c)];
      S sum_g = S(0);
      S sum_gxhat = S(0);
      for (std::int64_t n = 0; n < N; ++n) {
        const S* gp = gout.data() + (n * C + c) * hw;
        const S* xp = x_.data() + (n * C + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          sum_g += gp[i];
          sum_gxhat += gp[i] * (xp[i] - mu) * is;
        }
      }
      dbeta[c] = sum_g;
      dgamma[c] = sum_gxhat;
      if (!want_dx) {
        continue;
      }
      const S gc = g_[c];
      for (std::int64_t n = 0; n < N; ++n) {
        const S* gp = gout.data() + (n * C + c) * hw;
        const S* xp = x_.data() + (n * C + c) * hw;
        S* dp = dx.data() + (n * C + c) * hw;
        if (training) {
          for (std::int64_t i = 0; i < hw; ++i) {
            const S xhat = (xp[i] - mu) * is;
            dp[i] = gc * is * (gp[i] - sum_g / m_total - xhat * sum_gxhat / m_total);
          }
        } else {
          for (std::int64_t i = 0; i < hw; ++i) {
            dp[i] = gc * is * gp[i];
          }
        }
      }
    }
    if (want_dx) {
      tape.accumulate(in_id, dx);
    }
    tape.accumulate(g_id, dgamma);
    tape.accumulate(b_id, dbeta);
  };
  return t.emplace(OpKind::batch_norm, {in_id, g_id, b_id}, std::move(out), std::move(backward));
}

template <typename S>
Var<S> relu(Var<S> input) {
  Tape<S>& t = same_tape<S>({&input});
  const Tensor<S>& x = t.node(input.id).value;
  Tensor<S> out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    out[i] = x[i] > S(0) ? x[i] : S(0);
  }
  const std::int32_t in_id = input.id;
  auto backward = [in_id](Tape<S>& tape, std::int32_t self) {
    if (!tape.node_needs_grad(in_id)) {
      return;
    }
    const Tensor<S>& gout = tape.node(self).grad;
    const Tensor<S>& x_ = tape.node(in_id).value;
    Tensor<S> gx(x_.shape());
    for (std::int64_t i = 0; i < x_.numel(); ++i) {
      gx[i] = x_[i] > S(0) ? gout[i] : S(0);
    }
    tape.accumulate(in_id, gx);
  };
  return t.emplace(OpKind::relu, {in_id}, std::move(out), std::move(backward));
}

template <typename S>
Var<S> sigmoid(Var<S> input) {
  Tape<S>& t = same_tape<S>({&input});
  const Tensor<S>& x = t.node(input.id).value;
  Tensor<S> out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const S v = x[i];
    if (v >= S(0)) {
      out[i] = S(1) / (S(1) + std::exp(-v));
    } else {
      const S e = std::exp(v);
      out[i] = e / (S(1) + e);
    }
  }
  const std::int32_t in_id = input.id;
  auto backward = [in_id](Tape<S>& tape, std::int32_t self) {
    if (!tape.node_needs_grad(in_id)) {
      return;
    }
    const Tensor<S>& gout = tape.node(self).grad;
    const Tensor<S>& y = tape.node(self).value;
    Tensor<S> gx(y.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) {
      gx[i] = gout[i] * y[i] * (S(1) - y[i]);
    }
    tape.accumulate(in_id, gx);
  };
  return t.emplace(OpKind::sigmoid, {in_id}, std::move(out), std::move(backward));
}

template <typename S>
Var<S> max_pool2d(Var<S> input, int kernel, int stride, int padding) {
  Tape<S>& t = same_tape<S>({&input});
  const Tensor<S>& x = t.node(input.id).value;
  require<DimensionError>(x.rank() == 4, "max_pool2d: input must be NCHW, got ", x.shape_str());
  require<ContractError>(kernel >= 1 && stride >= 1 && padding >= 0,
                         "max_pool2d: invalid kernel/stride/padding");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t K = kernel, ST = stride, P = padding;
  require<DimensionError>(H + 2 * P >= K && W + 2 * P >= K, "max_pool2d: window ", K,
                          " does not fit padded input ", H + 2 * P, "x", W + 2 * P);
  const std::int64_t OH = (H + 2 * P - K) / ST + 1;
  const std::int64_t OW = (W + 2 * P - K) / ST + 1;

  Tensor<S> out({N, C, OH, OW});
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(N * C * OH * OW));
  std::int64_t oidx = 0;
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const S* plane = x.data() + (n * C + c) * H * W;
      const std::int64_t plane_base = (n * C + c) * H * W;
      for (std::int64_t oh = 0; oh < OH; ++oh) {
        for (std::int64_t ow = 0; ow < OW; ++ow, ++oidx) {
          S best = std::numeric_limits<S>::lowest();
          std::int64_t best_idx = -1;
          for (std::int64_t kh = 0; kh < K; ++kh) {
            const std::int64_t ih = oh * ST + kh - P;
            if (ih < 0 || ih >= H) {
              continue;
            }
            for (std::int64_t kw = 0; kw < K; ++kw) {
              const std::int64_t iw = ow * ST + kw - P;
              if (iw < 0 || iw >= W) {
                continue;
              }
              const S v = plane[ih * W + iw];
              if (best_idx < 0 || v > best) {
                best = v;
                best_idx = ih * W + iw;
              }
            }
          }
          out[oidx] = best;
          argmax[static_cast<std::size_t>(oidx)] = plane_base + best_idx;
        }
      }
    }
  }

  const std::int32_t in_id = input.id;
  auto backward = [in_id, argmax](Tape<S>& tape, std::int32_t self) {
    if (!tape.node_needs_grad(in_id)) {
      return;
    }
    const Tensor<S>& gout = tape.node(self).grad;
    Tensor<S> gx(tape.node(in_id).value.shape());
    for (std::int64_t i = 0; i < gout.numel(); ++i) {
      gx[argmax[static_cast<std::size_t>(i)]] += gout[i];
    }
    tape.accumulate(in_id, gx);
  };
  return t.emplace(OpKind::max_pool2d, {in_id}, std::move(out), std::move(backward));
}

template <typename S>
Var<S> global_avg_pool(Var<S> input) {
  Tape<S>& t = same_tape<S>({&input});
  const Tensor<S>& x = t.node(input.id).value;
  require<DimensionError>(x.rank() == 4, "global_avg_pool: input must be NCHW, got ",
                          x.shape_str());
  const std::int64_t N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<S> out({N, C, 1, 1});
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const S* plane = x.data() + nc * hw;
    S acc = S(0);
    for (std::int64_t i = 0; i < hw; ++i) {
      acc += plane[i];
    }
    out[nc] = acc / static_cast<S>(hw);
  }
  const std::int32_t in_id = input.id;
  auto backward = [in_id, N, C, hw](Tape<S>& tape, std::int32_t self) {
    if (!tape.node_needs_grad(in_id)) {
      return;
    }
    const Tensor<S>& gout = tape.node(self).grad;
    Tensor<S> gx(tape.node(in_id).value.shape());
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
      const S gv = gout[nc] / static_cast<S>(hw);
      S* plane = gx.data() + nc * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        plane[i] = gv;
      }
    }
    tape.accumulate(in_id, gx);
  };
  return t.emplace(OpKind::global_avg_pool, {in_id}, std::move(out), std::move(backward));
}

template <typename S>
Var<S> fully_connected(Var<S> input, Var<S> weight, std::optional<Var<S>> bias) {
  Tape<S>& t = bias ? same_tape<S>({&input, &weight, &*bias}) : same_tape<S>({&input, &weight});
  const Tensor<S>& x = t.node(input.id).value;
  const Tensor<S>& w = t.node(weight.id).value;
  require<DimensionError>(x.rank() == 2, "fully_connected: input must be NxC, got ",
                          x.shape_str());
  require<DimensionError>(w.rank() == 2 && w.dim(1) == x.dim(1),
                          "fully_connected: weight must be Dx", x.dim(1), ", got ", w.shape_str());
  const std::int64_t N = x.dim(0), C = x.dim(1), D = w.dim(0);
  if (bias) {
    const Tensor<S>& b = t.node(bias->id).value;
    require<DimensionError>(b.rank() == 1 && b.dim(0) == D, "fully_connected: bias must be [", D,
                            "], got ", b.shape_str());
  }
  Tensor<S> out({N, D});
  gemm_nt(N, D, C, x.data(), w.data(), out.data());
  if (bias) {
    const Tensor<S>& b = t.node(bias->id).value;
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t d = 0; d < D; ++d) {
        out[n * D + d] += b[d];
      }
    }
  }
  const std::int32_t in_id = input.id;
  const std::int32_t w_id = weight.id;
  const std::int32_t b_id = bias ? bias->id : -1;
  auto backward = [in_id, w_id, b_id, N, C, D](Tape<S>& tape, std::int32_t self) {
    const Tensor<S>& gout = tape.node(self).grad;  // N x D
    const Tensor<S>& x_ = tape.node(in_id).value;
    const Tensor<S>& w_ = tape.node(w_id).value;
    if (tape.node_needs_grad(in_id)) {
      Tensor<S> gx({N, C});
      gemm_nn(N, C, D, gout.data(), w_.data(), gx.data());
      tape.accumulate(in_id, gx);
    }
    if (tape.node_needs_grad(w_id)) {
      Tensor<S> gw({D, C});
      gemm_tn(D, C, N, gout.data(), x_.data(), gw.data());
      tape.accumulate(w_id, gw);
    }
    if (b_id >= 0 && tape.node_needs_grad(b_id)) {
      Tensor<S> gb({D});
      for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t d = 0; d < D; ++d) {
          gb[d] += gout[n * D + d];
        }
      }
      tape.accumulate(b_id, gb);
    }
  };
  std::vector<std::int32_t> inputs{in_id, w_id};
  if (b_id >= 0) {
    inputs.push_back(b_id);
  }
  return t.emplace(OpKind::fully_connected, std::move(inputs), std::move(out),
                   std::move(backward));
}

template <typename S>
Var<S> concat_channels(Var<S> a, Var<S> b) {
  Tape<S>& t = same_tape<S>({&a, &b});
  const Tensor<S>& xa = t.node(a.id).value;
  const Tensor<S>& xb = t.node(b.id).value;
  require<DimensionError>(xa.rank() == 4 && xb.rank() == 4, "concat_channels: inputs must be NCHW");
  require<DimensionError>(xa.dim(0) == xb.dim(0) && xa.dim(2) == xb.dim(2) &&
                              xa.dim(3) == xb.dim(3),
                          "concat_channels: N/H/W mismatch ", xa.shape_str(), " vs ",
                          xb.shape_str());
  const std::int64_t N = xa.dim(0), Ca = xa.dim(1), Cb = xb.dim(1), hw = xa.dim(2) * xa.dim(3);
  Tensor<S> out({N, Ca + Cb, xa.dim(2), xa.dim(3)});
  for (std::int64_t n = 0; n < N; ++n) {
    std::copy(xa.data() + n * Ca * hw, xa.data() + (n + 1) * Ca * hw,
              out.data() + n * (Ca + Cb) * hw);
    std::copy(xb.data() + n * Cb * hw, xb.data() + (n + 1) * Cb * hw,
              out.data() + n * (Ca + Cb) * hw + Ca * hw);
  }
  const std::int32_t a_id = a.id;
  const std::int32_t b_id = b.id;
  auto backward = [a_id, b_id, N, Ca, Cb, hw](Tape<S>& tape, std::int32_t self) {
    const Tensor<S>& gout = tape.node(self).grad;
    if (tape.node_needs_grad(a_id)) {
      Tensor<S> ga(tape.node(a_id).value.shape());
      for (std::int64_t n = 0; n < N; ++n) {
        std::copy(gout.data() + n * (Ca + Cb) * hw, gout.data() + n * (Ca + Cb) * hw + Ca * hw,
                  ga.data() + n * Ca * hw);
      }
      tape.accumulate(a_id, ga);
    }
    if (tape.node_needs_grad(b_id)) {
      Tensor<S> gb(tape.node(b_id).value.shape());
      for (std::int64_t n = 0; n < N; ++n) {
        std::copy(gout.data() + n * (Ca + Cb) * hw + Ca * hw,
                  gout.data() + (n + 1) * (Ca + Cb) * hw, gb.data() + n * Cb * hw);
      }
      tape.accumulate(b_id, gb);
    }
  };
  return t.emplace(OpKind::concat_channels, {a_id, b_id}, std::move(out), std::move(backward));
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  Tape<S>& t = same_tape<S>({&a, &b});
  const Tensor<S>& xa = t.node(a.id).value;
  const Tensor<S>& xb = t.node(b.id).value;
  require<DimensionError>(xa.same_shape(xb), "add: shape mismatch ", xa.shape_str(), " vs ",
                          xb.shape_str());
  Tensor<S> out(xa.shape());
  for (std::int64_t i = 0; i < xa.numel(); ++i) {
    out[i] = xa[i] + xb[i];
  }
  const std::int32_t a_id = a.id;
  const std::int32_t b_id = b.id;
  auto backward = [a_id, b_id](Tape<S>& tape, std::int32_t self) {
    const Tensor<S>& gout = tape.node(self).grad;
    tape.accumulate(a_id, gout);
    tape.accumulate(b_id, gout);
  };
  return t.emplace(OpKind::add, {a_id, b_id}, std::move(out), std::move(backward));
}

namespace {
enum class MulMode { elementwise, channel_scale, spatial_scale };
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  Tape<S>& t = same_tape<S>({&a, &b});
  const Tensor<S>& xa = t.node(a.id).value;
  const Tensor<S>& xb = t.node(b.id).value;
  MulMode mode;
  if (xa.same_shape(xb)) {
    mode = MulMode::elementwise;
  } else {
    require<DimensionError>(xa.rank() == 4 && xb.rank() == 4 && xa.dim(0) == xb.dim(0),
                            "mul: incompatible shapes ", xa.shape_str(), " vs ", xb.shape_str());
    if (xb.dim(1) == xa.dim(1) && xb.dim(2) == 1 && xb.dim(3) == 1) {
      mode = MulMode::channel_scale;
    } else if (xb.dim(1) == 1 && xb.dim(2) == xa.dim(2) && xb.dim(3) == xa.dim(3)) {
      mode = MulMode::spatial_scale;
    } else {
      raise<DimensionError>("mul: incompatible shapes ", xa.shape_str(), " vs ", xb.shape_str());
    }
  }

  Tensor<S> out(xa.shape());
  const std::int64_t N = xa.rank() == 4 ? xa.dim(0) : 0;
  const std::int64_t C = xa.rank() == 4 ? xa.dim(1) : 0;
  const std::int64_t hw = xa.rank() == 4 ? xa.dim(2) * xa.dim(3) : 0;
  switch (mode) {
    case MulMode::elementwise:
      for (std::int64_t i = 0; i < xa.numel(); ++i) {
        out[i] = xa[i] * xb[i];
      }
      break;
    case MulMode::channel_scale:
      for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t c = 0; c < C; ++c) {
          const S s = xb[n * C + c];
          const S* src = xa.data() + (n * C + c) * hw;
          S* dst = out.data() + (n * C + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            dst[i] = src[i] * s;
          }
        }
      }
      break;
    case MulMode::spatial_scale:
      for (std::int64_t n = 0; n < N; ++n) {
        const S* sp = xb.data() + n * hw;
        for (std::int64_t c = 0; c < C; ++c) {
          const S* src = xa.data() + (n * C + c) * hw;
          S* dst = out.data() + (n * C + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            dst[i] = src[i] * sp[i];
          }
        }
      }
      break;
  }

  const std::int32_t a_id = a.id;
  const std::int32_t b_id = b.id;
  auto backward = [a_id, b_id, mode, N, C, hw](Tape<S>& tape, std::int32_t self) {
    const Tensor<S>& gout = tape.node(self).grad;
    const Tensor<S>& xa_ = tape.node(a_id).value;
    const Tensor<S>& xb_ = tape.node(b_id).value;
    if (tape.node_needs_grad(a_id)) {
      Tensor<S> ga(xa_.shape());
      switch (mode) {
        case MulMode::elementwise:
          for (std::int64_t i = 0; i < xa_.numel(); ++i) {
            ga[i] = gout[i] * xb_[i];
          }
          break;
        case MulMode::channel_scale:
          for (std::int64_t n = 0; n < N; ++n) {
            for (std::int64_t c = 0; c < C; ++c) {
              const S s = xb_[n * C + c];
              const S* gp = gout.data() + (n * C + c) * hw;
              S* dst = ga.data() + (n * C + c) * hw;
              for (std::int64_t i = 0; i < hw; ++i) {
                dst[i] = gp[i] * s;
              }
            }
          }
          break;
        case MulMode::spatial_scale:
          for (std::int64_t n = 0; n < N; ++n) {
            const S* sp = xb_.data() + n * hw;
            for (std::int64_t c = 0; c < C; ++c) {
              const S* gp = gout.data() + (n * C + c) * hw;
              S* dst = ga.data() + (n * C + c) * hw;
              for (std::int64_t i = 0; i < hw; ++i) {
                dst[i] = gp[i] * sp[i];
              }
            }
          }
          break;
      }
      tape.accumulate(a_id, ga);
    }
    if (tape.node_needs_grad(b_id)) {
      Tensor<S> gb(xb_.shape());
      switch (mode) {
        case MulMode::elementwise:
          for (std::int64_t i = 0; i < xb_.numel(); ++i) {
            gb[i] = gout[i] * xa_[i];
          }
          break;
        case MulMode::channel_scale:
          for (std::int64_t n = 0; n < N; ++n) {
            for (std::int64_t c = 0; c < C; ++c) {
              const S* gp = gout.data() + (n * C + c) * hw;
              const S* ap = xa_.data() + (n * C + c) * hw;
              S acc = S(0);
              for (std::int64_t i = 0; i < hw; ++i) {
                acc += gp[i] * ap[i];
              }
              gb[n * C + c] = acc;
            }
          }
          break;
        case MulMode::spatial_scale:
          for (std::int64_t n = 0; n < N; ++n) {
            S* dst = gb.data() + n * hw;
            for (std::int64_t c = 0; c < C; ++c) {
              const S* gp = gout.data() + (n * C + c) * hw;
              const S* ap = xa_.data() + (n * C + c) * hw;
              for (std::int64_t i = 0; i < hw; ++i) {
                dst[i] += gp[i] * ap[i];
              }
            }
          }
          break;
      }
      tape.accumulate(b_id, gb);
    }
  };
  return t.emplace(OpKind::mul, {a_id, b_id}, std::move(out), std::move(backward));
}

template <typename S>
Var<S> affine(Var<S> x, S scale, S shift) {
  Tape<S>& t = same_tape<S>({&x});
  const Tensor<S>& xv = t.node(x.id).value;
  Tensor<S> out(xv.shape());
  for (std::int64_t i = 0; i < xv.numel(); ++i) {
    out[i] = scale * xv[i] + shift;
  }
  const std::int32_t in_id = x.id;
  auto backward = [in_id, scale](Tape<S>& tape, std::int32_t self) {
    if (!tape.node_needs_grad(in_id)) {
      return;
    }
    const Tensor<S>& gout = tape.node(self).grad;
    Tensor<S> gx(gout.shape());
    for (std::int64_t i = 0; i < gout.numel(); ++i) {
      gx[i] = scale * gout[i];
    }
    tape.accumulate(in_id, gx);
  };
  return t.emplace(OpKind::affine, {in_id}, std::move(out), std::move(backward));
}

template <typename S>
Var<S> divide(Var<S> a, Var<S> b) {
  Tape<S>& t = same_tape<S>({&a, &b});
  const Tensor<S>& xa = t.node(a.id).value;
  const Tensor<S>& xb = t.node(b.id).value;
  require<DimensionError>(xa.same_shape(xb), "divide: shape mismatch ", xa.shape_str(), " vs ",
                          xb.shape_str());
  Tensor<S> out(xa.shape());
  for (std::int64_t i = 0; i < xa.numel(); ++i) {
    out[i] = xa[i] / xb[i];
  }
  const std::int32_t a_id = a.id;
  const std::int32_t b_id = b.id;
  auto backward = [a_id, b_id](Tape<S>& tape, std::int32_t self) {
    const Tensor<S>& gout = tape.node(self).grad;
    const Tensor<S>& xa_ = tape.node(a_id).value;
    const Tensor<S>& xb_ = tape.node(b_id).value;
    if (tape.node_needs_grad(a_id)) {
      Tensor<S> ga(xa_.shape());
      for (std::int64_t i = 0; i < xa_.numel(); ++i) {
        ga[i] = gout[i] / xb_[i];
      }
      tape.accumulate(a_id, ga);
    }
    if (tape.node_needs_grad(b_id)) {
      Tensor<S> gb(xb_.shape());
      for (std::int64_t i = 0; i < xb_.numel(); ++i) {
        gb[i] = -gout[i] * xa_[i] / (xb_[i] * xb_[i]);
      }
      tape.accumulate(b_id, gb);
    }
  };
  return t.emplace(OpKind::divide, {a_id, b_id}, std::move(out), std::move(backward));
}

template <typename S>
Var<S> sum_all(Var<S> x) {
  Tape<S>& t = same_tape<S>({&x});
  const Tensor<S>& xv = t.node(x.id).value;
  S acc = S(0);
  for (std::int64_t i = 0; i < xv.numel(); ++i) {
    acc += xv[i];
  }
  const std::int32_t in_id = x.id;
  auto backward = [in_id](Tape<S>& tape, std::int32_t self) {
    if (!tape.node_needs_grad(in_id)) {
      return;
    }
    const S g = tape.node(self).grad[0];
    tape.accumulate(in_id, Tensor<S>::full(tape.node(in_id).value.shape(), g));
  };
  return t.emplace(OpKind::sum_all, {in_id}, Tensor<S>::scalar(acc), std::move(backward));
}

template <typename S>
Var<S> sum_per_sample(Var<S> x) {
  Tape<S>& t = same_tape<S>({&x});
  const Tensor<S>& xv = t.node(x.id).value;
  require<DimensionError>(xv.rank() >= 1, "sum_per_sample: input must have a batch axis");
  const std::int64_t N = xv.dim(0);
  const std::int64_t per = xv.numel() / N;
  Tensor<S> out({N});
  for (std::int64_t n = 0; n < N; ++n) {
    const S* src = xv.data() + n * per;
    S acc = S(0);
    for (std::int64_t i = 0; i < per; ++i) {
      acc += src[i];
    }
    out[n] = acc;
  }
  const std::int32_t in_id = x.id;
  auto backward = [in_id, N, per](Tape<S>& tape, std::int32_t self) {
    if (!tape.node_needs_grad(in_id)) {
      return;
    }
    const Tensor<S>& gout = tape.node(self).grad;
    Tensor<S> gx(tape.node(in_id).value.shape());
    for (std::int64_t n = 0; n < N; ++n) {
      S* dst = gx.data() + n * per;
      for (std::int64_t i = 0; i < per; ++i) {
        dst[i] = gout[n];
      }
    }
    tape.accumulate(in_id, gx);
  };
  return t.emplace(OpKind::sum_per_sample, {in_id}, std::move(out), std::move(backward));
}

template <typename S>
Var<S> mean_all(Var<S> x) {
  Tape<S>& t = same_tape<S>({&x});
  const Tensor<S>& xv = t.node(x.id).value;
  const std::int64_t n = xv.numel();
  S acc = S(0);
  for (std::int64_t i = 0; i < n; ++i) {
    acc += xv[i];
  }
  const std::int32_t in_id = x.id;
  auto backward = [in_id, n](Tape<S>& tape, std::int32_t self) {
    if (!tape.node_needs_grad(in_id)) {
      return;
    }
    const S g = tape.node(self).grad[0] / static_cast<S>(n);
    tape.accumulate(in_id, Tensor<S>::full(tape.node(in_id).value.shape(), g));
  };
  return t.emplace(OpKind::mean_all, {in_id}, Tensor<S>::scalar(acc / static_cast<S>(n)),
                   std::move(backward));
}

#define CRACKSEG_INSTANTIATE_OPS(S)                                                        \
  template Var<S> conv2d<S>(Var<S>, Var<S>, std::optional<Var<S>>, int, int);              \
  template Var<S> conv_transpose2d<S>(Var<S>, Var<S>, std::optional<Var<S>>);              \
  template Var<S> batch_norm<S>(Var<S>, Var<S>, Var<S>, Tensor<S>&, Tensor<S>&, bool, S, S, \
                                bool);                                                     \
  template Var<S> relu<S>(Var<S>);                                                         \
  template Var<S> sigmoid<S>(Var<S>);                                                      \
  template Var<S> max_pool2d<S>(Var<S>, int, int, int);                                    \
  template Var<S> global_avg_pool<S>(Var<S>);                                              \
  template Var<S> fully_connected<S>(Var<S>, Var<S>, std::optional<Var<S>>);               \
  template Var<S> concat_channels<S>(Var<S>, Var<S>);                                      \
  template Var<S> add<S>(Var<S>, Var<S>);                                                  \
  template Var<S> mul<S>(Var<S>, Var<S>);                                                  \
  template Var<S> affine<S>(Var<S>, S, S);                                                 \
  template Var<S> divide<S>(Var<S>, Var<S>);                                               \
  template Var<S> sum_all<S>(Var<S>);                                                      \
  template Var<S> sum_per_sample<S>(Var<S>);                                               \
  template Var<S> mean_all<S>(Var<S>);

CRACKSEG_INSTANTIATE_OPS(float)
CRACKSEG_INSTANTIATE_OPS(double)

#undef CRACKSEG_INSTANTIATE_OPS

}  // namespace crackseg
