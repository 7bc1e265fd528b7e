#pragma once

#include <bit>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ct/tensor.hpp"

// Neural building blocks: 2-D convolution (im2col + gemm), frequency layer
// normalization, frequency dynamic convolution, pooling, dense heads, the
// softmax cross-entropy loss and the Adam optimizer. All layers are plain
// parameter holders; forward functions record onto the caller's tape.

namespace ct::nn {

// ---------------------------------------------------------------------------
// Convolution.

template <typename T>
struct Conv2D {
    Tensor<T> weight;  // [out_ch, in_ch, kh, kw]
    Tensor<T> bias;    // [out_ch]
    int stride_h = 1, stride_w = 1;
    int pad_h = 0, pad_w = 0;
};

namespace detail {

// Scratch arrays that are fully overwritten; skips the value-initialization
// a std::vector would do.
template <typename T>
struct Scratch {
    std::unique_ptr<T[]> data;
    explicit Scratch(std::int64_t n) : data(new T[static_cast<std::size_t>(n)]) {}
    T* get() { return data.get(); }
};

template <typename T>
void im2col(const T* x, int IC, int H, int W, int KH, int KW, int SH, int SW, int PH, int PW,
            int HO, int WO, T* col, std::int64_t col_base, std::int64_t ld) {
    for (int ic = 0; ic < IC; ++ic) {
        const T* plane = x + static_cast<std::int64_t>(ic) * H * W;
        for (int kh = 0; kh < KH; ++kh)
            for (int kw = 0; kw < KW; ++kw) {
                const std::int64_t row = (static_cast<std::int64_t>(ic) * KH + kh) * KW + kw;
                T* crow = col + row * ld + col_base;
                for (int ho = 0; ho < HO; ++ho) {
                    const int ih = ho * SH - PH + kh;
                    T* dst = crow + static_cast<std::int64_t>(ho) * WO;
                    if (ih < 0 || ih >= H) {
                        std::memset(dst, 0, sizeof(T) * static_cast<std::size_t>(WO));
                        continue;
                    }
                    const T* xrow = plane + static_cast<std::int64_t>(ih) * W;
                    if (SW == 1) {
                        // valid output range for this tap: 0 <= wo - PW + kw < W
                        int lo = PW - kw;
                        if (lo < 0) lo = 0;
                        int hi = W + PW - kw;
                        if (hi > WO) hi = WO;
                        if (hi < lo) hi = lo;
                        if (lo > 0) std::memset(dst, 0, sizeof(T) * static_cast<std::size_t>(lo));
                        std::memcpy(dst + lo, xrow + lo - PW + kw,
                                    sizeof(T) * static_cast<std::size_t>(hi - lo));
                        if (hi < WO)
                            std::memset(dst + hi, 0, sizeof(T) * static_cast<std::size_t>(WO - hi));
                    } else {
                        for (int wo = 0; wo < WO; ++wo) {
                            const int iw = wo * SW - PW + kw;
                            dst[wo] = (iw >= 0 && iw < W) ? xrow[iw] : T(0);
                        }
                    }
                }
            }
    }
}

template <typename T>
void col2im_acc(const T* col, int IC, int H, int W, int KH, int KW, int SH, int SW, int PH, int PW,
                int HO, int WO, T* gx, std::int64_t col_base, std::int64_t ld) {
    for (int ic = 0; ic < IC; ++ic) {
        T* plane = gx + static_cast<std::int64_t>(ic) * H * W;
        for (int kh = 0; kh < KH; ++kh)
            for (int kw = 0; kw < KW; ++kw) {
                const std::int64_t row = (static_cast<std::int64_t>(ic) * KH + kh) * KW + kw;
                const T* crow = col + row * ld + col_base;
                for (int ho = 0; ho < HO; ++ho) {
                    const int ih = ho * SH - PH + kh;
                    if (ih < 0 || ih >= H) continue;
                    T* xrow = plane + static_cast<std::int64_t>(ih) * W;
                    const T* src = crow + static_cast<std::int64_t>(ho) * WO;
                    if (SW == 1) {
                        int lo = PW - kw;
                        if (lo < 0) lo = 0;
                        int hi = W + PW - kw;
                        if (hi > WO) hi = WO;
                        if (hi < lo) hi = lo;
                        kernels::accumulate(xrow + lo - PW + kw, src + lo, hi - lo);
                    } else {
                        for (int wo = 0; wo < WO; ++wo) {
                            const int iw = wo * SW - PW + kw;
                            if (iw >= 0 && iw < W) xrow[iw] += src[wo];
                        }
                    }
                }
            }
    }
}

}  // namespace detail

// x: [batch, in_ch, H, W]; cross-correlation with zero padding.
template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 int sh, int sw, int ph, int pw) {
    if (x.rank() != 4 || w.rank() != 4) throw ShapeError("conv2d: expects rank-4 input and weight");
    if (bias.rank() != 1 || bias.dim(0) != w.dim(0))
        throw ShapeError("conv2d: bias shape mismatch");
    const int B = x.dim(0), IC = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OC = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    if (w.dim(1) != IC)
        throw ShapeError("conv2d: input has " + std::to_string(IC) + " channels, weight expects " +
                         std::to_string(w.dim(1)));
    if (sh <= 0 || sw <= 0) throw ShapeError("conv2d: stride must be positive");
    const int HO = (H + 2 * ph - KH) / sh + 1;
    const int WO = (W + 2 * pw - KW) / sw + 1;
    if (H + 2 * ph < KH || W + 2 * pw < KW || HO <= 0 || WO <= 0)
        throw ShapeError("conv2d: kernel does not fit padded input");

    const std::int64_t K = static_cast<std::int64_t>(IC) * KH * KW;
    const std::int64_t P = static_cast<std::int64_t>(HO) * WO;
    const std::int64_t BP = static_cast<std::int64_t>(B) * P;

    detail::Scratch<T> col(K * BP);
    for (int b = 0; b < B; ++b)
        detail::im2col(x.data() + static_cast<std::int64_t>(b) * IC * H * W, IC, H, W, KH, KW, sh,
                       sw, ph, pw, HO, WO, col.get(), b * P, BP);

    detail::Scratch<T> prod(OC * BP);
    kernels::gemm(w.data(), col.get(), prod.get(), OC, static_cast<int>(K), static_cast<int>(BP));

    Vec<T> out(static_cast<std::size_t>(static_cast<std::int64_t>(B) * OC * P));
    for (int b = 0; b < B; ++b)
        for (int oc = 0; oc < OC; ++oc) {
            T* dst = out.data() + (static_cast<std::int64_t>(b) * OC + oc) * P;
            std::memcpy(dst, prod.get() + oc * BP + b * P, sizeof(T) * static_cast<std::size_t>(P));
            kernels::add_scalar(dst, bias.data()[oc], dst, P);
        }

    Tensor<T> xsav = x, wsav = w;
    const int xn = x.node, wn = w.node, bn = bias.node;
    return ops::make_op_result<T>(
        tape, Shape{B, OC, HO, WO}, std::move(out), {xn, wn, bn},
        [xsav, wsav, xn, wn, bn, B, IC, H, W, OC, KH, KW, sh, sw, ph, pw, HO, WO, K, P,
         BP](const Vec<T>& g, Tape<T>& tp) {
            detail::Scratch<T> gm(OC * BP);
            for (int b = 0; b < B; ++b)
                for (int oc = 0; oc < OC; ++oc)
                    std::memcpy(gm.get() + oc * BP + b * P,
                                g.data() + (static_cast<std::int64_t>(b) * OC + oc) * P,
                                sizeof(T) * static_cast<std::size_t>(P));
            if (bn >= 0) {
                Vec<T> gb(static_cast<std::size_t>(OC), T(0));
                for (int oc = 0; oc < OC; ++oc) {
                    const T* row = gm.get() + oc * BP;
                    T acc = T(0);
                    for (std::int64_t i = 0; i < BP; ++i) acc += row[i];
                    gb[static_cast<std::size_t>(oc)] = acc;
                }
                tp.add_grad(bn, std::move(gb));
            }
            if (wn >= 0 || xn >= 0) {
                detail::Scratch<T> col(K * BP);
                if (wn >= 0) {
                    for (int b = 0; b < B; ++b)
                        detail::im2col(xsav.data() + static_cast<std::int64_t>(b) * IC * H * W, IC,
                                       H, W, KH, KW, sh, sw, ph, pw, HO, WO, col.get(), b * P, BP);
                    // dW[oc, kk] = sum_bp gm[oc, bp] * col[kk, bp]
                    Vec<T> gw(static_cast<std::size_t>(OC * K));
                    kernels::gemm_nt(gm.get(), col.get(), gw.data(), OC, static_cast<int>(BP),
                                     static_cast<int>(K));
                    tp.add_grad(wn, std::move(gw));
                }
                if (xn >= 0) {
                    detail::Scratch<T> wT(K * OC);
                    kernels::transpose(wsav.data(), wT.get(), OC, static_cast<int>(K));
                    detail::Scratch<T> gcol(K * BP);
                    kernels::gemm(wT.get(), gm.get(), gcol.get(), static_cast<int>(K), OC,
                                  static_cast<int>(BP));
                    Vec<T> gx(static_cast<std::size_t>(static_cast<std::int64_t>(B) * IC * H * W),
                              T(0));
                    for (int b = 0; b < B; ++b)
                        detail::col2im_acc(gcol.get(), IC, H, W, KH, KW, sh, sw, ph, pw, HO, WO,
                                           gx.data() + static_cast<std::int64_t>(b) * IC * H * W,
                                           b * P, BP);
                    tp.add_grad(xn, std::move(gx));
                }
            }
        });
}

template <typename T>
Tensor<T> conv2d_forward(Tape<T>* tape, const Conv2D<T>& layer, const Tensor<T>& x) {
    return conv2d(tape, x, layer.weight, layer.bias, layer.stride_h, layer.stride_w, layer.pad_h,
                  layer.pad_w);
}

// ---------------------------------------------------------------------------
// Pooling.

// Non-overlapping max pool; ragged edges are truncated (floor semantics).
template <typename T>
Tensor<T> maxpool2d(Tape<T>* tape, const Tensor<T>& x, int wh, int ww) {
    if (wh <= 0 || ww <= 0) throw ShapeError("maxpool2d: empty window");
    if (x.rank() != 4) throw ShapeError("maxpool2d: expects rank-4 input");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int HO = H / wh, WO = W / ww;
    if (HO <= 0 || WO <= 0) throw ShapeError("maxpool2d: window larger than input");
    Vec<T> out(static_cast<std::size_t>(static_cast<std::int64_t>(B) * C * HO * WO));
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
    std::int64_t oi = 0;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const T* plane = x.data() + (static_cast<std::int64_t>(b) * C + c) * H * W;
            const std::int64_t plane_off = (static_cast<std::int64_t>(b) * C + c) * H * W;
            for (int ho = 0; ho < HO; ++ho)
                for (int wo = 0; wo < WO; ++wo, ++oi) {
                    T best = plane[static_cast<std::int64_t>(ho * wh) * W + wo * ww];
                    std::int64_t besti = static_cast<std::int64_t>(ho * wh) * W + wo * ww;
                    for (int dh = 0; dh < wh; ++dh)
                        for (int dw = 0; dw < ww; ++dw) {
                            const std::int64_t idx =
                                static_cast<std::int64_t>(ho * wh + dh) * W + wo * ww + dw;
                            if (plane[idx] > best) {
                                best = plane[idx];
                                besti = idx;
                            }
                        }
                    out[static_cast<std::size_t>(oi)] = best;
                    (*argmax)[static_cast<std::size_t>(oi)] = plane_off + besti;
                }
        }
    const int xn = x.node;
    const std::int64_t xsize = x.size();
    return ops::make_op_result<T>(tape, Shape{B, C, HO, WO}, std::move(out), {xn},
                                  [argmax, xn, xsize](const Vec<T>& g, Tape<T>& tp) {
                                      Vec<T> gx(static_cast<std::size_t>(xsize), T(0));
                                      for (std::size_t i = 0; i < g.size(); ++i)
                                          gx[static_cast<std::size_t>((*argmax)[i])] += g[i];
                                      tp.add_grad(xn, std::move(gx));
                                  });
}

// [B,C,F,T] -> [B,C]; feeds the task heads.
template <typename T>
Tensor<T> global_avg_pool(Tape<T>* tape, const Tensor<T>& x) {
    if (x.rank() != 4) throw ShapeError("global_avg_pool: expects rank-4 input");
    return ops::mean(tape, x, {2, 3}, false);
}

// ---------------------------------------------------------------------------
// Dense head.

template <typename T>
struct Dense {
    Tensor<T> weight;  // [in, out]
    Tensor<T> bias;    // [out]
};

template <typename T>
Tensor<T> dense_forward(Tape<T>* tape, const Dense<T>& layer, const Tensor<T>& x) {
    return ops::add(tape, ops::matmul(tape, x, layer.weight), layer.bias);
}

// ---------------------------------------------------------------------------
// Frequency layer normalization: for every (sample, channel, time) slot the
// values across the frequency axis are standardized, then scaled and shifted
// by learnable per-bin parameters.

template <typename T>
struct FLN {
    Tensor<T> gamma;  // [freq_bins]
    Tensor<T> beta;   // [freq_bins]
    T epsilon = T(1e-5);
};

// Fused forward/backward: one pass for the statistics, one for the output.
// The backward is the standard layer-norm rule restricted to the F axis:
//   dx = (gamma*g - mean_f(gamma*g) - xhat * mean_f(gamma*g*xhat)) / sigma
template <typename T>
Tensor<T> fln_forward(Tape<T>* tape, const FLN<T>& layer, const Tensor<T>& x) {
    if (x.rank() != 4) throw ShapeError("fln: expects [batch, ch, F, T] input");
    const int B = x.dim(0), C = x.dim(1), F = x.dim(2), Tt = x.dim(3);
    if (layer.gamma.dim(0) != F || layer.beta.dim(0) != F)
        throw ShapeError("fln: input has F=" + std::to_string(F) + ", parameters sized " +
                         std::to_string(layer.gamma.dim(0)));
    const std::int64_t planes = static_cast<std::int64_t>(B) * C;
    const std::int64_t plane = static_cast<std::int64_t>(F) * Tt;

    auto xhat = std::make_shared<Vec<T>>(static_cast<std::size_t>(x.size()));
    auto inv_sigma = std::make_shared<Vec<T>>(static_cast<std::size_t>(planes * Tt));
    Vec<T> out(static_cast<std::size_t>(x.size()));
    std::vector<T> mu(static_cast<std::size_t>(Tt));
    const T* gamma = layer.gamma.data();
    const T* beta = layer.beta.data();
    const T inv_f = T(1) / static_cast<T>(F);
    for (std::int64_t p = 0; p < planes; ++p) {
        const T* xp = x.data() + p * plane;
        T* inv = inv_sigma->data() + p * Tt;
        for (int t = 0; t < Tt; ++t) mu[static_cast<std::size_t>(t)] = T(0);
        for (int f = 0; f < F; ++f)
            kernels::accumulate(mu.data(), xp + static_cast<std::int64_t>(f) * Tt, Tt);
        for (int t = 0; t < Tt; ++t) mu[static_cast<std::size_t>(t)] *= inv_f;
        for (int t = 0; t < Tt; ++t) inv[t] = T(0);
        for (int f = 0; f < F; ++f) {
            const T* xr = xp + static_cast<std::int64_t>(f) * Tt;
            for (int t = 0; t < Tt; ++t) {
                const T d = xr[t] - mu[static_cast<std::size_t>(t)];
                inv[t] += d * d;
            }
        }
        for (int t = 0; t < Tt; ++t) {
            const T var = inv[t] * inv_f + layer.epsilon;
            if (!(var > T(0))) throw DomainError("fln: non-positive variance");
            inv[t] = T(1) / std::sqrt(var);
        }
        T* hp = xhat->data() + p * plane;
        T* op = out.data() + p * plane;
        for (int f = 0; f < F; ++f) {
            const T* xr = xp + static_cast<std::int64_t>(f) * Tt;
            T* hr = hp + static_cast<std::int64_t>(f) * Tt;
            T* orow = op + static_cast<std::int64_t>(f) * Tt;
            const T gf = gamma[f], bf = beta[f];
            for (int t = 0; t < Tt; ++t) {
                const T h = (xr[t] - mu[static_cast<std::size_t>(t)]) * inv[t];
                hr[t] = h;
                orow[t] = gf * h + bf;
            }
        }
    }

    Tensor<T> gsav = layer.gamma;
    const int xn = x.node, gn = layer.gamma.node, bn = layer.beta.node;
    return ops::make_op_result<T>(
        tape, x.shape(), std::move(out), {xn, gn, bn},
        [xhat, inv_sigma, gsav, xn, gn, bn, planes, plane, F, Tt](const Vec<T>& g, Tape<T>& tp) {
            const T* gamma = gsav.data();
            const T inv_f = T(1) / static_cast<T>(F);
            if (gn >= 0 || bn >= 0) {
                Vec<T> dgamma(static_cast<std::size_t>(F), T(0));
                Vec<T> dbeta(static_cast<std::size_t>(F), T(0));
                for (std::int64_t p = 0; p < planes; ++p)
                    for (int f = 0; f < F; ++f) {
                        const T* gr = g.data() + p * plane + static_cast<std::int64_t>(f) * Tt;
                        const T* hr = xhat->data() + p * plane + static_cast<std::int64_t>(f) * Tt;
                        T sg = T(0), sb = T(0);
                        for (int t = 0; t < Tt; ++t) {
                            sg += gr[t] * hr[t];
                            sb += gr[t];
                        }
                        dgamma[static_cast<std::size_t>(f)] += sg;
                        dbeta[static_cast<std::size_t>(f)] += sb;
                    }
                if (gn >= 0) tp.add_grad(gn, std::move(dgamma));
                if (bn >= 0) tp.add_grad(bn, std::move(dbeta));
            }
            if (xn >= 0) {
                Vec<T> gx(static_cast<std::size_t>(planes * plane));
                std::vector<T> m1(static_cast<std::size_t>(Tt)), m2(static_cast<std::size_t>(Tt));
                for (std::int64_t p = 0; p < planes; ++p) {
                    const T* gp = g.data() + p * plane;
                    const T* hp = xhat->data() + p * plane;
                    const T* inv = inv_sigma->data() + p * Tt;
                    for (int t = 0; t < Tt; ++t) m1[static_cast<std::size_t>(t)] = T(0);
                    for (int t = 0; t < Tt; ++t) m2[static_cast<std::size_t>(t)] = T(0);
                    for (int f = 0; f < F; ++f) {
                        const T* gr = gp + static_cast<std::int64_t>(f) * Tt;
                        const T* hr = hp + static_cast<std::int64_t>(f) * Tt;
                        const T gf = gamma[f];
                        for (int t = 0; t < Tt; ++t) {
                            m1[static_cast<std::size_t>(t)] += gf * gr[t];
                            m2[static_cast<std::size_t>(t)] += gf * gr[t] * hr[t];
                        }
                    }
                    for (int t = 0; t < Tt; ++t) {
                        m1[static_cast<std::size_t>(t)] *= inv_f;
                        m2[static_cast<std::size_t>(t)] *= inv_f;
                    }
                    T* gxp = gx.data() + p * plane;
                    for (int f = 0; f < F; ++f) {
                        const T* gr = gp + static_cast<std::int64_t>(f) * Tt;
                        const T* hr = hp + static_cast<std::int64_t>(f) * Tt;
                        T* gxr = gxp + static_cast<std::int64_t>(f) * Tt;
                        const T gf = gamma[f];
                        for (int t = 0; t < Tt; ++t)
                            gxr[t] = (gf * gr[t] - m1[static_cast<std::size_t>(t)] -
                                      hr[t] * m2[static_cast<std::size_t>(t)]) *
                                     inv[t];
                    }
                }
                tp.add_grad(xn, std::move(gx));
            }
        });
}

// ---------------------------------------------------------------------------
// Frequency dynamic convolution: the effective kernel at frequency f is a
// convex combination of K basis kernels, weighted by a per-frequency softmax
// attention computed from time-averaged features.

template <typename T>
struct FDYConv {
    std::vector<Conv2D<T>> basis;  // K kernels with identical geometry
    Tensor<T> attn_weight;         // [K, in_ch, 1, 1]
    Tensor<T> attn_bias;           // [K]
    T temperature = T(31);
};

template <typename T>
Tensor<T> fdy_forward(Tape<T>* tape, const FDYConv<T>& layer, const Tensor<T>& x) {
    const int K = static_cast<int>(layer.basis.size());
    if (K < 1) throw ShapeError("fdy: needs at least one basis kernel");
    if (x.rank() != 4) throw ShapeError("fdy: expects rank-4 input");
    const int B = x.dim(0), F = x.dim(2);

    // Attention: time average -> pointwise transform over frequency -> softmax over K.
    auto t_avg = ops::mean(tape, x, {3}, true);  // [B,C,F,1]
    auto logits = conv2d(tape, t_avg, layer.attn_weight, layer.attn_bias, 1, 1, 0, 0);  // [B,K,F,1]
    auto pi = ops::softmax_axis(tape, logits, 1, layer.temperature);

    Tensor<T> out;
    for (int k = 0; k < K; ++k) {
        auto ck = conv2d_forward(tape, layer.basis[static_cast<std::size_t>(k)], x);
        if (ck.dim(2) != F)
            throw ShapeError("fdy: conv output F=" + std::to_string(ck.dim(2)) +
                             " must match attention grid F=" + std::to_string(F) +
                             " (use stride 1 and same padding)");
        auto pik = ops::slice(tape, pi, 1, k, 1);  // [B,1,F,1]
        auto term = ops::mul(tape, ck, pik);
        out = k == 0 ? term : ops::add(tape, out, term);
    }
    (void)B;
    return out;
}

// Attention weights for inspection (shape [B,K,F]).
template <typename T>
Tensor<T> fdy_attention(const FDYConv<T>& layer, const Tensor<T>& x) {
    auto t_avg = ops::mean<T>(nullptr, x, {3}, true);
    auto logits = conv2d<T>(nullptr, t_avg, layer.attn_weight, layer.attn_bias, 1, 1, 0, 0);
    auto pi = ops::softmax_axis<T>(nullptr, logits, 1, layer.temperature);
    return ops::reshape<T>(nullptr, pi, Shape{x.dim(0), static_cast<int>(layer.basis.size()), x.dim(2)});
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy, mean over the batch, stabilized by max subtraction.

template <typename T>
Tensor<T> softmax_cross_entropy(Tape<T>* tape, const Tensor<T>& logits,
                                const std::vector<int>& labels) {
    if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be [batch, K]");
    const int B = logits.dim(0), K = logits.dim(1);
    if (static_cast<int>(labels.size()) != B)
        throw ShapeError("softmax_cross_entropy: batch size mismatch");
    for (int b = 0; b < B; ++b)
        if (labels[static_cast<std::size_t>(b)] < 0 || labels[static_cast<std::size_t>(b)] >= K)
            throw LabelError("softmax_cross_entropy: label " +
                             std::to_string(labels[static_cast<std::size_t>(b)]) +
                             " out of range [0," + std::to_string(K) + ") at row " +
                             std::to_string(b));
    auto probs = std::make_shared<Vec<T>>(static_cast<std::size_t>(logits.size()));
    T total = T(0);
    for (int b = 0; b < B; ++b) {
        const T* row = logits.data() + static_cast<std::int64_t>(b) * K;
        T m = row[0];
        for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
        T z = T(0);
        for (int k = 0; k < K; ++k) {
            T e = std::exp(row[k] - m);
            (*probs)[static_cast<std::size_t>(b) * K + k] = e;
            z += e;
        }
        const T inv = T(1) / z;
        for (int k = 0; k < K; ++k) (*probs)[static_cast<std::size_t>(b) * K + k] *= inv;
        total += std::log(z) - (row[labels[static_cast<std::size_t>(b)]] - m);
    }
    Vec<T> loss{total / static_cast<T>(B)};
    auto labs = std::make_shared<std::vector<int>>(labels);
    const int ln = logits.node;
    return ops::make_op_result<T>(
        tape, Shape{1}, std::move(loss), {ln},
        [probs, labs, ln, B, K](const Vec<T>& g, Tape<T>& tp) {
            const T scale = g[0] / static_cast<T>(B);
            Vec<T> gl(probs->size());
            for (int b = 0; b < B; ++b)
                for (int k = 0; k < K; ++k) {
                    const auto idx = static_cast<std::size_t>(b) * K + k;
                    T p = (*probs)[idx];
                    gl[idx] = scale * (p - (k == (*labs)[static_cast<std::size_t>(b)] ? T(1) : T(0)));
                }
            tp.add_grad(ln, std::move(gl));
        });
}

// ---------------------------------------------------------------------------
// Adam.

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* value = nullptr;
};

template <typename T>
struct AdamState {
    T lr = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    std::int64_t t = 0;
    std::map<std::string, std::vector<T>> m, v;
};

// One bias-corrected Adam update; `grads` aligned with `params` by index.
template <typename T>
void adam_step(AdamState<T>& st, const std::vector<ParamRef<T>>& params,
               const std::vector<Tensor<T>>& grads) {
    if (params.size() != grads.size()) throw ShapeError("adam_step: params/grads length mismatch");
    ++st.t;
    const T bc1 = T(1) - std::pow(st.beta1, static_cast<T>(st.t));
    const T bc2 = T(1) - std::pow(st.beta2, static_cast<T>(st.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = *params[i].value;
        const Tensor<T>& g = grads[i];
        if (p.shape() != g.shape())
            throw ShapeError("adam_step: gradient shape mismatch for '" + params[i].name + "'");
        auto& m = st.m[params[i].name];
        auto& v = st.v[params[i].name];
        if (m.empty()) m.assign(static_cast<std::size_t>(p.size()), T(0));
        if (v.empty()) v.assign(static_cast<std::size_t>(p.size()), T(0));
        Vec<T> vals = p.values();
        for (std::int64_t e = 0; e < p.size(); ++e) {
            const auto ei = static_cast<std::size_t>(e);
            const T ge = g.data()[e];
            m[ei] = st.beta1 * m[ei] + (T(1) - st.beta1) * ge;
            v[ei] = st.beta2 * v[ei] + (T(1) - st.beta2) * ge * ge;
            const T mhat = m[ei] / bc1;
            const T vhat = v[ei] / bc2;
            vals[ei] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
        }
        p = Tensor<T>(p.shape(), std::move(vals));
    }
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "CTLW", version u16, then repeated records of
// (name_len u16, name bytes, dtype u8, rank u8, dims u32 each, raw LE values).

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

template <typename T>
constexpr std::uint8_t dtype_code() {
    if constexpr (std::is_same_v<T, float>) return 1;
    else return 2;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const std::vector<ParamRef<T>>& params) {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw IoError("cannot open checkpoint for writing: " + path.string());
    auto put = [&](const void* p, std::size_t n) {
        if (std::fwrite(p, 1, n, f) != n) {
            std::fclose(f);
            throw IoError("short write to " + path.string());
        }
    };
    put("CTLW", 4);
    const std::uint16_t version = 1;
    put(&version, 2);
    for (const auto& pr : params) {
        const std::uint16_t nlen = static_cast<std::uint16_t>(pr.name.size());
        put(&nlen, 2);
        put(pr.name.data(), nlen);
        const std::uint8_t dt = dtype_code<T>();
        put(&dt, 1);
        const std::uint8_t rank = static_cast<std::uint8_t>(pr.value->rank());
        put(&rank, 1);
        for (int d = 0; d < pr.value->rank(); ++d) {
            const std::uint32_t dim = static_cast<std::uint32_t>(pr.value->dim(d));
            put(&dim, 4);
        }
        put(pr.value->data(), sizeof(T) * static_cast<std::size_t>(pr.value->size()));
    }
    std::fclose(f);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> load_checkpoint(const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "rb");
    if (!f) throw IoError("cannot open checkpoint: " + path.string());
    auto get = [&](void* p, std::size_t n) -> bool { return std::fread(p, 1, n, f) == n; };
    char magic[4];
    std::uint16_t version = 0;
    if (!get(magic, 4) || std::memcmp(magic, "CTLW", 4) != 0 || !get(&version, 2) || version != 1) {
        std::fclose(f);
        throw FormatError("not a CTLW v1 checkpoint: " + path.string());
    }
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (;;) {
        std::uint16_t nlen = 0;
        if (std::fread(&nlen, 1, 2, f) != 2) break;  // clean EOF
        std::string name(nlen, '\0');
        std::uint8_t dt = 0, rank = 0;
        if (!get(name.data(), nlen) || !get(&dt, 1) || !get(&rank, 1)) {
            std::fclose(f);
            throw FormatError("truncated checkpoint: " + path.string());
        }
        if (dt != dtype_code<T>()) {
            std::fclose(f);
            throw FormatError("checkpoint dtype mismatch for '" + name + "'");
        }
        Shape shape(rank);
        for (int d = 0; d < rank; ++d) {
            std::uint32_t dim = 0;
            if (!get(&dim, 4)) {
                std::fclose(f);
                throw FormatError("truncated checkpoint: " + path.string());
            }
            shape[static_cast<std::size_t>(d)] = static_cast<int>(dim);
        }
        Vec<T> vals(static_cast<std::size_t>(shape_size(shape)));
        if (!get(vals.data(), sizeof(T) * vals.size())) {
            std::fclose(f);
            throw FormatError("truncated checkpoint: " + path.string());
        }
        out.emplace_back(std::move(name), Tensor<T>(std::move(shape), std::move(vals)));
    }
    std::fclose(f);
    return out;
}

template <typename T>
void apply_checkpoint(const std::vector<ParamRef<T>>& params,
                      const std::vector<std::pair<std::string, Tensor<T>>>& loaded) {
    std::map<std::string, const Tensor<T>*> index;
    for (const auto& [name, t] : loaded) index[name] = &t;
    for (const auto& pr : params) {
        auto it = index.find(pr.name);
        if (it == index.end()) throw FormatError("checkpoint missing parameter '" + pr.name + "'");
        if (it->second->shape() != pr.value->shape())
            throw ShapeError("checkpoint shape mismatch for '" + pr.name + "'");
        *pr.value = *it->second;
    }
}

}  // namespace ct::nn
