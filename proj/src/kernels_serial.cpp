#include <cmath>
#include <stdexcept>

#include "fcbnet/kernels.hpp"

// Reference kernels: straightforward loops, no parallelism, no blocking.
// The test suite checks the OpenMP kernels against these.

namespace fcbnet::serial {

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad) {
    const int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != Ci) throw std::invalid_argument("conv2d: channel mismatch");
    const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    Tensor y = Tensor::zeros({B, Co, Ho, Wo});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t co = 0; co < Co; ++co)
            for (int64_t oh = 0; oh < Ho; ++oh)
                for (int64_t ow = 0; ow < Wo; ++ow) {
                    float acc = bias ? (*bias)[co] : 0.0f;
                    for (int64_t ci = 0; ci < Ci; ++ci)
                        for (int64_t r = 0; r < kh; ++r)
                            for (int64_t c = 0; c < kw; ++c) {
                                const int64_t ih = oh * stride - pad + r;
                                const int64_t iw = ow * stride - pad + c;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += x.at(b, ci, ih, iw) * w.at(co, ci, r, c);
                            }
                    y.at(b, co, oh, ow) = acc;
                }
    return y;
}

Tensor pointwise_conv(const Tensor& x, const Tensor& w, const Tensor* bias) {
    const int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Co = w.dim(0);
    if (w.dim(1) != Ci) throw std::invalid_argument("pointwise_conv: channel mismatch");
    Tensor y = Tensor::zeros({B, Co, H, W});
    const int64_t hw = H * W;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t co = 0; co < Co; ++co) {
            float* yp = y.data() + (b * Co + co) * hw;
            if (bias)
                for (int64_t i = 0; i < hw; ++i) yp[i] = (*bias)[co];
            for (int64_t ci = 0; ci < Ci; ++ci) {
                const float wv = w[co * Ci + ci];
                const float* xp = x.data() + (b * Ci + ci) * hw;
                for (int64_t i = 0; i < hw; ++i) yp[i] += wv * xp[i];
            }
        }
    return y;
}

Tensor pointwise_conv_backward(const Tensor& gy, const Tensor& x, const Tensor& w, Tensor& gw,
                               Tensor* gbias, bool need_gx) {
    const int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Co = w.dim(0);
    const int64_t hw = H * W;
    Tensor gx = need_gx ? Tensor::zeros(x.shape()) : Tensor();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t co = 0; co < Co; ++co) {
            const float* gp = gy.data() + (b * Co + co) * hw;
            if (gbias) {
                float acc = 0.0f;
                for (int64_t i = 0; i < hw; ++i) acc += gp[i];
                (*gbias)[co] += acc;
            }
            for (int64_t ci = 0; ci < Ci; ++ci) {
                const float* xp = x.data() + (b * Ci + ci) * hw;
                float acc = 0.0f;
                for (int64_t i = 0; i < hw; ++i) acc += gp[i] * xp[i];
                gw[co * Ci + ci] += acc;
                if (need_gx) {
                    float* gxp = gx.data() + (b * Ci + ci) * hw;
                    const float wv = w[co * Ci + ci];
                    for (int64_t i = 0; i < hw; ++i) gxp[i] += wv * gp[i];
                }
            }
        }
    return gx;
}

Tensor conv3x3_same(const Tensor& x, const Tensor& w) {
    return conv2d(x, w, nullptr, 1, 1);
}

Tensor conv3x3_same_backward(const Tensor& gy, const Tensor& x, const Tensor& w, Tensor& gw,
                             bool need_gx) {
    const int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Co = w.dim(0);
    // definition form: each gradient element is its own sum over the outputs
    // (or inputs) that touch it
    for (int64_t co = 0; co < Co; ++co)
        for (int64_t b = 0; b < B; ++b)
            for (int64_t ci = 0; ci < Ci; ++ci)
                for (int64_t r = 0; r < 3; ++r)
                    for (int64_t c = 0; c < 3; ++c) {
                        float acc = 0.0f;
                        for (int64_t oh = 0; oh < H; ++oh)
                            for (int64_t ow = 0; ow < W; ++ow) {
                                const int64_t ih = oh - 1 + r, iw = ow - 1 + c;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += gy.at(b, co, oh, ow) * x.at(b, ci, ih, iw);
                            }
                        gw.at(co, ci, r, c) += acc;
                    }
    Tensor gx;
    if (need_gx) {
        gx = Tensor::zeros(x.shape());
        for (int64_t b = 0; b < B; ++b)
            for (int64_t ci = 0; ci < Ci; ++ci)
                for (int64_t co = 0; co < Co; ++co)
                    for (int64_t ih = 0; ih < H; ++ih)
                        for (int64_t r = 0; r < 3; ++r)
                            for (int64_t c = 0; c < 3; ++c)
                                for (int64_t iw = 0; iw < W; ++iw) {
                                    const int64_t oh = ih + 1 - r, ow = iw + 1 - c;
                                    if (oh < 0 || oh >= H || ow < 0 || ow >= W) continue;
                                    gx.at(b, ci, ih, iw) +=
                                        w.at(co, ci, r, c) * gy.at(b, co, oh, ow);
                                }
    }
    return gx;
}

Tensor depthwise_conv_same(const Tensor& x, const Tensor& w, const Tensor* bias) {
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t k = w.dim(2), p = k / 2;
    if (w.dim(0) != C) throw std::invalid_argument("depthwise_conv_same: channel mismatch");
    Tensor y = Tensor::zeros({B, C, H, W});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t oh = 0; oh < H; ++oh)
                for (int64_t ow = 0; ow < W; ++ow) {
                    float acc = bias ? (*bias)[c] : 0.0f;
                    for (int64_t r = 0; r < k; ++r)
                        for (int64_t s = 0; s < k; ++s) {
                            const int64_t ih = oh - p + r, iw = ow - p + s;
                            if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                            acc += x.at(b, c, ih, iw) * w.at(c, 0, r, s);
                        }
                    y.at(b, c, oh, ow) = acc;
                }
    return y;
}

Tensor depthwise_conv_same_backward(const Tensor& gy, const Tensor& x, const Tensor& w, Tensor& gw,
                                    bool need_gx) {
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t k = w.dim(2), p = k / 2;
    for (int64_t c = 0; c < C; ++c)
        for (int64_t b = 0; b < B; ++b)
            for (int64_t r = 0; r < k; ++r)
                for (int64_t s = 0; s < k; ++s) {
                    float acc = 0.0f;
                    for (int64_t oh = 0; oh < H; ++oh)
                        for (int64_t ow = 0; ow < W; ++ow) {
                            const int64_t ih = oh - p + r, iw = ow - p + s;
                            if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                            acc += gy.at(b, c, oh, ow) * x.at(b, c, ih, iw);
                        }
                    gw.at(c, 0, r, s) += acc;
                }
    Tensor gx;
    if (need_gx) {
        gx = Tensor::zeros(x.shape());
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t ih = 0; ih < H; ++ih)
                    for (int64_t r = 0; r < k; ++r)
                        for (int64_t s = 0; s < k; ++s)
                            for (int64_t iw = 0; iw < W; ++iw) {
                                const int64_t oh = ih + p - r, ow = iw + p - s;
                                if (oh < 0 || oh >= H || ow < 0 || ow >= W) continue;
                                gx.at(b, c, ih, iw) += w.at(c, 0, r, s) * gy.at(b, c, oh, ow);
                            }
    }
    return gx;
}

Tensor bilinear_resize(const Tensor& x, int64_t out_h, int64_t out_w) {
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (out_h == H && out_w == W) return x;
    Tensor y = Tensor::zeros({B, C, out_h, out_w});
    const double sh = double(H) / double(out_h), sw = double(W) / double(out_w);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t oh = 0; oh < out_h; ++oh) {
                double fy = (oh + 0.5) * sh - 0.5;
                if (fy < 0) fy = 0;
                int64_t y0 = int64_t(fy);
                if (y0 > H - 1) y0 = H - 1;
                const int64_t y1 = (y0 + 1 < H) ? y0 + 1 : H - 1;
                const float wy = float(fy - double(y0));
                for (int64_t ow = 0; ow < out_w; ++ow) {
                    double fx = (ow + 0.5) * sw - 0.5;
                    if (fx < 0) fx = 0;
                    int64_t x0 = int64_t(fx);
                    if (x0 > W - 1) x0 = W - 1;
                    const int64_t x1 = (x0 + 1 < W) ? x0 + 1 : W - 1;
                    const float wx = float(fx - double(x0));
                    const float v00 = x.at(b, c, y0, x0), v01 = x.at(b, c, y0, x1);
                    const float v10 = x.at(b, c, y1, x0), v11 = x.at(b, c, y1, x1);
                    const float top = v00 + wx * (v01 - v00);
                    const float bot = v10 + wx * (v11 - v10);
                    y.at(b, c, oh, ow) = top + wy * (bot - top);
                }
            }
    return y;
}

Tensor bilinear_resize_backward(const Tensor& gy, int64_t in_h, int64_t in_w) {
    const int64_t B = gy.dim(0), C = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
    Tensor gx = Tensor::zeros({B, C, in_h, in_w});
    if (Ho == in_h && Wo == in_w) {
        gx = gy;
        return gx;
    }
    const double sh = double(in_h) / double(Ho), sw = double(in_w) / double(Wo);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t oh = 0; oh < Ho; ++oh) {
                double fy = (oh + 0.5) * sh - 0.5;
                if (fy < 0) fy = 0;
                int64_t y0 = int64_t(fy);
                if (y0 > in_h - 1) y0 = in_h - 1;
                const int64_t y1 = (y0 + 1 < in_h) ? y0 + 1 : in_h - 1;
                const float wy = float(fy - double(y0));
                for (int64_t ow = 0; ow < Wo; ++ow) {
                    double fx = (ow + 0.5) * sw - 0.5;
                    if (fx < 0) fx = 0;
                    int64_t x0 = int64_t(fx);
                    if (x0 > in_w - 1) x0 = in_w - 1;
                    const int64_t x1 = (x0 + 1 < in_w) ? x0 + 1 : in_w - 1;
                    const float wx = float(fx - double(x0));
                    const float g = gy.at(b, c, oh, ow);
                    gx.at(b, c, y0, x0) += g * (1 - wy) * (1 - wx);
                    gx.at(b, c, y0, x1) += g * (1 - wy) * wx;
                    gx.at(b, c, y1, x0) += g * wy * (1 - wx);
                    gx.at(b, c, y1, x1) += g * wy * wx;
                }
            }
    return gx;
}

Tensor gelu(const Tensor& x) {
    Tensor y(x.shape());
    const float* xp = x.data();
    float* yp = y.data();
    for (int64_t i = 0; i < x.numel(); ++i) {
        const float v = xp[i];
        yp[i] = 0.5f * v * (1.0f + std::erf(v * 0.70710678118654752f));
    }
    return y;
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, float eps,
                  NormStats* save) {
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (C % groups != 0) throw std::invalid_argument("group_norm: groups must divide channels");
    const int64_t cg = C / groups, n = cg * H * W;
    Tensor y(x.shape());
    if (save) {
        save->mean = Tensor::zeros({B, int64_t(groups)});
        save->invstd = Tensor::zeros({B, int64_t(groups)});
    }
    for (int64_t b = 0; b < B; ++b)
        for (int64_t g = 0; g < groups; ++g) {
            const float* xp = x.data() + (b * C + g * cg) * H * W;
            double sum = 0.0;
            for (int64_t i = 0; i < n; ++i) sum += xp[i];
            const double mean = sum / double(n);
            double ss = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                const double d = xp[i] - mean;
                ss += d * d;
            }
            const float invstd = float(1.0 / std::sqrt(ss / double(n) + eps));
            if (save) {
                save->mean[b * groups + g] = float(mean);
                save->invstd[b * groups + g] = invstd;
            }
            for (int64_t c = 0; c < cg; ++c) {
                const float ga = gamma[g * cg + c], be = beta[g * cg + c];
                const float* xc = xp + c * H * W;
                float* yc = y.data() + (b * C + g * cg + c) * H * W;
                for (int64_t i = 0; i < H * W; ++i)
                    yc[i] = (xc[i] - float(mean)) * invstd * ga + be;
            }
        }
    return y;
}

Tensor layer_norm_chan(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor y(x.shape());
    for (int64_t b = 0; b < B; ++b)
        for (int64_t h = 0; h < H; ++h)
            for (int64_t w = 0; w < W; ++w) {
                double sum = 0.0;
                for (int64_t c = 0; c < C; ++c) sum += x.at(b, c, h, w);
                const double mean = sum / double(C);
                double ss = 0.0;
                for (int64_t c = 0; c < C; ++c) {
                    const double d = x.at(b, c, h, w) - mean;
                    ss += d * d;
                }
                const float invstd = float(1.0 / std::sqrt(ss / double(C) + eps));
                for (int64_t c = 0; c < C; ++c)
                    y.at(b, c, h, w) =
                        (x.at(b, c, h, w) - float(mean)) * invstd * gamma[c] + beta[c];
            }
    return y;
}

}  // namespace fcbnet::serial
