#include "reg/nn_ops.hpp"

#include <cblas.h>

#include <cmath>
#include <string>
#include <vector>

namespace reg {

namespace {

int64_t conv_out_extent(const char* op, int64_t in, int k, int stride, int padding) {
    const int64_t out = (in + 2 * padding - k) / stride + 1;
    if (in + 2 * padding - k < 0 || out < 1) {
        throw ShapeError(std::string(op) + ": non-positive output extent for input extent " +
                         std::to_string(in) + " with k=" + std::to_string(k) +
                         " stride=" + std::to_string(stride) + " padding=" + std::to_string(padding));
    }
    return out;
}

void validate_conv_args(const char* op, int k, int stride, int padding) {
    if (k < 1 || k % 2 == 0) throw ShapeError(std::string(op) + ": kernel size must be odd and >= 1");
    if (stride < 1) throw ShapeError(std::string(op) + ": stride must be >= 1");
    if (padding < 0) throw ShapeError(std::string(op) + ": padding must be >= 0");
}

// Gathers the k^3 taps of every grid cell from `image` [C, iD, iH, iW] into
// cols[(C*k^3) x (gD*gH*gW)]. The image index along an axis is
// g*stride - pad + tap; out-of-bounds taps read as zero.
void im2col_3d(const float* image, int64_t C, int64_t iD, int64_t iH, int64_t iW, int k,
               int stride, int pad, int64_t gD, int64_t gH, int64_t gW, float* cols) {
    const int64_t cells = gD * gH * gW;
    int64_t row = 0;
    for (int64_t c = 0; c < C; ++c) {
        const float* chan = image + c * iD * iH * iW;
        for (int kz = 0; kz < k; ++kz) {
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx, ++row) {
                    float* dst = cols + row * cells;
                    for (int64_t gz = 0; gz < gD; ++gz) {
                        const int64_t iz = gz * stride - pad + kz;
                        if (iz < 0 || iz >= iD) {
                            std::fill_n(dst + gz * gH * gW, gH * gW, 0.0f);
                            continue;
                        }
                        for (int64_t gy = 0; gy < gH; ++gy) {
                            const int64_t iy = gy * stride - pad + ky;
                            float* line = dst + (gz * gH + gy) * gW;
                            if (iy < 0 || iy >= iH) {
                                std::fill_n(line, gW, 0.0f);
                                continue;
                            }
                            const float* src = chan + (iz * iH + iy) * iW;
                            for (int64_t gx = 0; gx < gW; ++gx) {
                                const int64_t ix = gx * stride - pad + kx;
                                line[gx] = (ix >= 0 && ix < iW) ? src[ix] : 0.0f;
                            }
                        }
                    }
                }
            }
        }
    }
}

// Transpose of im2col_3d: scatter-adds cols back into `image`.
void col2im_add_3d(const float* cols, int64_t C, int64_t iD, int64_t iH, int64_t iW, int k,
                   int stride, int pad, int64_t gD, int64_t gH, int64_t gW, float* image) {
    const int64_t cells = gD * gH * gW;
    int64_t row = 0;
    for (int64_t c = 0; c < C; ++c) {
        float* chan = image + c * iD * iH * iW;
        for (int kz = 0; kz < k; ++kz) {
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx, ++row) {
                    const float* src = cols + row * cells;
                    for (int64_t gz = 0; gz < gD; ++gz) {
                        const int64_t iz = gz * stride - pad + kz;
                        if (iz < 0 || iz >= iD) continue;
                        for (int64_t gy = 0; gy < gH; ++gy) {
                            const int64_t iy = gy * stride - pad + ky;
                            if (iy < 0 || iy >= iH) continue;
                            float* line = chan + (iz * iH + iy) * iW;
                            const float* s = src + (gz * gH + gy) * gW;
                            for (int64_t gx = 0; gx < gW; ++gx) {
                                const int64_t ix = gx * stride - pad + kx;
                                if (ix >= 0 && ix < iW) line[ix] += s[gx];
                            }
                        }
                    }
                }
            }
        }
    }
}

void sgemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int64_t m, int64_t n, int64_t kk, float alpha,
           const float* a, int64_t lda, const float* b, int64_t ldb, float beta, float* c,
           int64_t ldc) {
    cblas_sgemm(CblasRowMajor, ta, tb, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(kk), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
                beta, c, static_cast<int>(ldc));
}

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding) {
    if (input.ndim() != 5) throw ShapeError("conv3d: input must be [B,Cin,D,H,W]");
    if (weight.ndim() != 5 || weight.dim(2) != weight.dim(3) || weight.dim(2) != weight.dim(4)) {
        throw ShapeError("conv3d: weight must be [Cout,Cin,k,k,k]");
    }
    const int64_t B = input.dim(0), Cin = input.dim(1);
    const int64_t D = input.dim(2), H = input.dim(3), W = input.dim(4);
    const int64_t Cout = weight.dim(0);
    const int k = static_cast<int>(weight.dim(2));
    validate_conv_args("conv3d", k, stride, padding);
    if (weight.dim(1) != Cin) {
        throw ShapeError("conv3d: input has " + std::to_string(Cin) + " channels but weight expects " +
                         std::to_string(weight.dim(1)));
    }
    if (bias.numel() != Cout) throw ShapeError("conv3d: bias must have Cout elements");

    const int64_t Do = conv_out_extent("conv3d", D, k, stride, padding);
    const int64_t Ho = conv_out_extent("conv3d", H, k, stride, padding);
    const int64_t Wo = conv_out_extent("conv3d", W, k, stride, padding);
    const int64_t K = Cin * k * k * k;
    const int64_t N = Do * Ho * Wo;

    Shape out_shape{B, Cout, Do, Ho, Wo};
    std::vector<float> out(shape_numel(out_shape));
    std::vector<float> cols(K * N);
    const float* in = input.values().data();
    const float* w = weight.values().data();
    const float* bs = bias.values().data();
    for (int64_t n = 0; n < B; ++n) {
        im2col_3d(in + n * Cin * D * H * W, Cin, D, H, W, k, stride, padding, Do, Ho, Wo,
                  cols.data());
        float* dst = out.data() + n * Cout * N;
        sgemm(CblasNoTrans, CblasNoTrans, Cout, N, K, 1.0f, w, K, cols.data(), N, 0.0f, dst, N);
        for (int64_t c = 0; c < Cout; ++c) {
            const float bv = bs[c];
            float* row = dst + c * N;
            for (int64_t i = 0; i < N; ++i) row[i] += bv;
        }
    }

    auto in_node = input.node();
    auto w_node = weight.node();
    auto b_node = bias.node();
    return Tensor(detail::make_op_node(
        "conv3d", std::move(out_shape), std::move(out), {in_node, w_node, b_node},
        [=](detail::Node& self) {
            const int64_t spatial_in = D * H * W;
            std::vector<float> cols_b(K * N);
            std::vector<float> dcols(K * N);
            for (int64_t n = 0; n < B; ++n) {
                const float* dout = self.grad.data() + n * Cout * N;
                if (b_node->requires_grad) {
                    float* db = b_node->grad_data();
                    for (int64_t c = 0; c < Cout; ++c) {
                        double s = 0.0;
                        for (int64_t i = 0; i < N; ++i) s += dout[c * N + i];
                        db[c] += static_cast<float>(s);
                    }
                }
                if (w_node->requires_grad) {
                    im2col_3d(in_node->value.data() + n * Cin * spatial_in, Cin, D, H, W, k,
                              stride, padding, Do, Ho, Wo, cols_b.data());
                    sgemm(CblasNoTrans, CblasTrans, Cout, K, N, 1.0f, dout, N, cols_b.data(), N,
                          1.0f, w_node->grad_data(), K);
                }
                if (in_node->requires_grad) {
                    sgemm(CblasTrans, CblasNoTrans, K, N, Cout, 1.0f, w_node->value.data(), K,
                          dout, N, 0.0f, dcols.data(), N);
                    col2im_add_3d(dcols.data(), Cin, D, H, W, k, stride, padding, Do, Ho, Wo,
                                  in_node->grad_data() + n * Cin * spatial_in);
                }
            }
        }));
}

Tensor transposed_conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
                         int padding, int output_padding) {
    if (input.ndim() != 5) throw ShapeError("transposed_conv3d: input must be [B,Cin,D,H,W]");
    if (weight.ndim() != 5 || weight.dim(2) != weight.dim(3) || weight.dim(2) != weight.dim(4)) {
        throw ShapeError("transposed_conv3d: weight must be [Cin,Cout,k,k,k]");
    }
    const int k = static_cast<int>(weight.dim(2));
    validate_conv_args("transposed_conv3d", k, stride, padding);
    if (output_padding < 0 || output_padding >= stride) {
        throw ShapeError("transposed_conv3d: output_padding must be in [0, stride)");
    }
    const int64_t B = input.dim(0), Cin = input.dim(1);
    const int64_t D = input.dim(2), H = input.dim(3), W = input.dim(4);
    if (weight.dim(0) != Cin) {
        throw ShapeError("transposed_conv3d: input has " + std::to_string(Cin) +
                         " channels but weight expects " + std::to_string(weight.dim(0)));
    }
    const int64_t Cout = weight.dim(1);
    if (bias.numel() != Cout) throw ShapeError("transposed_conv3d: bias must have Cout elements");

    auto out_extent = [&](int64_t in) {
        const int64_t out = (in - 1) * stride - 2 * padding + k + output_padding;
        if (out < 1) {
            throw ShapeError("transposed_conv3d: non-positive output extent for input extent " +
                             std::to_string(in));
        }
        return out;
    };
    const int64_t Do = out_extent(D), Ho = out_extent(H), Wo = out_extent(W);
    const int64_t Kc = Cout * k * k * k;
    const int64_t Nin = D * H * W;
    const int64_t Nout = Do * Ho * Wo;

    Shape out_shape{B, Cout, Do, Ho, Wo};
    std::vector<float> out(shape_numel(out_shape), 0.0f);
    std::vector<float> cols(Kc * Nin);
    const float* in = input.values().data();
    const float* w = weight.values().data();  // [Cin, Cout*k^3]
    const float* bs = bias.values().data();
    for (int64_t n = 0; n < B; ++n) {
        // cols[(Cout*k^3) x Nin] = W^T * x, then scatter taps into the output grid
        sgemm(CblasTrans, CblasNoTrans, Kc, Nin, Cin, 1.0f, w, Kc, in + n * Cin * Nin, Nin, 0.0f,
              cols.data(), Nin);
        float* dst = out.data() + n * Cout * Nout;
        col2im_add_3d(cols.data(), Cout, Do, Ho, Wo, k, stride, padding, D, H, W, dst);
        for (int64_t c = 0; c < Cout; ++c) {
            const float bv = bs[c];
            float* row = dst + c * Nout;
            for (int64_t i = 0; i < Nout; ++i) row[i] += bv;
        }
    }

    auto in_node = input.node();
    auto w_node = weight.node();
    auto b_node = bias.node();
    return Tensor(detail::make_op_node(
        "transposed_conv3d", std::move(out_shape), std::move(out), {in_node, w_node, b_node},
        [=](detail::Node& self) {
            std::vector<float> gcols(Kc * Nin);
            for (int64_t n = 0; n < B; ++n) {
                const float* dout = self.grad.data() + n * Cout * Nout;
                if (b_node->requires_grad) {
                    float* db = b_node->grad_data();
                    for (int64_t c = 0; c < Cout; ++c) {
                        double s = 0.0;
                        for (int64_t i = 0; i < Nout; ++i) s += dout[c * Nout + i];
                        db[c] += static_cast<float>(s);
                    }
                }
                // the forward scatter pattern, read back as a gather
                im2col_3d(dout, Cout, Do, Ho, Wo, k, stride, padding, D, H, W, gcols.data());
                if (in_node->requires_grad) {
                    sgemm(CblasNoTrans, CblasNoTrans, Cin, Nin, Kc, 1.0f, w_node->value.data(), Kc,
                          gcols.data(), Nin, 1.0f, in_node->grad_data() + n * Cin * Nin, Nin);
                }
                if (w_node->requires_grad) {
                    sgemm(CblasNoTrans, CblasTrans, Cin, Kc, Nin, 1.0f,
                          in_node->value.data() + n * Cin * Nin, Nin, gcols.data(), Nin, 1.0f,
                          w_node->grad_data(), Kc);
                }
            }
        }));
}

Tensor avgpool3d(const Tensor& input, int kernel, int stride, int padding) {
    validate_conv_args("avgpool3d", kernel, stride, padding);
    if (input.ndim() != 5) throw ShapeError("avgpool3d: input must be [B,C,D,H,W]");
    const int64_t B = input.dim(0), C = input.dim(1);
    const int64_t D = input.dim(2), H = input.dim(3), W = input.dim(4);
    const int64_t Do = conv_out_extent("avgpool3d", D, kernel, stride, padding);
    const int64_t Ho = conv_out_extent("avgpool3d", H, kernel, stride, padding);
    const int64_t Wo = conv_out_extent("avgpool3d", W, kernel, stride, padding);

    Shape out_shape{B, C, Do, Ho, Wo};
    std::vector<float> out(shape_numel(out_shape));
    const float* in = input.values().data();
    for (int64_t nc = 0; nc < B * C; ++nc) {
        const float* src = in + nc * D * H * W;
        float* dst = out.data() + nc * Do * Ho * Wo;
        for (int64_t oz = 0; oz < Do; ++oz) {
            const int64_t z0 = std::max<int64_t>(0, oz * stride - padding);
            const int64_t z1 = std::min<int64_t>(D, oz * stride - padding + kernel);
            for (int64_t oy = 0; oy < Ho; ++oy) {
                const int64_t y0 = std::max<int64_t>(0, oy * stride - padding);
                const int64_t y1 = std::min<int64_t>(H, oy * stride - padding + kernel);
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    const int64_t x0 = std::max<int64_t>(0, ox * stride - padding);
                    const int64_t x1 = std::min<int64_t>(W, ox * stride - padding + kernel);
                    double s = 0.0;
                    for (int64_t z = z0; z < z1; ++z)
                        for (int64_t y = y0; y < y1; ++y)
                            for (int64_t x = x0; x < x1; ++x) s += src[(z * H + y) * W + x];
                    const int64_t count = (z1 - z0) * (y1 - y0) * (x1 - x0);
                    dst[(oz * Ho + oy) * Wo + ox] = static_cast<float>(s / count);
                }
            }
        }
    }

    auto in_node = input.node();
    return Tensor(detail::make_op_node(
        "avgpool3d", std::move(out_shape), std::move(out), {in_node},
        [=](detail::Node& self) {
            if (!in_node->requires_grad) return;
            for (int64_t nc = 0; nc < B * C; ++nc) {
                float* gin = in_node->grad_data() + nc * D * H * W;
                const float* gout = self.grad.data() + nc * Do * Ho * Wo;
                for (int64_t oz = 0; oz < Do; ++oz) {
                    const int64_t z0 = std::max<int64_t>(0, oz * stride - padding);
                    const int64_t z1 = std::min<int64_t>(D, oz * stride - padding + kernel);
                    for (int64_t oy = 0; oy < Ho; ++oy) {
                        const int64_t y0 = std::max<int64_t>(0, oy * stride - padding);
                        const int64_t y1 = std::min<int64_t>(H, oy * stride - padding + kernel);
                        for (int64_t ox = 0; ox < Wo; ++ox) {
                            const int64_t x0 = std::max<int64_t>(0, ox * stride - padding);
                            const int64_t x1 = std::min<int64_t>(W, ox * stride - padding + kernel);
                            const int64_t count = (z1 - z0) * (y1 - y0) * (x1 - x0);
                            const float g = gout[(oz * Ho + oy) * Wo + ox] / count;
                            for (int64_t z = z0; z < z1; ++z)
                                for (int64_t y = y0; y < y1; ++y)
                                    for (int64_t x = x0; x < x1; ++x)
                                        gin[(z * H + y) * W + x] += g;
                        }
                    }
                }
            }
        }));
}

Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, bool training, float eps, float momentum) {
    if (input.ndim() != 5) throw ShapeError("batchnorm: input must be [B,C,D,H,W]");
    const int64_t B = input.dim(0), C = input.dim(1);
    const int64_t spatial = input.dim(2) * input.dim(3) * input.dim(4);
    if (gamma.numel() != C || beta.numel() != C) {
        throw ShapeError("batchnorm: gamma/beta must have C=" + std::to_string(C) + " elements");
    }
    if (static_cast<int64_t>(state.running_mean.size()) != C) {
        throw ShapeError("batchnorm: state sized for " + std::to_string(state.running_mean.size()) +
                         " channels, input has " + std::to_string(C));
    }
    const int64_t m = B * spatial;
    if (training && m < 2) throw ShapeError("batchnorm: train mode needs B*D*H*W >= 2");

    const float* in = input.values().data();
    std::vector<float> mean(C), invstd(C);
    if (training) {
        for (int64_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (int64_t n = 0; n < B; ++n) {
                const float* src = in + (n * C + c) * spatial;
                for (int64_t i = 0; i < spatial; ++i) s += src[i];
            }
            const double mu = s / m;
            double var = 0.0;
            for (int64_t n = 0; n < B; ++n) {
                const float* src = in + (n * C + c) * spatial;
                for (int64_t i = 0; i < spatial; ++i) {
                    const double d = src[i] - mu;
                    var += d * d;
                }
            }
            var /= m;
            mean[c] = static_cast<float>(mu);
            invstd[c] = static_cast<float>(1.0 / std::sqrt(var + eps));
            state.running_mean[c] =
                momentum * state.running_mean[c] + (1.0f - momentum) * static_cast<float>(mu);
            state.running_var[c] =
                momentum * state.running_var[c] + (1.0f - momentum) * static_cast<float>(var);
        }
    } else {
        for (int64_t c = 0; c < C; ++c) {
            mean[c] = state.running_mean[c];
            invstd[c] = 1.0f / std::sqrt(state.running_var[c] + eps);
        }
    }

    const float* g = gamma.values().data();
    const float* b = beta.values().data();
    std::vector<float> out(input.numel());
    for (int64_t n = 0; n < B; ++n) {
        for (int64_t c = 0; c < C; ++c) {
            const float* src = in + (n * C + c) * spatial;
            float* dst = out.data() + (n * C + c) * spatial;
            const float mu = mean[c], is = invstd[c], gc = g[c], bc = b[c];
            for (int64_t i = 0; i < spatial; ++i) dst[i] = gc * (src[i] - mu) * is + bc;
        }
    }

    auto in_node = input.node();
    auto g_node = gamma.node();
    auto b_node = beta.node();
    return Tensor(detail::make_op_node(
        "batchnorm", input.shape(), std::move(out), {in_node, g_node, b_node},
        [=, mean = std::move(mean), invstd = std::move(invstd)](detail::Node& self) {
            const float* x = in_node->value.data();
            for (int64_t c = 0; c < C; ++c) {
                const float mu = mean[c], is = invstd[c];
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int64_t n = 0; n < B; ++n) {
                    const float* dy = self.grad.data() + (n * C + c) * spatial;
                    const float* xc = x + (n * C + c) * spatial;
                    for (int64_t i = 0; i < spatial; ++i) {
                        sum_dy += dy[i];
                        sum_dy_xhat += static_cast<double>(dy[i]) * ((xc[i] - mu) * is);
                    }
                }
                if (g_node->requires_grad) {
                    g_node->grad_data()[c] += static_cast<float>(sum_dy_xhat);
                }
                if (b_node->requires_grad) {
                    b_node->grad_data()[c] += static_cast<float>(sum_dy);
                }
                if (in_node->requires_grad) {
                    const float gc = g_node->value[c];
                    float* gx = in_node->grad_data();
                    if (training) {
                        const float mean_dy = static_cast<float>(sum_dy / m);
                        const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / m);
                        for (int64_t n = 0; n < B; ++n) {
                            const float* dy = self.grad.data() + (n * C + c) * spatial;
                            const float* xc = x + (n * C + c) * spatial;
                            float* gd = gx + (n * C + c) * spatial;
                            for (int64_t i = 0; i < spatial; ++i) {
                                const float xhat = (xc[i] - mu) * is;
                                gd[i] += gc * is * (dy[i] - mean_dy - xhat * mean_dy_xhat);
                            }
                        }
                    } else {
                        for (int64_t n = 0; n < B; ++n) {
                            const float* dy = self.grad.data() + (n * C + c) * spatial;
                            float* gd = gx + (n * C + c) * spatial;
                            for (int64_t i = 0; i < spatial; ++i) gd[i] += gc * is * dy[i];
                        }
                    }
                }
            }
        }));
}

}  // namespace reg
