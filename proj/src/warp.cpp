#include "reg/warp.hpp"

#include <algorithm>
#include <cmath>

namespace reg {

namespace {

inline int64_t clamp_index(int64_t i, int64_t extent) {
    return std::clamp<int64_t>(i, 0, extent - 1);
}

void require_matching_grid(const char* op, const Dims& vol, const Dims& field) {
    if (vol != field) {
        throw ShapeError(std::string(op) + ": volume dims " + dims_str(vol) +
                         " do not match field dims " + dims_str(field));
    }
}

// Trilinear gather for one scalar channel at source point (sz,sy,sx), border
// clamped per corner. Optionally reports the interpolated spatial gradient.
struct TapResult {
    float value;
    float ddz, ddy, ddx;
};

inline TapResult trilinear_tap(const float* chan, int64_t D, int64_t H, int64_t W, float sz,
                               float sy, float sx) {
    const float fz0 = std::floor(sz), fy0 = std::floor(sy), fx0 = std::floor(sx);
    const float tz = sz - fz0, ty = sy - fy0, tx = sx - fx0;
    const int64_t z0 = clamp_index(static_cast<int64_t>(fz0), D);
    const int64_t z1 = clamp_index(static_cast<int64_t>(fz0) + 1, D);
    const int64_t y0 = clamp_index(static_cast<int64_t>(fy0), H);
    const int64_t y1 = clamp_index(static_cast<int64_t>(fy0) + 1, H);
    const int64_t x0 = clamp_index(static_cast<int64_t>(fx0), W);
    const int64_t x1 = clamp_index(static_cast<int64_t>(fx0) + 1, W);

    const float v000 = chan[(z0 * H + y0) * W + x0];
    const float v001 = chan[(z0 * H + y0) * W + x1];
    const float v010 = chan[(z0 * H + y1) * W + x0];
    const float v011 = chan[(z0 * H + y1) * W + x1];
    const float v100 = chan[(z1 * H + y0) * W + x0];
    const float v101 = chan[(z1 * H + y0) * W + x1];
    const float v110 = chan[(z1 * H + y1) * W + x0];
    const float v111 = chan[(z1 * H + y1) * W + x1];

    const float c00 = v000 + (v001 - v000) * tx;
    const float c01 = v010 + (v011 - v010) * tx;
    const float c10 = v100 + (v101 - v100) * tx;
    const float c11 = v110 + (v111 - v110) * tx;
    const float c0 = c00 + (c01 - c00) * ty;
    const float c1 = c10 + (c11 - c10) * ty;

    TapResult r;
    r.value = c0 + (c1 - c0) * tz;
    r.ddz = c1 - c0;
    const float d00 = v100 + (v101 - v100) * tx;  // plane z1 at y0
    const float d01 = v110 + (v111 - v110) * tx;  // plane z1 at y1
    r.ddy = (c01 - c00) * (1.0f - tz) + (d01 - d00) * tz;
    r.ddx = (v001 - v000) * (1.0f - ty) * (1.0f - tz) + (v011 - v010) * ty * (1.0f - tz) +
            (v101 - v100) * (1.0f - ty) * tz + (v111 - v110) * ty * tz;
    return r;
}

}  // namespace

Volume warp_trilinear(const Volume& moving, const DisplacementField& field) {
    require_matching_grid("warp_trilinear", moving.dims, field.dims);
    const int64_t D = moving.dims[0], H = moving.dims[1], W = moving.dims[2];
    Volume out(moving.dims);
    const float* dz = field.data.data();
    const float* dy = dz + field.voxels();
    const float* dx = dy + field.voxels();
    const float* src = moving.data.data();
    int64_t i = 0;
    for (int64_t z = 0; z < D; ++z) {
        for (int64_t y = 0; y < H; ++y) {
            for (int64_t x = 0; x < W; ++x, ++i) {
                out.data[i] = trilinear_tap(src, D, H, W, static_cast<float>(z) + dz[i],
                                            static_cast<float>(y) + dy[i],
                                            static_cast<float>(x) + dx[i])
                                  .value;
            }
        }
    }
    return out;
}

Volume warp_nearest(const Volume& labels, const DisplacementField& field) {
    require_matching_grid("warp_nearest", labels.dims, field.dims);
    const int64_t D = labels.dims[0], H = labels.dims[1], W = labels.dims[2];
    Volume out(labels.dims);
    const float* dz = field.data.data();
    const float* dy = dz + field.voxels();
    const float* dx = dy + field.voxels();
    int64_t i = 0;
    for (int64_t z = 0; z < D; ++z) {
        for (int64_t y = 0; y < H; ++y) {
            for (int64_t x = 0; x < W; ++x, ++i) {
                // std::round = half away from zero
                const int64_t sz = clamp_index(
                    static_cast<int64_t>(std::round(static_cast<float>(z) + dz[i])), D);
                const int64_t sy = clamp_index(
                    static_cast<int64_t>(std::round(static_cast<float>(y) + dy[i])), H);
                const int64_t sx = clamp_index(
                    static_cast<int64_t>(std::round(static_cast<float>(x) + dx[i])), W);
                out.data[i] = labels.at(sz, sy, sx);
            }
        }
    }
    return out;
}

Volume downsample_half(const Volume& vol) {
    for (int64_t e : vol.dims) {
        if (e % 2 != 0) {
            throw ShapeError("downsample_half: dims " + dims_str(vol.dims) + " must all be even");
        }
    }
    const Dims half{vol.dims[0] / 2, vol.dims[1] / 2, vol.dims[2] / 2};
    Volume out(half);
    for (int64_t z = 0; z < half[0]; ++z) {
        for (int64_t y = 0; y < half[1]; ++y) {
            for (int64_t x = 0; x < half[2]; ++x) {
                double s = 0.0;
                for (int64_t oz = 0; oz < 2; ++oz)
                    for (int64_t oy = 0; oy < 2; ++oy)
                        for (int64_t ox = 0; ox < 2; ++ox)
                            s += vol.at(2 * z + oz, 2 * y + oy, 2 * x + ox);
                out.at(z, y, x) = static_cast<float>(s / 8.0);
            }
        }
    }
    return out;
}

Tensor warp3d(const Tensor& moving, const Tensor& field) {
    if (moving.ndim() != 5 || field.ndim() != 5) {
        throw ShapeError("warp3d expects 5-d tensors");
    }
    if (field.dim(1) != 3) {
        throw ShapeError("warp3d: field must have 3 channels, got " + std::to_string(field.dim(1)));
    }
    if (moving.dim(0) != field.dim(0) || moving.dim(2) != field.dim(2) ||
        moving.dim(3) != field.dim(3) || moving.dim(4) != field.dim(4)) {
        throw ShapeError("warp3d: moving " + shape_str(moving.shape()) + " vs field " +
                         shape_str(field.shape()));
    }
    const int64_t B = moving.dim(0), C = moving.dim(1);
    const int64_t D = moving.dim(2), H = moving.dim(3), W = moving.dim(4);
    const int64_t V = D * H * W;

    std::vector<float> out(moving.numel());
    const float* mv = moving.values().data();
    const float* fv = field.values().data();
    for (int64_t n = 0; n < B; ++n) {
        const float* dz = fv + n * 3 * V;
        const float* dy = dz + V;
        const float* dx = dy + V;
        for (int64_t c = 0; c < C; ++c) {
            const float* chan = mv + (n * C + c) * V;
            float* dst = out.data() + (n * C + c) * V;
            int64_t i = 0;
            for (int64_t z = 0; z < D; ++z)
                for (int64_t y = 0; y < H; ++y)
                    for (int64_t x = 0; x < W; ++x, ++i)
                        dst[i] = trilinear_tap(chan, D, H, W, static_cast<float>(z) + dz[i],
                                               static_cast<float>(y) + dy[i],
                                               static_cast<float>(x) + dx[i])
                                     .value;
        }
    }

    auto m_node = moving.node();
    auto f_node = field.node();
    return Tensor(detail::make_op_node(
        "warp3d", moving.shape(), std::move(out), {m_node, f_node}, [=](detail::Node& self) {
            const float* mvv = m_node->value.data();
            const float* fvv = f_node->value.data();
            for (int64_t n = 0; n < B; ++n) {
                const float* dz = fvv + n * 3 * V;
                const float* dy = dz + V;
                const float* dx = dy + V;
                for (int64_t c = 0; c < C; ++c) {
                    const float* chan = mvv + (n * C + c) * V;
                    const float* gout = self.grad.data() + (n * C + c) * V;
                    float* gfield = f_node->requires_grad ? f_node->grad_data() + n * 3 * V : nullptr;
                    float* gmov = m_node->requires_grad ? m_node->grad_data() + (n * C + c) * V : nullptr;
                    int64_t i = 0;
                    for (int64_t z = 0; z < D; ++z) {
                        for (int64_t y = 0; y < H; ++y) {
                            for (int64_t x = 0; x < W; ++x, ++i) {
                                const float g = gout[i];
                                if (g == 0.0f) continue;
                                const float sz = static_cast<float>(z) + dz[i];
                                const float sy = static_cast<float>(y) + dy[i];
                                const float sx = static_cast<float>(x) + dx[i];
                                if (gfield) {
                                    const TapResult tap = trilinear_tap(chan, D, H, W, sz, sy, sx);
                                    gfield[i] += g * tap.ddz;
                                    gfield[V + i] += g * tap.ddy;
                                    gfield[2 * V + i] += g * tap.ddx;
                                }
                                if (gmov) {
                                    const float fz0 = std::floor(sz), fy0 = std::floor(sy),
                                                fx0 = std::floor(sx);
                                    const float tz = sz - fz0, ty = sy - fy0, tx = sx - fx0;
                                    const int64_t z0 = clamp_index(static_cast<int64_t>(fz0), D);
                                    const int64_t z1 = clamp_index(static_cast<int64_t>(fz0) + 1, D);
                                    const int64_t y0 = clamp_index(static_cast<int64_t>(fy0), H);
                                    const int64_t y1 = clamp_index(static_cast<int64_t>(fy0) + 1, H);
                                    const int64_t x0 = clamp_index(static_cast<int64_t>(fx0), W);
                                    const int64_t x1 = clamp_index(static_cast<int64_t>(fx0) + 1, W);
                                    gmov[(z0 * H + y0) * W + x0] += g * (1 - tz) * (1 - ty) * (1 - tx);
                                    gmov[(z0 * H + y0) * W + x1] += g * (1 - tz) * (1 - ty) * tx;
                                    gmov[(z0 * H + y1) * W + x0] += g * (1 - tz) * ty * (1 - tx);
                                    gmov[(z0 * H + y1) * W + x1] += g * (1 - tz) * ty * tx;
                                    gmov[(z1 * H + y0) * W + x0] += g * tz * (1 - ty) * (1 - tx);
                                    gmov[(z1 * H + y0) * W + x1] += g * tz * (1 - ty) * tx;
                                    gmov[(z1 * H + y1) * W + x0] += g * tz * ty * (1 - tx);
                                    gmov[(z1 * H + y1) * W + x1] += g * tz * ty * tx;
                                }
                            }
                        }
                    }
                }
            }
        }));
}

namespace {

struct AxisTaps {
    std::vector<int64_t> i0, i1;
    std::vector<float> frac;
};

AxisTaps make_axis_taps(int64_t in_extent, int64_t out_extent, double scale) {
    AxisTaps taps;
    taps.i0.resize(out_extent);
    taps.i1.resize(out_extent);
    taps.frac.resize(out_extent);
    for (int64_t o = 0; o < out_extent; ++o) {
        const double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
        const double f0 = std::floor(s);
        taps.i0[o] = clamp_index(static_cast<int64_t>(f0), in_extent);
        taps.i1[o] = clamp_index(static_cast<int64_t>(f0) + 1, in_extent);
        taps.frac[o] = static_cast<float>(s - f0);
    }
    return taps;
}

}  // namespace

Tensor upsample_trilinear(const Tensor& input, int factor, float value_scale) {
    if (input.ndim() != 5) throw ShapeError("upsample_trilinear: input must be [B,C,D,H,W]");
    if (factor < 1) throw ShapeError("upsample_trilinear: factor must be >= 1");
    const int64_t B = input.dim(0), C = input.dim(1);
    const int64_t D = input.dim(2), H = input.dim(3), W = input.dim(4);
    const int64_t Do = D * factor, Ho = H * factor, Wo = W * factor;
    const double scale = 1.0 / factor;
    const AxisTaps tz = make_axis_taps(D, Do, scale);
    const AxisTaps ty = make_axis_taps(H, Ho, scale);
    const AxisTaps tx = make_axis_taps(W, Wo, scale);

    Shape out_shape{B, C, Do, Ho, Wo};
    std::vector<float> out(shape_numel(out_shape));
    const float* in = input.values().data();
    for (int64_t nc = 0; nc < B * C; ++nc) {
        const float* src = in + nc * D * H * W;
        float* dst = out.data() + nc * Do * Ho * Wo;
        for (int64_t oz = 0; oz < Do; ++oz) {
            const float fz = tz.frac[oz];
            for (int64_t oy = 0; oy < Ho; ++oy) {
                const float fy = ty.frac[oy];
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    const float fx = tx.frac[ox];
                    float acc = 0.0f;
                    for (int dzb = 0; dzb < 2; ++dzb) {
                        const int64_t z = dzb ? tz.i1[oz] : tz.i0[oz];
                        const float wz = dzb ? fz : 1.0f - fz;
                        for (int dyb = 0; dyb < 2; ++dyb) {
                            const int64_t y = dyb ? ty.i1[oy] : ty.i0[oy];
                            const float wy = dyb ? fy : 1.0f - fy;
                            for (int dxb = 0; dxb < 2; ++dxb) {
                                const int64_t x = dxb ? tx.i1[ox] : tx.i0[ox];
                                const float wx = dxb ? fx : 1.0f - fx;
                                acc += wz * wy * wx * src[(z * H + y) * W + x];
                            }
                        }
                    }
                    dst[(oz * Ho + oy) * Wo + ox] = value_scale * acc;
                }
            }
        }
    }

    auto in_node = input.node();
    return Tensor(detail::make_op_node(
        "upsample_trilinear", std::move(out_shape), std::move(out), {in_node},
        [=](detail::Node& self) {
            if (!in_node->requires_grad) return;
            for (int64_t nc = 0; nc < B * C; ++nc) {
                float* gin = in_node->grad_data() + nc * D * H * W;
                const float* gout = self.grad.data() + nc * Do * Ho * Wo;
                for (int64_t oz = 0; oz < Do; ++oz) {
                    const float fz = tz.frac[oz];
                    for (int64_t oy = 0; oy < Ho; ++oy) {
                        const float fy = ty.frac[oy];
                        for (int64_t ox = 0; ox < Wo; ++ox) {
                            const float g = value_scale * gout[(oz * Ho + oy) * Wo + ox];
                            if (g == 0.0f) continue;
                            const float fx = tx.frac[ox];
                            for (int dzb = 0; dzb < 2; ++dzb) {
                                const int64_t z = dzb ? tz.i1[oz] : tz.i0[oz];
                                const float wz = dzb ? fz : 1.0f - fz;
                                for (int dyb = 0; dyb < 2; ++dyb) {
                                    const int64_t y = dyb ? ty.i1[oy] : ty.i0[oy];
                                    const float wy = dyb ? fy : 1.0f - fy;
                                    for (int dxb = 0; dxb < 2; ++dxb) {
                                        const int64_t x = dxb ? tx.i1[ox] : tx.i0[ox];
                                        const float wx = dxb ? fx : 1.0f - fx;
                                        gin[(z * H + y) * W + x] += g * wz * wy * wx;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }));
}

Tensor downsample_half_batch(const Tensor& input) {
    if (input.ndim() != 5) throw ShapeError("downsample_half_batch: input must be [B,C,D,H,W]");
    if (input.requires_grad()) {
        throw ShapeError("downsample_half_batch is an image-pyramid op; gradients do not flow");
    }
    const int64_t B = input.dim(0), C = input.dim(1);
    const int64_t D = input.dim(2), H = input.dim(3), W = input.dim(4);
    if (D % 2 || H % 2 || W % 2) {
        throw ShapeError("downsample_half_batch: spatial dims must be even, got " +
                         shape_str(input.shape()));
    }
    Shape out_shape{B, C, D / 2, H / 2, W / 2};
    std::vector<float> out(shape_numel(out_shape));
    const float* in = input.values().data();
    const int64_t hD = D / 2, hH = H / 2, hW = W / 2;
    for (int64_t nc = 0; nc < B * C; ++nc) {
        const float* src = in + nc * D * H * W;
        float* dst = out.data() + nc * hD * hH * hW;
        for (int64_t z = 0; z < hD; ++z)
            for (int64_t y = 0; y < hH; ++y)
                for (int64_t x = 0; x < hW; ++x) {
                    double s = 0.0;
                    for (int64_t oz = 0; oz < 2; ++oz)
                        for (int64_t oy = 0; oy < 2; ++oy)
                            for (int64_t ox = 0; ox < 2; ++ox)
                                s += src[((2 * z + oz) * H + 2 * y + oy) * W + 2 * x + ox];
                    dst[(z * hH + y) * hW + x] = static_cast<float>(s / 8.0);
                }
    }
    return Tensor::from_data(std::move(out_shape), std::move(out), false);
}

Volume resize_trilinear(const Volume& vol, Dims out_dims) {
    const AxisTaps tz = make_axis_taps(vol.dims[0], out_dims[0],
                                       static_cast<double>(vol.dims[0]) / out_dims[0]);
    const AxisTaps ty = make_axis_taps(vol.dims[1], out_dims[1],
                                       static_cast<double>(vol.dims[1]) / out_dims[1]);
    const AxisTaps tx = make_axis_taps(vol.dims[2], out_dims[2],
                                       static_cast<double>(vol.dims[2]) / out_dims[2]);
    Volume out(out_dims);
    for (int64_t z = 0; z < out_dims[0]; ++z) {
        for (int64_t y = 0; y < out_dims[1]; ++y) {
            for (int64_t x = 0; x < out_dims[2]; ++x) {
                const float fz = tz.frac[z], fy = ty.frac[y], fx = tx.frac[x];
                float acc = 0.0f;
                for (int dzb = 0; dzb < 2; ++dzb) {
                    const float wz = dzb ? fz : 1.0f - fz;
                    for (int dyb = 0; dyb < 2; ++dyb) {
                        const float wy = dyb ? fy : 1.0f - fy;
                        for (int dxb = 0; dxb < 2; ++dxb) {
                            const float wx = dxb ? fx : 1.0f - fx;
                            acc += wz * wy * wx *
                                   vol.at(dzb ? tz.i1[z] : tz.i0[z], dyb ? ty.i1[y] : ty.i0[y],
                                          dxb ? tx.i1[x] : tx.i0[x]);
                        }
                    }
                }
                out.at(z, y, x) = acc;
            }
        }
    }
    return out;
}

}  // namespace reg
