#include "reg/losses.hpp"

#include <cmath>
#include <ostream>
#include <string>

namespace reg {

namespace {

constexpr double kNccEps = 1e-8;

struct NccStats {
    double mean_a, mean_b, s_ab, s_a, s_b;
};

NccStats ncc_stats(const float* a, const float* b, int64_t n) {
    double sa = 0.0, sb = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        sa += a[i];
        sb += b[i];
    }
    NccStats st{sa / n, sb / n, 0.0, 0.0, 0.0};
    for (int64_t i = 0; i < n; ++i) {
        const double u = a[i] - st.mean_a;
        const double w = b[i] - st.mean_b;
        st.s_ab += u * w;
        st.s_a += u * u;
        st.s_b += w * w;
    }
    return st;
}

inline double ncc_from_stats(const NccStats& st) {
    return st.s_ab / std::sqrt(st.s_a * st.s_b + kNccEps);
}

}  // namespace

void LossWeights::validate() const {
    if (coarse < 0.0f || mid < 0.0f || fine < 0.0f) {
        throw ShapeError("loss weights must be non-negative");
    }
    if (coarse <= 0.0f && mid <= 0.0f && fine <= 0.0f) {
        throw ShapeError("at least one loss weight must be positive");
    }
    if (lambda < 0.0f) throw ShapeError("lambda must be non-negative");
}

float ncc_value(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw ShapeError("ncc: inputs must have equal length >= 2");
    }
    return static_cast<float>(
        ncc_from_stats(ncc_stats(a.data(), b.data(), static_cast<int64_t>(a.size()))));
}

float ncc_value(const Volume& a, const Volume& b) {
    if (a.dims != b.dims) {
        throw ShapeError("ncc: volume dims " + dims_str(a.dims) + " vs " + dims_str(b.dims));
    }
    return ncc_value(std::span<const float>(a.data), std::span<const float>(b.data));
}

Tensor ncc(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("ncc: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const int64_t batch = a.ndim() == 5 ? a.dim(0) : 1;
    const int64_t n = a.numel() / batch;
    if (n < 2) throw ShapeError("ncc: needs at least 2 elements per item");

    const float* av = a.values().data();
    const float* bv = b.values().data();
    std::vector<NccStats> stats(batch);
    double total = 0.0;
    for (int64_t item = 0; item < batch; ++item) {
        stats[item] = ncc_stats(av + item * n, bv + item * n, n);
        total += ncc_from_stats(stats[item]);
    }
    total /= batch;

    auto an = a.node();
    auto bn = b.node();
    auto node = detail::make_op_node(
        "ncc", Shape{1}, {static_cast<float>(total)}, {an, bn},
        [an, bn, batch, n, stats = std::move(stats)](detail::Node& self) {
            const double g0 = static_cast<double>(self.grad[0]) / batch;
            for (int64_t item = 0; item < batch; ++item) {
                const NccStats& st = stats[item];
                const double denom = std::sqrt(st.s_a * st.s_b + kNccEps);
                const double denom3 = denom * denom * denom;
                const float* av = an->value.data() + item * n;
                const float* bv = bn->value.data() + item * n;
                if (an->requires_grad) {
                    float* ga = an->grad_data() + item * n;
                    for (int64_t i = 0; i < n; ++i) {
                        const double u = av[i] - st.mean_a;
                        const double w = bv[i] - st.mean_b;
                        ga[i] += static_cast<float>(g0 * (w / denom - st.s_ab * st.s_b * u / denom3));
                    }
                }
                if (bn->requires_grad) {
                    float* gb = bn->grad_data() + item * n;
                    for (int64_t i = 0; i < n; ++i) {
                        const double u = av[i] - st.mean_a;
                        const double w = bv[i] - st.mean_b;
                        gb[i] += static_cast<float>(g0 * (u / denom - st.s_ab * st.s_a * w / denom3));
                    }
                }
            }
        });
    node->scalar_hi = total;
    node->has_scalar_hi = true;
    return Tensor(node);
}

Tensor tv_l1(const Tensor& field, bool mean_per_voxel) {
    if (field.ndim() != 5 && field.ndim() != 4) {
        throw ShapeError("tv_l1: field must be [B,3,D,H,W] or [3,D,H,W]");
    }
    const bool batched = field.ndim() == 5;
    const int64_t batch = batched ? field.dim(0) : 1;
    const int64_t C = batched ? field.dim(1) : field.dim(0);
    if (C != 3) throw ShapeError("tv_l1: field must have 3 channels, got " + std::to_string(C));
    const int64_t D = field.dim(batched ? 2 : 1);
    const int64_t H = field.dim(batched ? 3 : 2);
    const int64_t W = field.dim(batched ? 4 : 3);
    const int64_t V = D * H * W;
    const double norm = mean_per_voxel ? static_cast<double>(V) : 1.0;

    const float* fv = field.values().data();
    double total = 0.0;
    for (int64_t item = 0; item < batch; ++item) {
        double item_sum = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            const float* chan = fv + (item * C + c) * V;
            for (int64_t z = 0; z < D; ++z) {
                for (int64_t y = 0; y < H; ++y) {
                    const float* row = chan + (z * H + y) * W;
                    for (int64_t x = 0; x < W; ++x) {
                        const float v = row[x];
                        if (x + 1 < W) item_sum += std::abs(row[x + 1] - v);
                        if (y + 1 < H) item_sum += std::abs(chan[(z * H + y + 1) * W + x] - v);
                        if (z + 1 < D) item_sum += std::abs(chan[((z + 1) * H + y) * W + x] - v);
                    }
                }
            }
        }
        total += item_sum / norm;
    }
    total /= batch;

    auto fn = field.node();
    auto node = detail::make_op_node(
        "tv_l1", Shape{1}, {static_cast<float>(total)}, {fn},
        [fn, batch, C, D, H, W, V, norm](detail::Node& self) {
            if (!fn->requires_grad) return;
            const float g0 = static_cast<float>(static_cast<double>(self.grad[0]) / (batch * norm));
            for (int64_t item = 0; item < batch; ++item) {
                for (int64_t c = 0; c < C; ++c) {
                    const float* chan = fn->value.data() + (item * C + c) * V;
                    float* gchan = fn->grad_data() + (item * C + c) * V;
                    for (int64_t z = 0; z < D; ++z) {
                        for (int64_t y = 0; y < H; ++y) {
                            for (int64_t x = 0; x < W; ++x) {
                                const int64_t i = (z * H + y) * W + x;
                                // subgradient of |.| at 0 is 0
                                if (x + 1 < W) {
                                    const float d = chan[i + 1] - chan[i];
                                    const float s = d > 0.0f ? g0 : (d < 0.0f ? -g0 : 0.0f);
                                    gchan[i + 1] += s;
                                    gchan[i] -= s;
                                }
                                if (y + 1 < H) {
                                    const float d = chan[i + W] - chan[i];
                                    const float s = d > 0.0f ? g0 : (d < 0.0f ? -g0 : 0.0f);
                                    gchan[i + W] += s;
                                    gchan[i] -= s;
                                }
                                if (z + 1 < D) {
                                    const float d = chan[i + H * W] - chan[i];
                                    const float s = d > 0.0f ? g0 : (d < 0.0f ? -g0 : 0.0f);
                                    gchan[i + H * W] += s;
                                    gchan[i] -= s;
                                }
                            }
                        }
                    }
                }
            }
        });
    node->scalar_hi = total;
    node->has_scalar_hi = true;
    return Tensor(node);
}

Tensor registration_loss(const Tensor& fixed, const Tensor& moving, const Tensor& field,
                         float lambda, LevelLoss* detail, bool tv_mean) {
    Tensor warped = warp3d(moving, field);
    Tensor similarity = ncc(fixed, warped);
    Tensor smoothness = tv_l1(field, tv_mean);
    Tensor loss = weighted_sum({similarity, smoothness}, {-1.0f, lambda});
    if (detail) {
        detail->ncc = similarity.item();
        detail->tv = smoothness.item();
        detail->loss = loss.item();
    }
    return loss;
}

Tensor registration_loss(const Volume& fixed, const Volume& moving, const DisplacementField& field,
                         float lambda) {
    if (fixed.dims != moving.dims || fixed.dims != field.dims) {
        throw ShapeError("registration_loss: dims mismatch, fixed " + dims_str(fixed.dims) +
                         " moving " + dims_str(moving.dims) + " field " + dims_str(field.dims));
    }
    return registration_loss(to_tensor(fixed), to_tensor(moving), to_tensor(field), lambda);
}

std::pair<Tensor, LossReport> multires_loss(const Tensor& fixed, const Tensor& moving,
                                            const std::array<Tensor, 3>& fields,
                                            const LossWeights& weights) {
    weights.validate();
    if (fixed.shape() != moving.shape() || fixed.ndim() != 5) {
        throw ShapeError("multires_loss: fixed/moving must be equal [B,1,D,H,W] tensors");
    }
    for (size_t axis = 2; axis < 5; ++axis) {
        if (fixed.dim(axis) % 4 != 0) {
            throw ShapeError("multires_loss: dims " + shape_str(fixed.shape()) +
                             " must be divisible by 4");
        }
    }
    // pyramid: [0]=full, [1]=half, [2]=quarter
    Tensor fixed_half = downsample_half_batch(fixed);
    Tensor fixed_quarter = downsample_half_batch(fixed_half);
    Tensor moving_half = downsample_half_batch(moving);
    Tensor moving_quarter = downsample_half_batch(moving_half);

    const Tensor* fixed_lv[3] = {&fixed_quarter, &fixed_half, &fixed};
    const Tensor* moving_lv[3] = {&moving_quarter, &moving_half, &moving};
    const float level_weights[3] = {weights.coarse, weights.mid, weights.fine};
    const int level_tags[3] = {2, 1, 0};

    LossReport report;
    std::vector<Tensor> level_losses;
    for (int lv = 0; lv < 3; ++lv) {
        const Tensor& f = *fixed_lv[lv];
        if (fields[lv].ndim() != 5 || fields[lv].dim(1) != 3 || fields[lv].dim(0) != f.dim(0) ||
            fields[lv].dim(2) != f.dim(2) || fields[lv].dim(3) != f.dim(3) ||
            fields[lv].dim(4) != f.dim(4)) {
            throw ShapeError("multires_loss: field " + std::to_string(lv) + " shape " +
                             shape_str(fields[lv].shape()) + " does not match pyramid level " +
                             shape_str(f.shape()));
        }
        LevelLoss detail;
        detail.level = level_tags[lv];
        detail.weight = level_weights[lv];
        level_losses.push_back(registration_loss(f, *moving_lv[lv], fields[lv], weights.lambda,
                                                 &detail, weights.tv_mean));
        report.levels.push_back(detail);
    }
    Tensor total = weighted_sum(level_losses,
                                {level_weights[0], level_weights[1], level_weights[2]});
    report.total = total.item();
    return {total, report};
}

std::pair<Tensor, LossReport> multires_loss(const Volume& fixed, const Volume& moving,
                                            const std::array<DisplacementField, 3>& fields,
                                            const LossWeights& weights) {
    return multires_loss(to_tensor(fixed), to_tensor(moving),
                         {to_tensor(fields[0]), to_tensor(fields[1]), to_tensor(fields[2])},
                         weights);
}

void write_loss_csv_header(std::ostream& os) {
    os << "iteration,level,ncc,tv,loss,weight,total\n";
}

void write_loss_csv_rows(std::ostream& os, int64_t iteration, const LossReport& report) {
    for (const LevelLoss& lv : report.levels) {
        os << iteration << ',' << lv.level << ',' << lv.ncc << ',' << lv.tv << ',' << lv.loss
           << ',' << lv.weight << ',' << report.total << '\n';
    }
}

}  // namespace reg
