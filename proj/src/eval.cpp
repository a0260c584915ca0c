#include "reg/eval.hpp"

#include <cmath>
#include <sstream>

#include "reg/io_util.hpp"
#include "reg/losses.hpp"
#include "reg/warp.hpp"

namespace reg {

float dice(const Volume& a, const Volume& b, int label) {
    if (a.dims != b.dims) {
        throw ShapeError("dice: dims " + dims_str(a.dims) + " vs " + dims_str(b.dims));
    }
    int64_t count_a = 0, count_b = 0, overlap = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const bool in_a = std::lround(a.data[i]) == label;
        const bool in_b = std::lround(b.data[i]) == label;
        count_a += in_a;
        count_b += in_b;
        overlap += in_a && in_b;
    }
    if (count_a + count_b == 0) return 1.0f;
    return static_cast<float>(2.0 * overlap / static_cast<double>(count_a + count_b));
}

float endpoint_error(const DisplacementField& field, const DisplacementField& truth) {
    if (field.dims != truth.dims) {
        throw ShapeError("endpoint_error: dims " + dims_str(field.dims) + " vs " +
                         dims_str(truth.dims));
    }
    const int64_t V = field.voxels();
    double total = 0.0;
    for (int64_t i = 0; i < V; ++i) {
        const double dz = field.data[i] - truth.data[i];
        const double dy = field.data[V + i] - truth.data[V + i];
        const double dx = field.data[2 * V + i] - truth.data[2 * V + i];
        total += std::sqrt(dz * dz + dy * dy + dx * dx);
    }
    return static_cast<float>(total / V);
}

Volume mean_volume(std::span<const Volume> volumes) {
    if (volumes.empty()) throw ShapeError("mean_volume: empty input");
    const Dims dims = volumes.front().dims;
    std::vector<double> acc(dims_numel(dims), 0.0);
    for (const Volume& vol : volumes) {
        if (vol.dims != dims) {
            throw ShapeError("mean_volume: dims " + dims_str(vol.dims) + " vs " + dims_str(dims));
        }
        for (size_t i = 0; i < acc.size(); ++i) acc[i] += vol.data[i];
    }
    Volume out(dims);
    for (size_t i = 0; i < acc.size(); ++i) {
        out.data[i] = static_cast<float>(acc[i] / static_cast<double>(volumes.size()));
    }
    return out;
}

std::vector<MetricRow> evaluate_pairs(const RegisterFn& registrar,
                                      const std::vector<EvalPair>& pairs) {
    std::vector<MetricRow> rows;
    rows.reserve(pairs.size());
    for (const EvalPair& pair : pairs) {
        MetricRow row;
        row.id = pair.id;
        try {
            row.ncc_before = ncc_value(pair.fixed, pair.moving);
            const DisplacementField field = registrar(pair.fixed, pair.moving);
            const Volume warped = warp_trilinear(pair.moving, field);
            row.ncc_after = ncc_value(pair.fixed, warped);
            if (pair.fixed_labels && pair.moving_labels) {
                row.dice_before = dice(*pair.fixed_labels, *pair.moving_labels, 1);
                const Volume warped_labels = warp_nearest(*pair.moving_labels, field);
                row.dice_after = dice(*pair.fixed_labels, warped_labels, 1);
            }
            if (pair.truth) {
                const DisplacementField zero(pair.truth->dims);
                row.epe_before = endpoint_error(zero, *pair.truth);
                row.epe_after = endpoint_error(field, *pair.truth);
            }
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace {

struct ColumnStats {
    double sum = 0.0, sum_sq = 0.0;
    int64_t count = 0;

    void add(float v) {
        sum += v;
        sum_sq += static_cast<double>(v) * v;
        ++count;
    }
    double mean() const { return count ? sum / count : 0.0; }
    double stddev() const {
        if (count < 2) return 0.0;
        const double m = mean();
        return std::sqrt(std::max(0.0, sum_sq / count - m * m));
    }
};

void put_optional(std::ostream& os, const std::optional<float>& v) {
    os << ',';
    if (v) os << *v;
}

}  // namespace

std::string metrics_csv(const std::vector<MetricRow>& rows) {
    std::ostringstream os;
    os << "pair,status,ncc_before,ncc_after,dice_before,dice_after,epe_before,epe_after\n";
    ColumnStats stats[6];
    for (const MetricRow& row : rows) {
        os << row.id << ',' << (row.ok ? "ok" : "error:" + row.error);
        if (row.ok) {
            os << ',' << row.ncc_before << ',' << row.ncc_after;
            stats[0].add(row.ncc_before);
            stats[1].add(row.ncc_after);
        } else {
            os << ",,";
        }
        put_optional(os, row.dice_before);
        put_optional(os, row.dice_after);
        put_optional(os, row.epe_before);
        put_optional(os, row.epe_after);
        if (row.dice_before) stats[2].add(*row.dice_before);
        if (row.dice_after) stats[3].add(*row.dice_after);
        if (row.epe_before) stats[4].add(*row.epe_before);
        if (row.epe_after) stats[5].add(*row.epe_after);
        os << '\n';
    }
    os << "#summary,mean";
    for (const auto& st : stats) {
        os << ',';
        if (st.count) os << st.mean();
    }
    os << "\n#summary,std";
    for (const auto& st : stats) {
        os << ',';
        if (st.count) os << st.stddev();
    }
    os << '\n';
    return os.str();
}

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
    atomic_write_file(path, metrics_csv(rows));
}

}  // namespace reg
