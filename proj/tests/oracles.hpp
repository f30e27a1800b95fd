#pragma once

// Reference implementations written directly from the definitions, kept
// independent of the library kernels they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

using Grid = std::vector<std::vector<double>>;

inline Grid matmul(const Grid& a, const Grid& b) {
    Grid out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b[0].size(); ++j)
            for (std::size_t k = 0; k < b.size(); ++k) out[i][j] += a[i][k] * b[k][j];
    return out;
}

inline Grid row_softmax(const Grid& a) {
    Grid out = a;
    for (auto& row : out) {
        double z = 0.0;
        for (double v : row) z += std::exp(v);
        for (double& v : row) v = std::exp(v) / z;
    }
    return out;
}

/// Plain alternating row/column scaling for a fixed number of sweeps.
inline Grid sinkhorn_sweeps(Grid k, std::size_t sweeps) {
    for (std::size_t s = 0; s < sweeps; ++s) {
        for (auto& row : k) {
            double z = 0.0;
            for (double v : row) z += v;
            for (double& v : row) v /= z;
        }
        for (std::size_t j = 0; j < k[0].size(); ++j) {
            double z = 0.0;
            for (auto& row : k) z += row[j];
            for (auto& row : k) row[j] /= z;
        }
    }
    return k;
}

struct Confusion {
    double tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Confusion confusion(const std::vector<double>& pred, const std::vector<double>& gt, double threshold) {
    Confusion c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] >= threshold;
        const bool g = gt[i] >= 0.5;
        if (p && g) c.tp += 1;
        if (p && !g) c.fp += 1;
        if (!p && g) c.fn += 1;
        if (!p && !g) c.tn += 1;
    }
    return c;
}

inline double iou(const std::vector<double>& pred, const std::vector<double>& gt) {
    const auto c = confusion(pred, gt, 0.5);
    const double denom = c.tp + c.fp + c.fn;
    return denom == 0 ? 1.0 : c.tp / denom;
}

inline double f_score(const std::vector<double>& pred, const std::vector<double>& gt) {
    const auto c = confusion(pred, gt, 0.5);
    const double denom = 2 * c.tp + c.fp + c.fn;
    return denom == 0 ? 1.0 : 2 * c.tp / denom;
}

/// Sweeps every distinct score from high to low as a ">=" threshold and sums
/// precision times the recall increment.
inline double aupr(const std::vector<double>& scores, const std::vector<double>& gt) {
    std::vector<double> thresholds = scores;
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    double positives = 0;
    for (double g : gt) positives += g >= 0.5 ? 1 : 0;
    if (positives == 0) return 0.0;
    double area = 0.0, prev_recall = 0.0;
    for (double t : thresholds) {
        const auto c = confusion(scores, gt, t);
        const double recall = c.tp / positives;
        const double precision = c.tp + c.fp > 0 ? c.tp / (c.tp + c.fp) : 1.0;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return area;
}

inline double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return 1.0 - ab / std::sqrt(aa * bb);
}

}  // namespace oracle
