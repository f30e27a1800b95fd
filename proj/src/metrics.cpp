#include "bivlgm/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace bivlgm {

namespace {

struct Confusion {
    double tp = 0, fp = 0, fn = 0;
};

Confusion confusion(std::span<const double> pred, std::span<const double> gt) {
    if (pred.size() != gt.size()) {
        throw ShapeError("metrics: prediction has " + std::to_string(pred.size()) + " pixels, ground truth " +
                         std::to_string(gt.size()));
    }
    Confusion c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] >= kBinarizeThreshold;
        const bool g = gt[i] > 0.5;
        if (p && g) c.tp += 1;
        else if (p) c.fp += 1;
        else if (g) c.fn += 1;
    }
    return c;
}

}  // namespace

double iou(std::span<const double> pred, std::span<const double> gt) {
    const Confusion c = confusion(pred, gt);
    const double denom = c.tp + c.fp + c.fn;
    return denom == 0.0 ? 1.0 : c.tp / denom;
}

double f_score(std::span<const double> pred, std::span<const double> gt) {
    const Confusion c = confusion(pred, gt);
    const double denom = 2.0 * c.tp + c.fp + c.fn;
    return denom == 0.0 ? 1.0 : 2.0 * c.tp / denom;
}

double aupr(std::span<const double> scores, std::span<const double> gt) {
    if (scores.size() != gt.size()) throw ShapeError("aupr: scores and ground truth differ in length");
    double positives = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!(scores[i] >= 0.0 && scores[i] <= 1.0)) throw std::invalid_argument("aupr: scores must lie in [0, 1]");
        positives += gt[i] > 0.5 ? 1.0 : 0.0;
    }
    if (positives == 0.0) throw std::invalid_argument("aupr: ground truth has no positives");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    double tp = 0.0, fp = 0.0, prev_recall = 0.0, area = 0.0;
    for (std::size_t k = 0; k < order.size();) {
        const double s = scores[order[k]];
        while (k < order.size() && scores[order[k]] == s) {
            (gt[order[k]] > 0.5 ? tp : fp) += 1.0;
            ++k;
        }
        const double recall = tp / positives;
        const double precision = tp / (tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return area;
}

ImageMetrics evaluate_masks(const Mask& pred, const Mask& gt) {
    if (pred.height != gt.height || pred.width != gt.width) throw ShapeError("evaluate_masks: mask sizes differ");
    ImageMetrics m;
    for (LesionClass c : kAllClasses) {
        const auto g = gt.values.row(index_of(c));
        if (std::none_of(g.begin(), g.end(), [](double v) { return v > 0.5; })) continue;
        const auto p = pred.values.row(index_of(c));
        ClassMetrics& cm = m.per_class[index_of(c)];
        cm.evaluated = true;
        cm.iou = iou(p, g);
        cm.f_score = f_score(p, g);
        cm.aupr = aupr(p, g);
        m.miou += cm.iou;
        m.mf += cm.f_score;
        m.maupr += cm.aupr;
        ++m.evaluated_classes;
    }
    if (m.evaluated_classes > 0) {
        const double n = static_cast<double>(m.evaluated_classes);
        m.miou /= n;
        m.mf /= n;
        m.maupr /= n;
    }
    return m;
}

DatasetMetrics summarize(const std::vector<ImageMetrics>& images) {
    DatasetMetrics d;
    for (const auto& m : images) {
        if (m.evaluated_classes == 0) continue;
        ++d.images;
        d.miou += m.miou;
        d.mf += m.mf;
        d.maupr += m.maupr;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            if (!m.per_class[c].evaluated) continue;
            ++d.class_count[c];
            d.class_iou[c] += m.per_class[c].iou;
            d.class_f[c] += m.per_class[c].f_score;
            d.class_aupr[c] += m.per_class[c].aupr;
        }
    }
    if (d.images > 0) {
        const double n = static_cast<double>(d.images);
        d.miou /= n;
        d.mf /= n;
        d.maupr /= n;
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (d.class_count[c] == 0) continue;
        const double n = static_cast<double>(d.class_count[c]);
        d.class_iou[c] /= n;
        d.class_f[c] /= n;
        d.class_aupr[c] /= n;
    }
    return d;
}

}  // namespace bivlgm
