#pragma once

#include <array>
#include <span>
#include <vector>

#include "bivlgm/lesion.hpp"

namespace bivlgm {

inline constexpr double kBinarizeThreshold = 0.5;

// Single-channel metrics. `pred` and `scores` are soft values in [0, 1];
// binary metrics threshold them at 0.5 (>= counts as positive).
double iou(std::span<const double> pred, std::span<const double> gt);
double f_score(std::span<const double> pred, std::span<const double> gt);
/// Step-wise area under the precision-recall curve over every distinct score
/// threshold: sum_k (R_k - R_{k-1}) P_k.
double aupr(std::span<const double> scores, std::span<const double> gt);

struct ClassMetrics {
    bool evaluated = false;  // false when the class is absent from the ground truth
    double iou = 0.0;
    double f_score = 0.0;
    double aupr = 0.0;
};

struct ImageMetrics {
    std::array<ClassMetrics, kNumClasses> per_class{};
    std::size_t evaluated_classes = 0;
    double miou = 0.0;
    double mf = 0.0;
    double maupr = 0.0;
};

/// Per-class metrics and their means over GT-present classes.
ImageMetrics evaluate_masks(const Mask& pred, const Mask& gt);

struct DatasetMetrics {
    std::size_t images = 0;
    double miou = 0.0;
    double mf = 0.0;
    double maupr = 0.0;
    /// Per-class means over images where the class is present; 0 when never present.
    std::array<double, kNumClasses> class_iou{};
    std::array<double, kNumClasses> class_f{};
    std::array<double, kNumClasses> class_aupr{};
    std::array<std::size_t, kNumClasses> class_count{};
};

/// Means of per-image means; images without any GT lesion are skipped.
DatasetMetrics summarize(const std::vector<ImageMetrics>& images);

}  // namespace bivlgm
