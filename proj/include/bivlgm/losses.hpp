#pragma once

#include "bivlgm/autodiff.hpp"
#include "bivlgm/matching.hpp"
#include "bivlgm/matrix.hpp"

namespace bivlgm {

/// Lower/upper clamp for probabilities fed to a logarithm.
inline constexpr double kLogClamp = 1e-7;
/// Additive smoothing in the Dice ratio.
inline constexpr double kDiceSmooth = 1.0;
inline constexpr double kDefaultTemperature = 0.07;

/// Binary ground-truth correspondence.
class GtCorrespondence {
public:
    explicit GtCorrespondence(Matrix values);

    const Matrix& values() const { return values_; }
    std::size_t rows() const { return values_.rows(); }
    std::size_t cols() const { return values_.cols(); }

private:
    Matrix values_;
};

struct LossWeights {
    double lambda_a = 0.5;  // local GT alignment
    double lambda_b = 0.5;  // global GT alignment
    double lambda_c = 1.0;  // Dice
    double lambda_d = 0.5;  // local predicted alignment
    double lambda_e = 0.5;  // global predicted alignment

    void validate() const;
};

/// A matched pair of graphs: both soft adjacencies and the predicted soft
/// correspondence between them.
struct MatchedGraphs {
    Var edges_a;
    Var edges_b;
    Var correspondence;
};

/// Summed binary cross entropy over all entries; pred clamped to [eps, 1-eps].
Var ce_corr(Var pred, const GtCorrespondence& gt);
/// (1/NM) sum |E_a X - X E_b|
Var qc(Var edges_a, Var edges_b, Var pred);
/// mean |pred - gt|
Var l1_corr(Var pred, const GtCorrespondence& gt);

// GT branch: cross entropy + structure; predicted branch: L1 + structure.
Var local_gt_loss(const MatchedGraphs& m, const GtCorrespondence& gt);
Var local_pred_loss(const MatchedGraphs& m, const GtCorrespondence& gt);
Var global_gt_loss(const MatchedGraphs& m, const GtCorrespondence& gt);
Var global_pred_loss(const MatchedGraphs& m, const GtCorrespondence& gt);

/// Mean over classes of 1 - (2 sum pg + 1) / (sum p + sum g + 1). Masks are
/// C x (H*W), one class per row.
Var dice_loss(Var pred_mask, const Matrix& gt_mask);

/// Symmetric multi-positive InfoNCE over cosine similarities. Rows of both
/// feature sets are L2-normalized internally.
Var contrastive_loss(Var a_feats, Var b_feats, const GtCorrespondence& positives,
                     double temperature = kDefaultTemperature);

double encoder_loss(double l_local_gt, double l_global_gt, const LossWeights& w);
double generator_loss(double l_dice, double l_local_p, double l_global_p, const LossWeights& w);
Var encoder_loss(Var l_local_gt, Var l_global_gt, const LossWeights& w);
Var generator_loss(Var l_dice, Var l_local_p, Var l_global_p, const LossWeights& w);

// Value-only conveniences.
double ce_corr(const Matrix& pred, const GtCorrespondence& gt);
double qc(const Matrix& edges_a, const Matrix& edges_b, const Matrix& pred);
double l1_corr(const Matrix& pred, const GtCorrespondence& gt);
double dice_loss(const Matrix& pred_mask, const Matrix& gt_mask);
double contrastive_loss(const Matrix& a_feats, const Matrix& b_feats,
                        const GtCorrespondence& positives, double temperature = kDefaultTemperature);

}  // namespace bivlgm
