#include "bivlgm/losses.hpp"

#include <stdexcept>

namespace bivlgm {

GtCorrespondence::GtCorrespondence(Matrix values) : values_(std::move(values)) {
    for (double v : values_.data()) {
        if (v != 0.0 && v != 1.0) throw std::invalid_argument("ground-truth correspondence must be binary");
    }
}

void LossWeights::validate() const {
    for (double w : {lambda_a, lambda_b, lambda_c, lambda_d, lambda_e}) {
        if (!(w >= 0.0)) throw std::invalid_argument("loss weights must be nonnegative");
    }
}

Var ce_corr(Var pred, const GtCorrespondence& gt) {
    require_same_shape(pred.value(), gt.values(), "ce_corr");
    Tape& t = pred.tape();
    Var p = clamp(pred, kLogClamp, 1.0 - kLogClamp);
    Var g = t.constant(gt.values());
    Var one_minus_g = t.constant(Matrix(gt.rows(), gt.cols(), 1.0) - gt.values());
    Var ll = add(mul(log(p), g), mul(log(rsub(1.0, p)), one_minus_g));
    return neg(sum(ll));
}

Var qc(Var edges_a, Var edges_b, Var pred) {
    const Matrix& ea = edges_a.value();
    const Matrix& eb = edges_b.value();
    const Matrix& x = pred.value();
    if (ea.rows() != ea.cols() || eb.rows() != eb.cols() || ea.rows() != x.rows() ||
        eb.rows() != x.cols()) {
        throw ShapeError("qc: edges " + ea.shape_string() + " / " + eb.shape_string() +
                         " incompatible with correspondence " + x.shape_string());
    }
    return mean(abs(sub(matmul(edges_a, pred), matmul(pred, edges_b))));
}

Var l1_corr(Var pred, const GtCorrespondence& gt) {
    require_same_shape(pred.value(), gt.values(), "l1_corr");
    return mean(abs(sub(pred, pred.tape().constant(gt.values()))));
}

Var local_gt_loss(const MatchedGraphs& m, const GtCorrespondence& gt) {
    return add(ce_corr(m.correspondence, gt), qc(m.edges_a, m.edges_b, m.correspondence));
}

Var local_pred_loss(const MatchedGraphs& m, const GtCorrespondence& gt) {
    return add(l1_corr(m.correspondence, gt), qc(m.edges_a, m.edges_b, m.correspondence));
}

// The sentence-level losses share their form with the word-level ones; only
// the graphs they are applied to differ.
Var global_gt_loss(const MatchedGraphs& m, const GtCorrespondence& gt) { return local_gt_loss(m, gt); }

Var global_pred_loss(const MatchedGraphs& m, const GtCorrespondence& gt) {
    return local_pred_loss(m, gt);
}

Var dice_loss(Var pred_mask, const Matrix& gt_mask) {
    require_same_shape(pred_mask.value(), gt_mask, "dice_loss");
    Var g = pred_mask.tape().constant(gt_mask);
    Var inter = row_sum(mul(pred_mask, g));
    Var denom = add_scalar(add(row_sum(pred_mask), row_sum(g)), kDiceSmooth);
    Var ratio = div(add_scalar(scale(inter, 2.0), kDiceSmooth), denom);
    return rsub(1.0, mean(ratio));
}

namespace {

// mean_i -log(sum_j pos_ij softmax(logits)_ij)
Var multi_positive_nce(Var logits, const Matrix& positives) {
    for (std::size_t i = 0; i < positives.rows(); ++i) {
        double s = 0.0;
        for (double v : positives.row(i)) s += v;
        if (s == 0.0) throw std::invalid_argument("contrastive_loss: every row needs a positive");
    }
    Var p = row_softmax(logits);
    Var pos_mass = row_sum(mul(p, logits.tape().constant(positives)));
    return neg(mean(log(pos_mass)));
}

}  // namespace

Var contrastive_loss(Var a_feats, Var b_feats, const GtCorrespondence& positives, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("contrastive_loss: temperature must be positive");
    if (a_feats.cols() != b_feats.cols()) {
        throw ShapeError("contrastive_loss: feature widths differ, " + a_feats.value().shape_string() +
                         " vs " + b_feats.value().shape_string());
    }
    if (positives.rows() != a_feats.rows() || positives.cols() != b_feats.rows()) {
        throw ShapeError("contrastive_loss: positive mask " + positives.values().shape_string() +
                         " does not match features");
    }
    Var logits = scale(matmul(row_l2_normalize(a_feats), transpose(row_l2_normalize(b_feats))),
                       1.0 / temperature);
    Var forward = multi_positive_nce(logits, positives.values());
    Var backward = multi_positive_nce(transpose(logits), transpose(positives.values()));
    return scale(add(forward, backward), 0.5);
}

double encoder_loss(double l_local_gt, double l_global_gt, const LossWeights& w) {
    return w.lambda_a * l_local_gt + w.lambda_b * l_global_gt;
}

double generator_loss(double l_dice, double l_local_p, double l_global_p, const LossWeights& w) {
    return w.lambda_c * l_dice + w.lambda_d * l_local_p + w.lambda_e * l_global_p;
}

Var encoder_loss(Var l_local_gt, Var l_global_gt, const LossWeights& w) {
    return add(scale(l_local_gt, w.lambda_a), scale(l_global_gt, w.lambda_b));
}

Var generator_loss(Var l_dice, Var l_local_p, Var l_global_p, const LossWeights& w) {
    return add(add(scale(l_dice, w.lambda_c), scale(l_local_p, w.lambda_d)), scale(l_global_p, w.lambda_e));
}

double ce_corr(const Matrix& pred, const GtCorrespondence& gt) {
    Tape t;
    return ce_corr(t.constant(pred), gt).item();
}

double qc(const Matrix& edges_a, const Matrix& edges_b, const Matrix& pred) {
    Tape t;
    return qc(t.constant(edges_a), t.constant(edges_b), t.constant(pred)).item();
}

double l1_corr(const Matrix& pred, const GtCorrespondence& gt) {
    Tape t;
    return l1_corr(t.constant(pred), gt).item();
}

double dice_loss(const Matrix& pred_mask, const Matrix& gt_mask) {
    Tape t;
    return dice_loss(t.constant(pred_mask), gt_mask).item();
}

double contrastive_loss(const Matrix& a_feats, const Matrix& b_feats, const GtCorrespondence& positives,
                        double temperature) {
    Tape t;
    return contrastive_loss(t.constant(a_feats), t.constant(b_feats), positives, temperature).item();
}

}  // namespace bivlgm
