#include "bivlgm/features.hpp"

#include <cmath>
#include <stdexcept>

namespace bivlgm {

EncoderParams EncoderParams::init(std::size_t dim, Rng& rng) {
    const double b1 = 1.0 / std::sqrt(static_cast<double>(dim));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(2 * dim));
    return {rng.uniform_matrix(dim, 2 * dim, -b1, b1), Matrix(1, 2 * dim),
            rng.uniform_matrix(2 * dim, dim, -b2, b2), Matrix(1, dim)};
}

EncoderParams EncoderParams::zero(std::size_t dim) {
    return {Matrix(dim, 2 * dim), Matrix(1, 2 * dim), Matrix(2 * dim, dim), Matrix(1, dim)};
}

EncoderParams EncoderParams::passthrough(std::size_t dim) {
    EncoderParams p = zero(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        p.w1(i, i) = 1.0;
        p.w1(i, dim + i) = -1.0;
        p.w2(i, i) = 1.0;
        p.w2(dim + i, i) = -1.0;
    }
    return p;
}

EncoderParams::Vars EncoderParams::bind(Tape& tape, bool trainable) const {
    auto b = [&](const Matrix& m) { return trainable ? tape.variable(m) : tape.constant(m); };
    return {b(w1), b(b1), b(w2), b(b2)};
}

Var masked_pool(Var mask, Var feat, std::span<const std::size_t> present) {
    if (mask.cols() != feat.rows()) {
        throw ShapeError("masked_pool: mask " + mask.value().shape_string() + " and features " +
                         feat.value().shape_string() + " cover different pixel counts");
    }
    if (present.empty()) throw std::invalid_argument("masked_pool: no present classes");
    Var m = select_rows(mask, present);
    return div(matmul(m, feat), clamp_min(row_sum(m), kPoolAreaFloor));
}

Matrix masked_pool(const Mask& mask, const FeatureMap& feat, std::span<const LesionClass> present) {
    if (mask.height != feat.height || mask.width != feat.width) {
        throw ShapeError("masked_pool: mask is " + std::to_string(mask.height) + "x" +
                         std::to_string(mask.width) + " but features are " + std::to_string(feat.height) +
                         "x" + std::to_string(feat.width));
    }
    Tape t;
    const auto idx = class_indices(present);
    return masked_pool(t.constant(mask.values), t.constant(feat.values), idx).value();
}

Var encode(Var x, const EncoderParams::Vars& p) {
    if (x.cols() != p.w1.rows()) {
        throw ShapeError("encoder: input " + x.value().shape_string() + " does not match weight " +
                         p.w1.value().shape_string());
    }
    Var h = relu(add(matmul(x, p.w1), p.b1));
    return add(matmul(h, p.w2), p.b2);
}

LocalFeatures encode_local(const Matrix& pooled, const EncoderParams& params, std::vector<LesionClass> classes,
                           Branch branch) {
    if (classes.size() != pooled.rows()) {
        throw ShapeError("encode_local: " + std::to_string(classes.size()) + " classes for " +
                         pooled.shape_string() + " pooled rows");
    }
    Tape t;
    Matrix v = encode(t.constant(pooled), params.bind(t, false)).value();
    return {std::move(v), std::move(classes), branch};
}

Matrix encode_text(const Matrix& embedding, const EncoderParams& params) {
    Tape t;
    return encode(t.constant(embedding), params.bind(t, false)).value();
}

Var global_project(Var local, Var proj) {
    if (local.cols() != proj.rows()) {
        throw ShapeError("global_project: local " + local.value().shape_string() + " vs projection " +
                         proj.value().shape_string());
    }
    return mean_rows(matmul(local, proj));
}

Matrix global_project(const LocalFeatures& local, const Matrix& proj) {
    if (local.classes.empty()) throw std::invalid_argument("global_project: empty local feature set");
    Tape t;
    return global_project(t.constant(local.values), t.constant(proj)).value();
}

std::vector<LesionClass> present_classes(const Mask& mask) {
    std::vector<LesionClass> out;
    for (LesionClass c : kAllClasses) {
        for (double v : mask.values.row(index_of(c))) {
            if (v > 0.5) {
                out.push_back(c);
                break;
            }
        }
    }
    return out;
}

std::vector<std::size_t> class_indices(std::span<const LesionClass> classes) {
    std::vector<std::size_t> out;
    out.reserve(classes.size());
    for (LesionClass c : classes) out.push_back(index_of(c));
    return out;
}

}  // namespace bivlgm
