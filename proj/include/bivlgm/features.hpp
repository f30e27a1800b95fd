#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bivlgm/autodiff.hpp"
#include "bivlgm/lesion.hpp"
#include "bivlgm/rng.hpp"

namespace bivlgm {

inline constexpr double kPoolAreaFloor = 1e-6;

/// Dense per-pixel features, stored pixel-major: (H*W) x D.
struct FeatureMap {
    std::size_t height = 0;
    std::size_t width = 0;
    Matrix values;

    std::size_t dim() const { return values.cols(); }
};

enum class Branch { Gt, Predicted };

struct LocalFeatures {
    Matrix values;  // N_present x D
    std::vector<LesionClass> classes;
    Branch branch = Branch::Gt;
};

/// Two-layer perceptron D -> 2D -> D with a ReLU between the layers. Used for
/// both the image encoder and the text encoder.
struct EncoderParams {
    Matrix w1;  // D x 2D
    Matrix b1;  // 1 x 2D
    Matrix w2;  // 2D x D
    Matrix b2;  // 1 x D

    static EncoderParams init(std::size_t dim, Rng& rng);
    static EncoderParams zero(std::size_t dim);
    /// Hidden layer copies x and -x, output recombines them: exact identity.
    static EncoderParams passthrough(std::size_t dim);

    std::size_t dim() const { return w1.rows(); }

    struct Vars {
        Var w1, b1, w2, b2;
    };
    Vars bind(Tape& tape, bool trainable) const;

    template <typename F>
    void for_each(F&& f) {
        f("w1", w1);
        f("b1", b1);
        f("w2", w2);
        f("b2", b2);
    }
};

/// Area-normalized masked average: row c is sum_p mask(c,p) feat(p,:) / max(sum_p mask(c,p), eps).
/// `mask` is C x P, `feat` is P x D; only rows listed in `present` are pooled.
Var masked_pool(Var mask, Var feat, std::span<const std::size_t> present);
Matrix masked_pool(const Mask& mask, const FeatureMap& feat, std::span<const LesionClass> present);

Var encode(Var x, const EncoderParams::Vars& params);
LocalFeatures encode_local(const Matrix& pooled, const EncoderParams& params, std::vector<LesionClass> classes,
                           Branch branch);
Matrix encode_text(const Matrix& embedding, const EncoderParams& params);

/// mean over rows of (local * proj): one 1 x D global vector per sample.
Var global_project(Var local, Var proj);
Matrix global_project(const LocalFeatures& local, const Matrix& proj);

/// Classes whose channel has at least one set pixel, canonical order.
std::vector<LesionClass> present_classes(const Mask& mask);
std::vector<std::size_t> class_indices(std::span<const LesionClass> classes);

}  // namespace bivlgm
