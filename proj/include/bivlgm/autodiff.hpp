#pragma once

// Reverse-mode differentiation over dense matrices.
//
// A Tape records every operation applied to its Vars. Calling
// Tape::backward on a 1x1 Var returns the partial derivatives of that scalar
// with respect to every recorded node. Binary elementwise ops broadcast their
// second operand when it is 1x1, Nx1 or 1xM.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "bivlgm/matrix.hpp"

namespace bivlgm {

class Tape;

class Var {
public:
    Var() = default;

    const Matrix& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    double item() const;

    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Gradients {
public:
    explicit Gradients(std::vector<std::optional<Matrix>> grads, const Tape* tape)
        : grads_(std::move(grads)), tape_(tape) {}

    /// Gradient with respect to a leaf v; a zero matrix when v does not
    /// influence the output.
    Matrix wrt(Var v) const;

private:
    std::vector<std::optional<Matrix>> grads_;
    const Tape* tape_;
};

/// Context handed to an operation's adjoint during the backward sweep.
class AdjointContext {
public:
    AdjointContext(const Matrix& grad, const Matrix& out, std::span<const Matrix* const> inputs,
                   std::span<const char> wants, std::span<std::optional<Matrix>*> sinks)
        : grad_(grad), out_(out), inputs_(inputs), wants_(wants), sinks_(sinks) {}

    const Matrix& grad() const { return grad_; }
    const Matrix& out() const { return out_; }
    const Matrix& in(std::size_t k) const { return *inputs_[k]; }
    bool wants(std::size_t k) const { return wants_[k] != 0; }
    void add(std::size_t k, const Matrix& g);

private:
    const Matrix& grad_;
    const Matrix& out_;
    std::span<const Matrix* const> inputs_;
    std::span<const char> wants_;
    std::span<std::optional<Matrix>*> sinks_;
};

using AdjointFn = std::function<void(AdjointContext&)>;

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    Var variable(Matrix value);

    /// Records a new node. `adjoint` receives dL/d(out) and adds dL/d(input k)
    /// for each parent it is asked for.
    Var record(Matrix value, std::vector<Var> parents, AdjointFn adjoint);

    Gradients backward(Var output) const;

    const Matrix& value(std::size_t id) const { return nodes_[id].value; }

    /// Hash of which side of its breakpoints every relu/abs/clamp input fell
    /// on. Two evaluations with equal signatures lie in the same smooth piece.
    std::uint64_t branch_signature() const { return branch_signature_; }
    void note_branch(unsigned side) { branch_signature_ = (branch_signature_ ^ side) * 0x100000001b3ULL; }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        std::vector<std::size_t> parents;
        AdjointFn adjoint;
        bool needs_grad = false;
    };
    std::vector<Node> nodes_;
    std::uint64_t branch_signature_ = 0xcbf29ce484222325ULL;
};

// Elementwise with broadcasting of `b`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var add_scalar(Var a, double c);
Var scale(Var a, double c);
Var neg(Var a);
/// c - a
Var rsub(double c, Var a);

Var matmul(Var a, Var b);
Var transpose(Var a);

Var exp(Var a);
Var log(Var a);
Var relu(Var a);
Var abs(Var a);
Var sqrt(Var a);
Var square(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
/// Gradient is passed through only where lo < a < hi.
Var clamp(Var a, double lo, double hi);
Var clamp_min(Var a, double lo);

Var sum(Var a);
Var mean(Var a);
Var row_sum(Var a);
Var col_sum(Var a);
/// 1xM vector of column means.
Var mean_rows(Var a);

Var row_softmax(Var a);
Var row_log_softmax(Var a);
/// Each row divided by its sum.
Var row_normalize(Var a);
/// Each column divided by its sum.
Var col_normalize(Var a);
/// Each row divided by its Euclidean norm (floored at eps).
Var row_l2_normalize(Var a, double eps = 1e-12);

Var select_rows(Var a, std::span<const std::size_t> rows);
Var vstack(std::span<const Var> parts);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator*(Var a, double c) { return scale(a, c); }

}  // namespace bivlgm
