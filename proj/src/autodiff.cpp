#include "bivlgm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bivlgm {

const Matrix& Var::value() const {
    if (!tape_) throw std::logic_error("Var is not attached to a tape");
    return tape_->value(id_);
}

double Var::item() const {
    const Matrix& v = value();
    if (v.size() != 1) throw ShapeError("item() requires a 1x1 value, got " + v.shape_string());
    return v[0];
}

Matrix Gradients::wrt(Var v) const {
    if (v.id() < grads_.size() && grads_[v.id()]) return *grads_[v.id()];
    const Matrix& val = tape_->value(v.id());
    return Matrix(val.rows(), val.cols());
}

void AdjointContext::add(std::size_t k, const Matrix& g) {
    if (!wants_[k]) return;
    auto& slot = *sinks_[k];
    if (slot) {
        *slot += g;
    } else {
        slot = g;
    }
}

Var Tape::constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, {}, false});
    return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, {}, true});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::vector<Var> parents, AdjointFn adjoint) {
    Node node{std::move(value), {}, std::move(adjoint), false};
    node.parents.reserve(parents.size());
    for (const Var& p : parents) {
        if (&p.tape() != this) throw std::logic_error("operands live on different tapes");
        node.parents.push_back(p.id());
        node.needs_grad = node.needs_grad || nodes_[p.id()].needs_grad;
    }
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var output) const {
    if (&output.tape() != this) throw std::logic_error("output belongs to another tape");
    const Matrix& out = nodes_[output.id()].value;
    if (out.size() != 1) throw ShapeError("backward requires a scalar output, got " + out.shape_string());

    std::vector<std::optional<Matrix>> grads(output.id() + 1);
    grads[output.id()] = Matrix::scalar(1.0);

    std::vector<const Matrix*> inputs;
    std::vector<char> wants_storage;
    std::vector<std::optional<Matrix>*> sinks;
    for (std::size_t i = output.id() + 1; i-- > 0;) {
        const Node& node = nodes_[i];
        if (!grads[i] || !node.needs_grad || !node.adjoint) continue;
        inputs.clear();
        wants_storage.clear();
        sinks.clear();
        for (std::size_t p : node.parents) {
            inputs.push_back(&nodes_[p].value);
            wants_storage.push_back(nodes_[p].needs_grad ? 1 : 0);
            sinks.push_back(&grads[p]);
        }
        AdjointContext ctx(*grads[i], node.value, inputs, wants_storage, sinks);
        node.adjoint(ctx);
        // Only leaf gradients are retained.
        if (!nodes_[i].parents.empty()) grads[i].reset();
    }
    return Gradients(std::move(grads), this);
}

namespace {

enum class Broadcast { Same, Scalar, Column, Row };

Broadcast broadcast_kind(const Matrix& a, const Matrix& b, const char* op) {
    if (a.same_shape(b)) return Broadcast::Same;
    if (b.rows() == 1 && b.cols() == 1) return Broadcast::Scalar;
    if (b.rows() == a.rows() && b.cols() == 1) return Broadcast::Column;
    if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
    throw ShapeError(std::string(op) + ": cannot broadcast " + b.shape_string() + " onto " +
                     a.shape_string());
}

inline double bval(const Matrix& b, Broadcast k, std::size_t i, std::size_t j) {
    switch (k) {
        case Broadcast::Same: return b(i, j);
        case Broadcast::Scalar: return b[0];
        case Broadcast::Column: return b(i, 0);
        case Broadcast::Row: return b(0, j);
    }
    return 0.0;
}

// Sums a full-shape gradient down to the broadcast operand's shape.
Matrix reduce_to(const Matrix& g, const Matrix& b, Broadcast k) {
    if (k == Broadcast::Same) return g;
    Matrix out(b.rows(), b.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < g.cols(); ++j) {
            const double v = g(i, j);
            switch (k) {
                case Broadcast::Scalar: out[0] += v; break;
                case Broadcast::Column: out(i, 0) += v; break;
                case Broadcast::Row: out(0, j) += v; break;
                case Broadcast::Same: break;
            }
        }
    }
    return out;
}

template <typename F>
Matrix elementwise(const Matrix& a, const Matrix& b, Broadcast k, F f) {
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = f(a(i, j), bval(b, k, i, j));
    return out;
}

template <typename F>
Matrix map(const Matrix& a, F f) {
    Matrix out = a;
    for (auto& v : out.data()) v = f(v);
    return out;
}

// Unary op whose derivative depends on the input x and output y.
template <typename Fwd, typename Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
    Matrix value = map(a.value(), fwd);
    return a.tape().record(std::move(value), {a}, [deriv](AdjointContext& c) {
        const Matrix& x = c.in(0);
        const Matrix& y = c.out();
        Matrix g = c.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= deriv(x[i], y[i]);
        c.add(0, g);
    });
}

}  // namespace

Var add(Var a, Var b) {
    const auto k = broadcast_kind(a.value(), b.value(), "add");
    Matrix v = elementwise(a.value(), b.value(), k, [](double x, double y) { return x + y; });
    return a.tape().record(std::move(v), {a, b}, [k](AdjointContext& c) {
        c.add(0, c.grad());
        if (c.wants(1)) c.add(1, reduce_to(c.grad(), c.in(1), k));
    });
}

Var sub(Var a, Var b) {
    const auto k = broadcast_kind(a.value(), b.value(), "sub");
    Matrix v = elementwise(a.value(), b.value(), k, [](double x, double y) { return x - y; });
    return a.tape().record(std::move(v), {a, b}, [k](AdjointContext& c) {
        c.add(0, c.grad());
        if (c.wants(1)) c.add(1, reduce_to(c.grad() * -1.0, c.in(1), k));
    });
}

Var mul(Var a, Var b) {
    const auto k = broadcast_kind(a.value(), b.value(), "mul");
    Matrix v = elementwise(a.value(), b.value(), k, [](double x, double y) { return x * y; });
    return a.tape().record(std::move(v), {a, b}, [k](AdjointContext& c) {
        const Matrix& x = c.in(0);
        const Matrix& y = c.in(1);
        if (c.wants(0)) {
            Matrix g = c.grad();
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) *= bval(y, k, i, j);
            c.add(0, g);
        }
        if (c.wants(1)) c.add(1, reduce_to(hadamard(c.grad(), x), y, k));
    });
}

Var div(Var a, Var b) {
    const auto k = broadcast_kind(a.value(), b.value(), "div");
    Matrix v = elementwise(a.value(), b.value(), k, [](double x, double y) { return x / y; });
    return a.tape().record(std::move(v), {a, b}, [k](AdjointContext& c) {
        const Matrix& y = c.in(1);
        const Matrix& out = c.out();
        if (c.wants(0)) {
            Matrix g = c.grad();
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) /= bval(y, k, i, j);
            c.add(0, g);
        }
        if (c.wants(1)) {
            // d(x/y)/dy = -out / y
            Matrix g = c.grad();
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) *= -out(i, j) / bval(y, k, i, j);
            c.add(1, reduce_to(g, y, k));
        }
    });
}

Var add_scalar(Var a, double s) {
    return a.tape().record(map(a.value(), [s](double x) { return x + s; }), {a},
                           [](AdjointContext& c) { c.add(0, c.grad()); });
}

Var scale(Var a, double s) {
    return a.tape().record(a.value() * s, {a},
                           [s](AdjointContext& c) { c.add(0, c.grad() * s); });
}

Var neg(Var a) { return scale(a, -1.0); }

Var rsub(double s, Var a) { return add_scalar(neg(a), s); }

Var matmul(Var a, Var b) {
    Matrix v = matmul(a.value(), b.value());
    return a.tape().record(std::move(v), {a, b}, [](AdjointContext& c) {
        if (c.wants(0)) c.add(0, matmul_nt(c.grad(), c.in(1)));
        if (c.wants(1)) c.add(1, matmul_tn(c.in(0), c.grad()));
    });
}

Var transpose(Var a) {
    return a.tape().record(transpose(a.value()), {a},
                           [](AdjointContext& c) { c.add(0, transpose(c.grad())); });
}

Var exp(Var a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

namespace {

void note_kinks(Var a, std::initializer_list<double> points) {
    Tape& t = a.tape();
    for (double x : a.value().data())
        for (double p : points) t.note_branch(x > p ? 1u : (x < p ? 2u : 3u));
}

}  // namespace

Var relu(Var a) {
    note_kinks(a, {0.0});
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var abs(Var a) {
    note_kinks(a, {0.0});
    return unary(a, [](double x) { return std::abs(x); },
                 [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var sqrt(Var a) {
    return unary(a, [](double x) { return std::sqrt(x); },
                 [](double, double y) { return 0.5 / y; });
}

Var square(Var a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sigmoid(Var a) {
    return unary(
        a,
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var clamp(Var a, double lo, double hi) {
    note_kinks(a, {lo, hi});
    return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
                 [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var clamp_min(Var a, double lo) {
    note_kinks(a, {lo});
    return unary(a, [lo](double x) { return std::max(x, lo); },
                 [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

Var sum(Var a) {
    return a.tape().record(Matrix::scalar(sum(a.value())), {a}, [](AdjointContext& c) {
        const Matrix& x = c.in(0);
        c.add(0, Matrix(x.rows(), x.cols(), c.grad()[0]));
    });
}

Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

Var row_sum(Var a) {
    Matrix v(a.rows(), 1, row_sums(a.value()));
    return a.tape().record(std::move(v), {a}, [](AdjointContext& c) {
        const Matrix& x = c.in(0);
        Matrix g(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) g(i, j) = c.grad()(i, 0);
        c.add(0, g);
    });
}

Var col_sum(Var a) {
    Matrix v(1, a.cols(), col_sums(a.value()));
    return a.tape().record(std::move(v), {a}, [](AdjointContext& c) {
        const Matrix& x = c.in(0);
        Matrix g(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) g(i, j) = c.grad()(0, j);
        c.add(0, g);
    });
}

Var mean_rows(Var a) { return scale(col_sum(a), 1.0 / static_cast<double>(a.rows())); }

Var row_softmax(Var a) {
    return a.tape().record(row_softmax(a.value()), {a}, [](AdjointContext& c) {
        const Matrix& y = c.out();
        const Matrix& g = c.grad();
        Matrix dx(y.rows(), y.cols());
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
            for (std::size_t j = 0; j < y.cols(); ++j) dx(i, j) = y(i, j) * (g(i, j) - dot);
        }
        c.add(0, dx);
    });
}

Var row_log_softmax(Var a) {
    const Matrix& x = a.value();
    Matrix v(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto r = x.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double z = 0.0;
        for (double e : r) z += std::exp(e - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < x.cols(); ++j) v(i, j) = x(i, j) - lse;
    }
    return a.tape().record(std::move(v), {a}, [](AdjointContext& c) {
        const Matrix& y = c.out();
        const Matrix& g = c.grad();
        Matrix dx(y.rows(), y.cols());
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double gs = 0.0;
            for (std::size_t j = 0; j < y.cols(); ++j) gs += g(i, j);
            for (std::size_t j = 0; j < y.cols(); ++j) dx(i, j) = g(i, j) - std::exp(y(i, j)) * gs;
        }
        c.add(0, dx);
    });
}

Var row_normalize(Var a) { return div(a, row_sum(a)); }

Var col_normalize(Var a) { return div(a, col_sum(a)); }

Var row_l2_normalize(Var a, double eps) {
    return div(a, sqrt(clamp_min(row_sum(square(a)), eps * eps)));
}

Var select_rows(Var a, std::span<const std::size_t> rows) {
    const Matrix& x = a.value();
    if (rows.empty()) throw ShapeError("select_rows: empty row set");
    Matrix v(rows.size(), x.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= x.rows()) throw ShapeError("select_rows: row index out of range");
        std::copy(x.row(rows[r]).begin(), x.row(rows[r]).end(), v.row(r).begin());
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return a.tape().record(std::move(v), {a}, [idx](AdjointContext& c) {
        const Matrix& x = c.in(0);
        Matrix g(x.rows(), x.cols());
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t j = 0; j < x.cols(); ++j) g(idx[r], j) += c.grad()(r, j);
        c.add(0, g);
    });
}

Var vstack(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("vstack: no parts");
    const std::size_t cols = parts[0].cols();
    std::size_t rows = 0;
    for (const Var& p : parts) {
        if (p.cols() != cols) {
            throw ShapeError("vstack: column mismatch " + parts[0].value().shape_string() + " vs " +
                             p.value().shape_string());
        }
        rows += p.rows();
    }
    Matrix v(rows, cols);
    std::vector<std::size_t> offsets;
    std::size_t r0 = 0;
    for (const Var& p : parts) {
        offsets.push_back(r0);
        const Matrix& x = p.value();
        std::copy(x.data().begin(), x.data().end(), v.data().begin() + static_cast<std::ptrdiff_t>(r0 * cols));
        r0 += x.rows();
    }
    std::vector<Var> parents(parts.begin(), parts.end());
    return parts[0].tape().record(std::move(v), parents, [offsets](AdjointContext& c) {
        const Matrix& g = c.grad();
        for (std::size_t k = 0; k < offsets.size(); ++k) {
            if (!c.wants(k)) continue;
            const Matrix& x = c.in(k);
            Matrix part(x.rows(), x.cols());
            for (std::size_t i = 0; i < x.rows(); ++i)
                for (std::size_t j = 0; j < x.cols(); ++j) part(i, j) = g(offsets[k] + i, j);
            c.add(k, part);
        }
    });
}

}  // namespace bivlgm
