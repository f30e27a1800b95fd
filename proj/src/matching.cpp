#include "bivlgm/matching.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bivlgm {

namespace {

constexpr double kVarianceFloor = 1e-12;

void check_affinity_shapes(const Matrix& a, const Matrix& b, const Matrix& m) {
    if (a.cols() != b.cols()) {
        throw ShapeError("affinity: node widths differ, " + a.shape_string() + " vs " +
                         b.shape_string());
    }
    if (m.rows() != a.cols() || m.cols() != b.cols()) {
        throw ShapeError("affinity: bilinear " + m.shape_string() + " does not match width " +
                         std::to_string(a.cols()));
    }
}

void check_sinkhorn_input(const Matrix& k) {
    if (k.rows() != k.cols()) {
        throw ShapeError("sinkhorn: square input required, got " + k.shape_string());
    }
    for (std::size_t i = 0; i < k.size(); ++i) {
        if (!(k[i] > 0.0) || !std::isfinite(k[i])) {
            throw std::invalid_argument("sinkhorn: entry " + std::to_string(i) +
                                        " is not strictly positive; apply positive_normalize first");
        }
    }
}

}  // namespace

AffinityParams AffinityParams::init(std::size_t dim, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    Matrix m = Matrix::identity(dim) + rng.uniform_matrix(dim, dim, -bound, bound) * 0.1;
    return {std::move(m)};
}

void SinkhornConfig::validate() const {
    if (max_iterations < 1) throw std::invalid_argument("sinkhorn: max_iterations must be >= 1");
    if (!(tolerance > 0.0)) throw std::invalid_argument("sinkhorn: tolerance must be positive");
}

Matrix affinity(const Matrix& a_nodes, const Matrix& b_nodes, const AffinityParams& params) {
    check_affinity_shapes(a_nodes, b_nodes, params.bilinear);
    return matmul(matmul(a_nodes, params.bilinear), transpose(b_nodes));
}

Var affinity(Var a_nodes, Var b_nodes, Var bilinear) {
    check_affinity_shapes(a_nodes.value(), b_nodes.value(), bilinear.value());
    return matmul(matmul(a_nodes, bilinear), transpose(b_nodes));
}

Matrix positive_normalize(const Matrix& s) {
    const double mu = mean(s);
    double var = 0.0;
    for (double v : s.data()) var += (v - mu) * (v - mu);
    var /= static_cast<double>(s.size());
    const double sd = std::sqrt(std::max(var, kVarianceFloor));
    Matrix out = s;
    for (auto& v : out.data()) v = std::exp((v - mu) / sd);
    return out;
}

Var positive_normalize(Var s) {
    Var centered = sub(s, mean(s));
    // A single entry has no spread; skip the floor so no clamp is recorded.
    if (s.value().size() == 1) return exp(centered);
    Var sd = sqrt(clamp_min(mean(square(centered)), kVarianceFloor));
    return exp(div(centered, sd));
}

CorrespondenceMatrix sinkhorn(const Matrix& k, const SinkhornConfig& config) {
    config.validate();
    check_sinkhorn_input(k);
    CorrespondenceMatrix out{k, 0, doubly_stochastic_deviation(k), {}};
    Matrix& x = out.values;
    for (std::size_t it = 0; it < config.max_iterations; ++it) {
        const auto rs = row_sums(x);
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) /= rs[i];
        const auto cs = col_sums(x);
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) /= cs[j];
        out.iterations = it + 1;
        out.deviation = doubly_stochastic_deviation(x);
        out.deviation_trace.push_back(out.deviation);
        if (out.deviation < config.tolerance) break;
    }
    return out;
}

Var sinkhorn(Var k, std::size_t iterations) {
    check_sinkhorn_input(k.value());
    if (iterations < 1) throw std::invalid_argument("sinkhorn: at least one iteration required");
    Var x = k;
    for (std::size_t it = 0; it < iterations; ++it) x = col_normalize(row_normalize(x));
    return x;
}

namespace {

void check_node_counts(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw ShapeError("ais: node counts differ, " + a.shape_string() + " vs " + b.shape_string());
    }
}

}  // namespace

CorrespondenceMatrix ais(const Graph& graph_a, const Graph& graph_b, const GcnParams& gcn,
                         const AffinityParams& aff, const SinkhornConfig& config) {
    check_node_counts(graph_a.nodes, graph_b.nodes);
    const Matrix ea = gcn_embed(graph_a, gcn);
    const Matrix eb = gcn_embed(graph_b, gcn);
    return sinkhorn(positive_normalize(affinity(ea, eb, aff)), config);
}

Var ais(const GraphVar& graph_a, const GraphVar& graph_b, Var gcn_weight, Var bilinear,
        const SinkhornConfig& config) {
    check_node_counts(graph_a.nodes.value(), graph_b.nodes.value());
    config.validate();
    Var ea = gcn_embed(graph_a, gcn_weight);
    Var eb = gcn_embed(graph_b, gcn_weight);
    return sinkhorn(positive_normalize(affinity(ea, eb, bilinear)), config.max_iterations);
}

std::vector<std::size_t> row_argmax(const Matrix& m) {
    std::vector<std::size_t> out(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto r = m.row(i);
        out[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    }
    return out;
}

}  // namespace bivlgm
