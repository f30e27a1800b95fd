#include "bivlgm/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace bivlgm {

const Matrix& DifferentiableProgram::input(const std::string& name) const {
    auto it = inputs_.find(name);
    if (it == inputs_.end()) throw std::invalid_argument("unknown program input '" + name + "'");
    return it->second;
}

double DifferentiableProgram::evaluate(const std::map<std::string, Matrix>& inputs) const {
    Tape tape;
    VarMap vars;
    for (const auto& [name, value] : inputs) vars.emplace(name, tape.constant(value));
    return body_(tape, vars).item();
}

std::pair<double, std::uint64_t> DifferentiableProgram::evaluate_traced(
    const std::map<std::string, Matrix>& inputs) const {
    Tape tape;
    VarMap vars;
    for (const auto& [name, value] : inputs) vars.emplace(name, tape.constant(value));
    const double loss = body_(tape, vars).item();
    return {loss, tape.branch_signature()};
}

Matrix DifferentiableProgram::gradient(const std::string& name) const {
    input(name);
    Tape tape;
    VarMap vars;
    for (const auto& [n, value] : inputs_) {
        vars.emplace(n, n == name ? tape.variable(value) : tape.constant(value));
    }
    Var loss = body_(tape, vars);
    return tape.backward(loss).wrt(vars.at(name));
}

FiniteDiff finite_diff(const DifferentiableProgram& program, const std::string& name, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
    auto inputs = program.inputs();
    const std::uint64_t base = program.evaluate_traced(inputs).second;
    Matrix& x = inputs.at(name);
    FiniteDiff out{Matrix(x.rows(), x.cols()), false};
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const auto [up, up_sig] = program.evaluate_traced(inputs);
        x[i] = orig - h;
        const auto [down, down_sig] = program.evaluate_traced(inputs);
        x[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) throw NonFiniteLoss(name, i);
        out.grad[i] = (up - down) / (2.0 * h);
        out.crossed_kink = out.crossed_kink || up_sig != base || down_sig != base;
    }
    return out;
}

Matrix finite_diff_grad(const DifferentiableProgram& program, const std::string& name, double h) {
    return finite_diff(program, name, h).grad;
}

double gradient_relative_error(const Matrix& analytic, const Matrix& numeric) {
    require_same_shape(analytic, numeric, "gradient_relative_error");
    const double scale = std::max(frobenius_norm(analytic), frobenius_norm(numeric));
    if (scale < 1e-9) return 0.0;
    return frobenius_norm(analytic - numeric) / scale;
}

GradCheckResult check_gradient(const DifferentiableProgram& program, const std::string& name,
                               double h, double tolerance) {
    const Matrix analytic = program.gradient(name);
    const FiniteDiff fd = finite_diff(program, name, h);
    const Matrix& numeric = fd.grad;
    GradCheckResult r;
    r.input = name;
    r.crossed_kink = fd.crossed_kink;
    r.relative_error = gradient_relative_error(analytic, numeric);
    r.max_abs_error = max_abs(analytic - numeric);
    r.passed = std::isfinite(r.relative_error) && r.relative_error < tolerance;
    return r;
}

}  // namespace bivlgm
