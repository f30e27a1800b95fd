#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>

#include "bivlgm/autodiff.hpp"
#include "bivlgm/matrix.hpp"

namespace bivlgm {

/// Inputs as they appear on the tape, keyed by name.
using VarMap = std::map<std::string, Var>;

/// A scalar loss over named matrix inputs. Every evaluation builds a fresh
/// tape, so the program can be re-run with perturbed inputs.
class DifferentiableProgram {
public:
    using Body = std::function<Var(Tape&, const VarMap&)>;

    DifferentiableProgram(std::map<std::string, Matrix> inputs, Body body)
        : inputs_(std::move(inputs)), body_(std::move(body)) {}

    const std::map<std::string, Matrix>& inputs() const { return inputs_; }
    const Matrix& input(const std::string& name) const;

    double evaluate() const { return evaluate(inputs_); }
    double evaluate(const std::map<std::string, Matrix>& inputs) const;

    /// Exact partial derivatives of the loss with respect to `name`.
    Matrix gradient(const std::string& name) const;
    /// Loss together with the tape's branch signature.
    std::pair<double, std::uint64_t> evaluate_traced(const std::map<std::string, Matrix>& inputs) const;

private:
    std::map<std::string, Matrix> inputs_;
    Body body_;
};

class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(const std::string& input, std::size_t entry)
        : std::runtime_error("non-finite loss while perturbing entry " + std::to_string(entry) +
                             " of input '" + input + "'"),
          input_name(input),
          entry_index(entry) {}

    std::string input_name;
    std::size_t entry_index;
};

/// Central-difference estimate (L(x+h) - L(x-h)) / 2h for every entry of `name`.
Matrix finite_diff_grad(const DifferentiableProgram& program, const std::string& name, double h);

struct FiniteDiff {
    Matrix grad;
    /// Some stencil point x +- h e_i fell on a different side of a relu, abs
    /// or clamp breakpoint than x, so the difference quotient spans a kink.
    bool crossed_kink = false;
};

FiniteDiff finite_diff(const DifferentiableProgram& program, const std::string& name, double h);

struct GradCheckResult {
    std::string input;
    double relative_error = 0.0;
    double max_abs_error = 0.0;
    bool passed = false;
    bool crossed_kink = false;
};

/// ||analytic - numeric|| / max(||analytic||, ||numeric||). Both gradients
/// vanishing (norm below 1e-9) counts as agreement.
double gradient_relative_error(const Matrix& analytic, const Matrix& numeric);

GradCheckResult check_gradient(const DifferentiableProgram& program, const std::string& name,
                               double h, double tolerance);

}  // namespace bivlgm
