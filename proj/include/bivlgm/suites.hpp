#pragma once

// Seeded verification suites shared by the command-line tool and the
// acceptance tests.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bivlgm/gradcheck.hpp"
#include "bivlgm/matching.hpp"

namespace bivlgm {

struct GradcheckCase {
    std::string name;
    double tolerance;
    std::function<DifferentiableProgram(std::uint64_t seed)> make;
};

/// Every loss composition, Dice, contrastive, the unrolled matching module and
/// the end-to-end segmenter path.
std::vector<GradcheckCase> gradcheck_cases();

struct GradcheckSummary {
    std::string name;
    std::size_t instances = 0;
    std::size_t passed = 0;
    double worst_error = 0.0;
    double tolerance = 0.0;
    std::size_t redrawn = 0;  // draws whose difference stencil crossed a kink

    bool ok() const { return passed == instances; }
};

/// Instances where some central-difference stencil crosses a relu, abs or
/// clamp breakpoint are redrawn, since the difference quotient is then not an
/// estimate of the derivative.
GradcheckSummary run_gradcheck_case(const GradcheckCase& c, std::uint64_t seed, std::size_t instances,
                                    double h = 1e-4);
std::vector<GradcheckSummary> run_gradcheck_suite(std::uint64_t seed, std::size_t instances, double h = 1e-4);

struct SinkhornBenchResult {
    std::size_t trials = 0;
    std::size_t converged = 0;  // final deviation below the tolerance
    double worst_deviation = 0.0;
    std::size_t max_iterations = 0;
    double mean_iterations = 0.0;
};

/// Random strictly positive matrices with sizes drawn from [min_size, max_size].
SinkhornBenchResult sinkhorn_bench(std::uint64_t seed, std::size_t trials, std::size_t min_size,
                                   std::size_t max_size, const SinkhornConfig& cfg);

struct MatchTrial {
    std::vector<std::size_t> permutation;  // target row of each source node
    std::vector<std::size_t> recovered;
    double recovery = 0.0;
};

/// Node features X and a permuted, noise-perturbed copy P X + e are turned into
/// graphs by one shared edge generator and matched with a pass-through GCN and
/// identity affinity. `noise` is relative to the feature scale.
MatchTrial permutation_trial(std::uint64_t seed, std::size_t nodes, std::size_t dim, double noise);

struct MatchDemoResult {
    std::size_t trials = 0;
    double mean_recovery = 0.0;
    double min_recovery = 1.0;
    std::size_t perfect = 0;
};

MatchDemoResult match_demo(std::uint64_t seed, std::size_t trials, std::size_t nodes, std::size_t dim,
                           double noise);

}  // namespace bivlgm
