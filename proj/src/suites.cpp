#include "bivlgm/suites.hpp"

#include <algorithm>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>

#include "bivlgm/graph.hpp"
#include "bivlgm/losses.hpp"
#include "bivlgm/pipeline.hpp"
#include "bivlgm/rng.hpp"

namespace bivlgm {

namespace {

constexpr std::size_t kWidth = 4;

Matrix random_edges(Rng& rng, std::size_t n) {
    Tape t;
    return row_softmax(t.constant(rng.normal_matrix(n, n))).value();
}

// Inputs of one word- or sentence-level matching problem, prefixed so two
// problems can share a program.
void add_matching_inputs(std::map<std::string, Matrix>& in, Rng& rng, std::size_t n, const std::string& prefix) {
    in.emplace(prefix + "vision", rng.normal_matrix(n, kWidth));
    in.emplace(prefix + "text", rng.normal_matrix(n, kWidth));
}

void add_level_params(std::map<std::string, Matrix>& in, Rng& rng) {
    const double b = 1.0 / std::sqrt(static_cast<double>(kWidth));
    for (const char* name : {"vq", "vk", "tq", "tk"}) in.emplace(name, rng.uniform_matrix(kWidth, kWidth, -b, b));
    in.emplace("gcn", rng.uniform_matrix(kWidth, kWidth, -b, b));
    in.emplace("aff", Matrix::identity(kWidth) + rng.uniform_matrix(kWidth, kWidth, -0.1, 0.1));
}

MatchedGraphs match(const VarMap& v, const std::string& prefix) {
    const GraphVar a = build_graph(v.at(prefix + "vision"), {v.at("vq"), v.at("vk")});
    const GraphVar b = build_graph(v.at(prefix + "text"), {v.at("tq"), v.at("tk")});
    const Var x = ais(a, b, v.at("gcn"), v.at("aff"), SinkhornConfig::differentiable());
    return {a.adjacency, b.adjacency, x};
}

// Correspondence for a batch whose first and last samples share a severity profile.
GtCorrespondence duplicate_profile_gt(std::size_t n) {
    Matrix g = Matrix::identity(n);
    if (n >= 3) g(0, n - 1) = g(n - 1, 0) = 1.0;
    return GtCorrespondence(std::move(g));
}

std::size_t draw_nodes(Rng& rng) { return 2 + static_cast<std::size_t>(rng.below(4)); }

DifferentiableProgram matching_program(std::uint64_t seed, bool predicted, bool duplicates) {
    Rng rng(seed);
    const std::size_t n = duplicates ? 3 + static_cast<std::size_t>(rng.below(3)) : draw_nodes(rng);
    std::map<std::string, Matrix> in;
    add_matching_inputs(in, rng, n, "");
    add_level_params(in, rng);
    const GtCorrespondence gt = duplicates ? duplicate_profile_gt(n) : GtCorrespondence(Matrix::identity(n));
    return DifferentiableProgram(std::move(in), [gt, predicted, duplicates](Tape&, const VarMap& v) {
        const MatchedGraphs m = match(v, "");
        if (duplicates) return predicted ? global_pred_loss(m, gt) : global_gt_loss(m, gt);
        return predicted ? local_pred_loss(m, gt) : local_gt_loss(m, gt);
    });
}

DifferentiableProgram ce_program(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t n = draw_nodes(rng);
    std::map<std::string, Matrix> in{{"pred", rng.uniform_matrix(n, n, 0.05, 0.95)}};
    const GtCorrespondence gt(Matrix::identity(n));
    return DifferentiableProgram(std::move(in), [gt](Tape&, const VarMap& v) { return ce_corr(v.at("pred"), gt); });
}

DifferentiableProgram qc_program(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t n = draw_nodes(rng);
    std::map<std::string, Matrix> in{{"edges_a", random_edges(rng, n)},
                                     {"edges_b", random_edges(rng, n)},
                                     {"pred", rng.uniform_matrix(n, n, 0.05, 0.95)}};
    return DifferentiableProgram(std::move(in), [](Tape&, const VarMap& v) {
        return qc(v.at("edges_a"), v.at("edges_b"), v.at("pred"));
    });
}

DifferentiableProgram encoder_program(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t n_local = draw_nodes(rng);
    const std::size_t n_global = 3 + static_cast<std::size_t>(rng.below(3));
    std::map<std::string, Matrix> in;
    add_matching_inputs(in, rng, n_local, "local_");
    add_matching_inputs(in, rng, n_global, "global_");
    add_level_params(in, rng);
    const GtCorrespondence local_gt(Matrix::identity(n_local));
    const GtCorrespondence global_gt = duplicate_profile_gt(n_global);
    return DifferentiableProgram(std::move(in), [=](Tape&, const VarMap& v) {
        return encoder_loss(local_gt_loss(match(v, "local_"), local_gt), global_gt_loss(match(v, "global_"), global_gt),
                            LossWeights{});
    });
}

Matrix random_binary_mask(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (auto& v : m.data()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    return m;
}

DifferentiableProgram generator_composition_program(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t n_local = draw_nodes(rng);
    const std::size_t n_global = 3 + static_cast<std::size_t>(rng.below(3));
    std::map<std::string, Matrix> in;
    add_matching_inputs(in, rng, n_local, "local_");
    add_matching_inputs(in, rng, n_global, "global_");
    add_level_params(in, rng);
    in.emplace("logits", rng.normal_matrix(kNumClasses, 12));
    const Matrix gt_mask = random_binary_mask(rng, kNumClasses, 12);
    const GtCorrespondence local_gt(Matrix::identity(n_local));
    const GtCorrespondence global_gt = duplicate_profile_gt(n_global);
    return DifferentiableProgram(std::move(in), [=](Tape&, const VarMap& v) {
        return generator_loss(dice_loss(sigmoid(v.at("logits")), gt_mask),
                              local_pred_loss(match(v, "local_"), local_gt),
                              global_pred_loss(match(v, "global_"), global_gt), LossWeights{});
    });
}

DifferentiableProgram dice_program(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t pixels = 4 + static_cast<std::size_t>(rng.below(13));
    std::map<std::string, Matrix> in{{"logits", rng.normal_matrix(kNumClasses, pixels)}};
    const Matrix gt = random_binary_mask(rng, kNumClasses, pixels);
    return DifferentiableProgram(std::move(in),
                                 [gt](Tape&, const VarMap& v) { return dice_loss(sigmoid(v.at("logits")), gt); });
}

DifferentiableProgram contrastive_program(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t n = draw_nodes(rng) + 1;
    std::map<std::string, Matrix> in{{"a", rng.normal_matrix(n, kWidth)}, {"b", rng.normal_matrix(n, kWidth)}};
    const GtCorrespondence pos = duplicate_profile_gt(n);
    return DifferentiableProgram(std::move(in), [pos](Tape&, const VarMap& v) {
        return contrastive_loss(v.at("a"), v.at("b"), pos, kDefaultTemperature);
    });
}

DifferentiableProgram ais_program(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t n = draw_nodes(rng);
    std::map<std::string, Matrix> in;
    add_matching_inputs(in, rng, n, "");
    add_level_params(in, rng);
    const Matrix weights = rng.normal_matrix(n, n);
    return DifferentiableProgram(std::move(in), [weights](Tape& t, const VarMap& v) {
        return sum(mul(match(v, "").correspondence, t.constant(weights)));
    });
}

DifferentiableProgram segmenter_program(std::uint64_t seed) {
    Rng rng(seed);
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.feature_dim = 8;
    cfg.batch_size = 1;
    // At least two lesion classes so the word-level graphs are non-trivial.
    SegSample sample;
    for (std::size_t attempt = 0;; ++attempt) {
        try {
            sample = gen_sample(derive_seed(seed, "sample" + std::to_string(attempt)), 16, 16, random_spec(rng));
            if (present_classes(sample.gt_mask).size() >= 2) break;
        } catch (const InfeasibleSpec&) {
        }
    }
    // A zero head bias keeps the soft mask away from saturation.
    ModelParams params = ModelParams::init(cfg.feature_dim, seed);
    for (auto& v : params.segmenter.head_bias.data()) v = 0.0;
    auto owned = std::make_shared<SegSample>(std::move(sample));
    auto prepared = std::make_shared<PreparedSample>(prepare(*owned, cfg.t1, cfg.t2));
    const TextInputs text(cfg.feature_dim, derive_seed(seed, "text"));
    const Batch batch = make_batch({prepared.get()}, cfg, rng);

    std::map<std::string, Matrix> in;
    params.segmenter.for_each([&](const char* name, Matrix& m) { in.emplace(name, m); });
    return DifferentiableProgram(std::move(in), [=, alignment = params.alignment](Tape& t, const VarMap& v) {
        // `batch` points into these; holding them keeps the sample alive.
        (void)owned;
        (void)prepared;
        const SegmenterParams::Vars seg{v.at("conv"), v.at("conv_bias"), v.at("mix"),
                                        v.at("mix_bias"), v.at("head"), v.at("head_bias")};
        return generator_objective(t, batch, seg, alignment, text, cfg, nullptr);
    });
}

}  // namespace

std::vector<GradcheckCase> gradcheck_cases() {
    return {
        {"ce_corr", 1e-3, ce_program},
        {"qc", 1e-3, qc_program},
        {"local_gt_loss", 1e-3, [](std::uint64_t s) { return matching_program(s, false, false); }},
        {"local_pred_loss", 1e-3, [](std::uint64_t s) { return matching_program(s, true, false); }},
        {"global_gt_loss", 1e-3, [](std::uint64_t s) { return matching_program(s, false, true); }},
        {"global_pred_loss", 1e-3, [](std::uint64_t s) { return matching_program(s, true, true); }},
        {"encoder_loss", 1e-3, encoder_program},
        {"generator_loss", 1e-3, generator_composition_program},
        {"dice", 1e-3, dice_program},
        {"contrastive", 1e-3, contrastive_program},
        {"ais_unrolled", 1e-3, ais_program},
        {"segmenter_end_to_end", 1e-2, segmenter_program},
    };
}

GradcheckSummary run_gradcheck_case(const GradcheckCase& c, std::uint64_t seed, std::size_t instances, double h) {
    GradcheckSummary s{c.name, instances, 0, 0.0, c.tolerance};
    constexpr std::size_t kMaxDraws = 50;
    for (std::size_t i = 0; i < instances; ++i) {
        std::vector<GradCheckResult> results;
        for (std::size_t draw = 0;; ++draw) {
            if (draw == kMaxDraws) throw std::runtime_error("gradcheck: every draw crossed a kink for " + c.name);
            const DifferentiableProgram program =
                c.make(derive_seed(seed, c.name + "#" + std::to_string(i) + "." + std::to_string(draw)));
            results.clear();
            bool crossed = false;
            for (const auto& [name, _] : program.inputs()) {
                results.push_back(check_gradient(program, name, h, c.tolerance));
                crossed = crossed || results.back().crossed_kink;
            }
            if (!crossed) break;
            ++s.redrawn;
        }
        bool all = true;
        for (const auto& r : results) {
            s.worst_error = std::max(s.worst_error, r.relative_error);
            all = all && r.passed;
        }
        if (all) ++s.passed;
    }
    return s;
}

std::vector<GradcheckSummary> run_gradcheck_suite(std::uint64_t seed, std::size_t instances, double h) {
    std::vector<GradcheckSummary> out;
    for (const auto& c : gradcheck_cases()) out.push_back(run_gradcheck_case(c, seed, instances, h));
    return out;
}

SinkhornBenchResult sinkhorn_bench(std::uint64_t seed, std::size_t trials, std::size_t min_size, std::size_t max_size,
                                   const SinkhornConfig& cfg) {
    if (min_size < 1 || max_size < min_size) throw std::invalid_argument("sinkhorn_bench: bad size range");
    Rng rng(derive_seed(seed, "sinkhorn-bench"));
    SinkhornBenchResult r;
    r.trials = trials;
    double total_iterations = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t n = min_size + static_cast<std::size_t>(rng.below(max_size - min_size + 1));
        const CorrespondenceMatrix c = sinkhorn(rng.uniform_matrix(n, n, 0.05, 2.0), cfg);
        r.worst_deviation = std::max(r.worst_deviation, c.deviation);
        r.max_iterations = std::max(r.max_iterations, c.iterations);
        total_iterations += static_cast<double>(c.iterations);
        if (c.deviation < cfg.tolerance) ++r.converged;
    }
    r.mean_iterations = trials ? total_iterations / static_cast<double>(trials) : 0.0;
    return r;
}

MatchTrial permutation_trial(std::uint64_t seed, std::size_t nodes, std::size_t dim, double noise) {
    if (nodes == 0 || dim == 0) throw std::invalid_argument("permutation_trial: empty problem");
    if (!(noise >= 0.0)) throw std::invalid_argument("permutation_trial: noise must be non-negative");
    Rng rng(seed);
    const Matrix x = rng.normal_matrix(nodes, dim);
    MatchTrial trial;
    trial.permutation.resize(nodes);
    std::iota(trial.permutation.begin(), trial.permutation.end(), 0);
    rng.shuffle(trial.permutation);
    Matrix y(nodes, dim);
    for (std::size_t i = 0; i < nodes; ++i) {
        for (std::size_t k = 0; k < dim; ++k) y(trial.permutation[i], k) = x(i, k) + noise * rng.normal();
    }
    const EdgeGeneratorParams edges = EdgeGeneratorParams::init(dim, rng);
    const CorrespondenceMatrix c = ais(build_graph(x, edges), build_graph(y, edges), GcnParams::zero(dim),
                                       AffinityParams::identity(dim), SinkhornConfig::forward_only());
    trial.recovered = row_argmax(c.values);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < nodes; ++i) hits += trial.recovered[i] == trial.permutation[i] ? 1 : 0;
    trial.recovery = static_cast<double>(hits) / static_cast<double>(nodes);
    return trial;
}

MatchDemoResult match_demo(std::uint64_t seed, std::size_t trials, std::size_t nodes, std::size_t dim, double noise) {
    MatchDemoResult r;
    r.trials = trials;
    double total = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        const MatchTrial m = permutation_trial(derive_seed(seed, "match#" + std::to_string(t)), nodes, dim, noise);
        total += m.recovery;
        r.min_recovery = std::min(r.min_recovery, m.recovery);
        if (m.recovery == 1.0) ++r.perfect;
    }
    r.mean_recovery = trials ? total / static_cast<double>(trials) : 0.0;
    return r;
}

}  // namespace bivlgm
