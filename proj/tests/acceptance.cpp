// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failing criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "bivlgm/cli.hpp"
#include "bivlgm/losses.hpp"
#include "bivlgm/matching.hpp"
#include "bivlgm/metrics.hpp"
#include "bivlgm/pipeline.hpp"
#include "bivlgm/prompts.hpp"
#include "bivlgm/suites.hpp"
#include "oracles.hpp"

using namespace bivlgm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Outcome sinkhorn_correctness() {
    Stopwatch clock;
    const auto bench = sinkhorn_bench(1, 100, 2, 16, SinkhornConfig::forward_only());
    const auto limit = oracle::sinkhorn_sweeps({{2, 1}, {1, 1}}, 100000);
    const auto c = sinkhorn(Matrix{{2, 1}, {1, 1}}, SinkhornConfig::forward_only());
    double err = 0.0;
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) err = std::max(err, std::abs(c.values(i, j) - limit[i][j]));
    const double t = clock.seconds();
    Outcome o;
    o.pass = bench.converged == 100 && bench.worst_deviation < 1e-6 && err < 1e-6 && t < 1.0;
    o.detail = std::to_string(bench.converged) + "/100 doubly stochastic, worst deviation " +
               fmt("%.2e", bench.worst_deviation) + ", 2x2 error " + fmt("%.2e", err) + ", " + fmt("%.3f", t) + " s";
    return o;
}

Outcome permutation_recovery() {
    Stopwatch clock;
    const auto r = match_demo(1, 100, 8, 16, 0.01);
    const double t = clock.seconds();
    return {r.mean_recovery >= 0.95 && t < 10.0,
            "mean recovery " + fmt("%.4f", r.mean_recovery) + ", " + std::to_string(r.perfect) + "/100 perfect, " +
                fmt("%.2f", t) + " s"};
}

Outcome loss_identities() {
    Rng rng(1);
    double worst_qc = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng.below(7);
        const Matrix x = rng.normal_matrix(n, 6);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        const Matrix p = permutation_matrix(perm);
        const auto edges = EdgeGeneratorParams::init(6, rng);
        // Graph b is built from the permuted nodes by the same generator.
        const Matrix ea = generate_edges(x, edges);
        const Matrix eb = generate_edges(matmul(transpose(p), x), edges);
        worst_qc = std::max(worst_qc, qc(ea, eb, p));
    }
    const GtCorrespondence i2(Matrix::identity(2));
    double ce_self = 0.0;
    for (std::size_t n = 1; n <= 6; ++n) {
        Matrix g(n, n);
        for (std::size_t i = 0; i < n; ++i) g(i, (i + 1) % n) = 1.0;
        ce_self = std::max(ce_self, ce_corr(g, GtCorrespondence(g)));
    }
    Matrix dp(1, 6), dg(1, 6);
    for (std::size_t j : {0, 1, 2, 3}) dp(0, j) = 1.0;
    for (std::size_t j : {2, 3, 4, 5}) dg(0, j) = 1.0;
    const double e_ce = std::abs(ce_corr(Matrix{{0.8, 0.2}, {0.2, 0.8}}, i2) + 4.0 * std::log(0.8));
    const double e_qc = std::abs(qc(Matrix{{0.6, 0.4}, {0.3, 0.7}}, Matrix{{0.5, 0.5}, {0.2, 0.8}}, Matrix::identity(2)) - 0.1);
    const double e_dice = std::abs(dice_loss(dp, dg) - 4.0 / 9.0);
    const double hand = std::max({e_ce, e_qc, e_dice});
    return {worst_qc <= 1e-10 && ce_self <= 1e-5 && hand <= 1e-9,
            "qc on permuted pairs " + fmt("%.2e", worst_qc) + ", ce(gt,gt) " + fmt("%.2e", ce_self) +
                ", hand values max error " + fmt("%.2e", hand)};
}

Outcome gradient_oracle() {
    Stopwatch clock;
    const auto suite = run_gradcheck_suite(7, 50);
    const double t = clock.seconds();
    bool all = true;
    std::string worst;
    double worst_ratio = 0.0;
    std::size_t redrawn = 0;
    for (const auto& s : suite) {
        all = all && s.ok();
        redrawn += s.redrawn;
        if (s.worst_error / s.tolerance >= worst_ratio) {
            worst_ratio = s.worst_error / s.tolerance;
            worst = s.name + " " + fmt("%.2e", s.worst_error) + " (tol " + fmt("%.0e", s.tolerance) + ")";
        }
        if (!s.ok()) worst = s.name + " failed " + std::to_string(s.instances - s.passed) + " instances";
    }
    return {all && t < 60.0, std::to_string(suite.size()) + " checks x 50 instances, worst " + worst + ", " +
                                 std::to_string(redrawn) + " kink redraws, " + fmt("%.1f", t) + " s"};
}

Outcome prompt_goldens() {
    std::vector<std::string> failures;
    const auto check = [&](const std::string& got, const std::string& want) {
        if (got != want) failures.push_back("got \"" + got + "\" want \"" + want + "\"");
    };
    GroupChoice g{AdjectiveGroup::Amount, AdjectiveGroup::Amount, AdjectiveGroup::Amount, AdjectiveGroup::Amount};
    GroupChoice worked = g;
    worked[index_of(LesionClass::EX)] = AdjectiveGroup::Density;
    worked[index_of(LesionClass::HE)] = AdjectiveGroup::Severity;
    check(severity_prompt(SeverityProfile{{LesionClass::EX, SeverityLevel::Low}, {LesionClass::HE, SeverityLevel::High}},
                          1, worked)
              .text,
          "This fundus image has low-density hard exudates and high-severity hemorrhages.");

    const SeverityProfile se{{LesionClass::SE, SeverityLevel::Mid}};
    const char* templates[] = {
        "This fundus image has some soft exudates.",
        "There are some soft exudates in this fundus image.",
        "A fundus image with some soft exudates.",
        "A diabetic retinopathy image has some soft exudates.",
        "some soft exudates in a diabetic retinopathy fundus image.",
    };
    for (int t = 1; t <= 5; ++t) check(severity_prompt(se, t, g).text, templates[t - 1]);

    Mask m(100, 100);
    for (std::size_t p = 0; p < 600; ++p) m.values(index_of(LesionClass::EX), p) = 1.0;
    for (std::size_t p = 0; p < 1200; ++p) m.values(index_of(LesionClass::HE), p) = 1.0;
    check(std::string(level_name(severity_level(lesion_ratio(m, LesionClass::EX)))),
          std::string(level_name(SeverityLevel::Mid)));
    check(std::string(level_name(severity_level(lesion_ratio(m, LesionClass::HE)))),
          std::string(level_name(SeverityLevel::High)));
    check(severity_prompt(m, 1, g).text, "This fundus image has some hard exudates and many hemorrhages.");

    const char* words[3][3] = {{"few", "some", "many"},
                               {"low-density", "medium-density", "high-density"},
                               {"low-severity", "medium-severity", "high-severity"}};
    for (int grp = 0; grp < 3; ++grp) {
        for (int lvl = 0; lvl < 3; ++lvl) {
            const auto a = static_cast<AdjectiveGroup>(grp);
            check(severity_prompt(SeverityProfile{{LesionClass::MA, static_cast<SeverityLevel>(lvl)}}, 1,
                                  GroupChoice{a, a, a, a})
                      .text,
                  std::string("This fundus image has ") + words[grp][lvl] + " microaneurysms.");
        }
    }

    std::ostringstream out, err;
    bivlgm::cli::run({"bivlgm", "prompt", "--spec", "EX:high", "--template", "1", "--group", "EX=severity"}, out, err);
    check(out.str(), "This fundus image has high-severity hard exudates.\n");

    Outcome o;
    o.pass = failures.empty();
    o.detail = o.pass ? "worked example, 5 templates, 2 boundaries, 9 adjectives and the CLI example match"
                      : failures.front();
    return o;
}

struct PairedRuns {
    std::vector<RunManifest> full, dice, contrastive;
    double ablation_seconds = 0.0;
};

PairedRuns run_suite() {
    PairedRuns r;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        TrainConfig cfg;
        cfg.seed = seed;
        const Dataset data = Dataset::synthetic(cfg);
        Stopwatch clock;
        cfg.losses = LossMode::Full;
        r.full.push_back(train(data, cfg).manifest);
        cfg.losses = LossMode::Dice;
        r.dice.push_back(train(data, cfg).manifest);
        r.ablation_seconds += clock.seconds();
        cfg.losses = LossMode::Contrastive;
        r.contrastive.push_back(train(data, cfg).manifest);
        std::printf("  seed %llu: full mIoU %.4f, dice mIoU %.4f, distortion vlgm %.4f vs contrastive %.4f\n",
                    static_cast<unsigned long long>(seed), r.full.back().final_metrics.miou,
                    r.dice.back().final_metrics.miou, r.full.back().relation_distortion,
                    r.contrastive.back().relation_distortion);
        std::fflush(stdout);
    }
    return r;
}

bool finite_log(const RunManifest& m) {
    for (const auto& rec : m.log) {
        for (const StepLosses* s : {&rec.encoder, rec.segmenter ? &*rec.segmenter : nullptr}) {
            if (s && !(std::isfinite(s->total) && std::isfinite(s->dice) && std::isfinite(s->local) &&
                       std::isfinite(s->global))) {
                return false;
            }
        }
    }
    return m.log.size() == m.config.budget;
}

Outcome ablation(const PairedRuns& r) {
    double full = 0.0, dice = 0.0;
    bool complete = true;
    for (std::size_t k = 0; k < r.full.size(); ++k) {
        full += r.full[k].final_metrics.miou / 5.0;
        dice += r.dice[k].final_metrics.miou / 5.0;
        complete = complete && r.full[k].status == "complete" && r.dice[k].status == "complete";
    }
    return {complete && full > dice && r.ablation_seconds < 600.0,
            "mean mIoU full " + fmt("%.4f", full) + " vs dice-only " + fmt("%.4f", dice) + ", 10 runs in " +
                fmt("%.0f", r.ablation_seconds) + " s"};
}

Outcome contrastive_comparison(const PairedRuns& r) {
    std::size_t wins = 0;
    bool ok = true;
    for (std::size_t k = 0; k < r.full.size(); ++k) {
        wins += r.full[k].relation_distortion < r.contrastive[k].relation_distortion ? 1 : 0;
        ok = ok && r.full[k].status == "complete" && r.contrastive[k].status == "complete" &&
             finite_log(r.full[k]) && finite_log(r.contrastive[k]);
    }
    return {ok && wins >= 3, "VLGM lower distortion in " + std::to_string(wins) + " of 5 seeds" +
                                 (ok ? ", all runs complete with finite losses" : ", a run failed or logged non-finite")};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// stdout plus every file under the output directory, keyed by relative path.
std::map<std::string, std::string> capture(std::vector<std::string> args, const fs::path& dir) {
    fs::remove_all(dir);
    std::ostringstream out, err;
    std::vector<std::string> argv{"bivlgm"};
    for (auto& a : args) argv.push_back(a == "@" ? dir.string() : a);
    const int code = bivlgm::cli::run(argv, out, err);
    std::map<std::string, std::string> files{{"<exit>", std::to_string(code)}};
    // Paths echoed to stdout name the directory, which differs between the two runs.
    std::string text = out.str();
    for (std::size_t pos; (pos = text.find(dir.string())) != std::string::npos;) text.replace(pos, dir.string().size(), "@");
    files["<stdout>"] = text;
    if (fs::exists(dir)) {
        for (const auto& e : fs::recursive_directory_iterator(dir)) {
            if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
        }
    }
    return files;
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / "bivlgm_acceptance_determinism";
    const std::vector<std::string> tiny{"--budget", "4", "--train-samples", "4", "--test-samples", "3",
                                        "--batch",  "2", "--image-size",    "32", "--out", "@"};
    std::vector<std::vector<std::string>> commands{
        {"gradcheck", "--seed", "7", "--instances", "3", "--out", "@"},
        {"sinkhorn-bench", "--seed", "7", "--out", "@"},
        {"match-demo", "--seed", "7", "--out", "@"},
        {"prompt", "--spec", "EX:low,HE:mid,MA:high", "--seed", "7", "--classes"},
    };
    auto train_cmd = std::vector<std::string>{"train-synthetic", "--seed", "7"};
    train_cmd.insert(train_cmd.end(), tiny.begin(), tiny.end());
    commands.push_back(train_cmd);
    auto compare_cmd = std::vector<std::string>{"compare-contrastive", "--seed", "7", "--seeds", "2"};
    compare_cmd.insert(compare_cmd.end(), tiny.begin(), tiny.end());
    commands.push_back(compare_cmd);

    std::size_t compared = 0;
    for (const auto& cmd : commands) {
        const auto a = capture(cmd, root / "a");
        const auto b = capture(cmd, root / "b");
        if (a != b) return {false, cmd[0] + " differs between identical invocations"};
        if (a.at("<exit>") != "0") return {false, cmd[0] + " exited " + a.at("<exit>")};
        compared += a.size();
    }
    // eval over the predictions written by a training run.
    capture(train_cmd, root / "run");
    const std::vector<std::string> eval_cmd{"eval", (root / "run" / "predictions").string(), "--out", "@"};
    const auto a = capture(eval_cmd, root / "a"), b = capture(eval_cmd, root / "b");
    if (a != b) return {false, "eval differs between identical invocations"};
    compared += a.size();
    fs::remove_all(root);
    return {true, std::to_string(commands.size() + 1) + " commands run twice, " + std::to_string(compared) +
                      " outputs byte-identical"};
}

Outcome metrics_oracle() {
    Rng rng(9);
    double worst = 0.0;
    std::size_t channels = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t h = 2 + rng.below(6), w = 2 + rng.below(6);
        Mask gt(h, w), pred(h, w);
        for (std::size_t i = 0; i < gt.values.size(); ++i) {
            gt.values[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
            // Coarse scores create ties, which the PR sweep must group.
            pred.values[i] = std::round(rng.uniform() * 10.0) / 10.0;
        }
        const ImageMetrics m = evaluate_masks(pred, gt);
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            const std::vector<double> g(gt.values.row(c).begin(), gt.values.row(c).end());
            const std::vector<double> p(pred.values.row(c).begin(), pred.values.row(c).end());
            if (std::accumulate(g.begin(), g.end(), 0.0) == 0.0) continue;
            ++channels;
            worst = std::max({worst, std::abs(m.per_class[c].iou - oracle::iou(p, g)),
                              std::abs(m.per_class[c].f_score - oracle::f_score(p, g)),
                              std::abs(m.per_class[c].aupr - oracle::aupr(p, g))});
        }
    }
    return {worst <= 1e-9, std::to_string(channels) + " channels over 50 masks, max deviation " + fmt("%.2e", worst)};
}

}  // namespace

int main() {
    int failures = 0;
    const auto report = [&](int id, const char* name, const std::function<Outcome()>& f) {
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::printf("criterion %d: %s %s: %s\n", id, o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
        std::fflush(stdout);
    };
    report(1, "sinkhorn correctness", sinkhorn_correctness);
    report(2, "permutation recovery", permutation_recovery);
    report(3, "loss identities", loss_identities);
    report(4, "gradient oracle", gradient_oracle);
    report(5, "prompt goldens", prompt_goldens);
    PairedRuns runs;
    std::string suite_error;
    try {
        runs = run_suite();
    } catch (const std::exception& e) {
        suite_error = e.what();
    }
    report(6, "ablation (full beats dice-only)", [&]() -> Outcome {
        if (!suite_error.empty()) return {false, "exception: " + suite_error};
        return ablation(runs);
    });
    report(7, "contrastive comparison", [&]() -> Outcome {
        if (!suite_error.empty()) return {false, "exception: " + suite_error};
        return contrastive_comparison(runs);
    });
    report(8, "determinism", determinism);
    report(9, "metrics oracle", metrics_oracle);
    return failures;
}
