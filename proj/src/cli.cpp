#include "bivlgm/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "bivlgm/pipeline.hpp"
#include "bivlgm/rng.hpp"
#include "bivlgm/suites.hpp"

namespace bivlgm::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string fmt(double v, const char* spec = "%.6f") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
    if (!f) throw std::runtime_error("failed writing " + path.string());
}

std::pair<LesionClass, AdjectiveGroup> parse_group_flag(const std::string& s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--group expects cls=amount|density|severity, got '" + s + "'");
    try {
        return {parse_class(s.substr(0, eq)), parse_group(s.substr(eq + 1))};
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("--group: ") + e.what());
    }
}

struct TrainFlags {
    std::optional<std::uint64_t> seed;
    std::string config;
    std::string out = "run";
    std::optional<std::size_t> budget;
    std::optional<std::size_t> batch;
    std::optional<double> t1, t2;
    std::optional<double> la, lb, lc, ld, le;
    std::optional<double> encoder_lr, segmenter_lr;
    std::optional<int> tmpl;
    std::vector<std::string> groups;
    std::optional<bool> strict_diagonal;
    std::optional<std::string> losses;
    std::optional<std::size_t> train_samples, test_samples, image_size;

    void attach(CLI::App* app, bool with_losses) {
        app->add_option("--seed", seed, "Run seed (default 0)");
        app->add_option("--config", config, "JSON config file; flags override its values")->check(CLI::ExistingFile);
        app->add_option("--out", out, "Output directory")->capture_default_str();
        app->add_option("--budget", budget, "Alternating rounds (default 500)");
        app->add_option("--batch", batch, "Batch size (default 8)");
        app->add_option("--t1", t1, "Lower lesion-ratio threshold (default 0.06)");
        app->add_option("--t2", t2, "Upper lesion-ratio threshold (default 0.12)");
        app->add_option("--lambda-a", la, "Weight of the local GT alignment loss (default 0.5)");
        app->add_option("--lambda-b", lb, "Weight of the global GT alignment loss (default 0.5)");
        app->add_option("--lambda-c", lc, "Weight of the Dice loss (default 1.0)");
        app->add_option("--lambda-d", ld, "Weight of the local predicted alignment loss (default 0.5)");
        app->add_option("--lambda-e", le, "Weight of the global predicted alignment loss (default 0.5)");
        app->add_option("--encoder-lr", encoder_lr, "Learning rate of the alignment step (default 0.01)");
        app->add_option("--segmenter-lr", segmenter_lr, "Learning rate of the segmenter step (default 1.0)");
        app->add_option("--template", tmpl, "Fix the severity template (1-5); random per sample otherwise")
            ->check(CLI::Range(1, 5));
        app->add_option("--group", groups, "Fix a class adjective group, e.g. EX=density (repeatable)");
        app->add_option("--strict-diagonal", strict_diagonal,
                        "Sentence-level ground truth is the identity even for repeated severity profiles");
        if (with_losses) {
            app->add_option("--losses", losses, "Loss set: dice, full or contrastive (default full)")
                ->check(CLI::IsMember({"dice", "full", "contrastive"}));
        }
        app->add_option("--train-samples", train_samples, "Synthetic training images (default 32)");
        app->add_option("--test-samples", test_samples, "Synthetic held-out images (default 16)");
        app->add_option("--image-size", image_size, "Synthetic image side length (default 64)");
    }

    TrainConfig build() const {
        TrainConfig cfg;
        if (!config.empty()) {
            std::ifstream f(config);
            if (!f) throw UsageError("cannot open config " + config);
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(f);
            } catch (const nlohmann::json::parse_error& e) {
                throw UsageError("config " + config + ": " + e.what());
            }
            try {
                apply_json(cfg, j);
            } catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
        }
        if (seed) cfg.seed = *seed;
        if (budget) cfg.budget = *budget;
        if (batch) cfg.batch_size = *batch;
        if (t1) cfg.t1 = *t1;
        if (t2) cfg.t2 = *t2;
        if (la) cfg.weights.lambda_a = *la;
        if (lb) cfg.weights.lambda_b = *lb;
        if (lc) cfg.weights.lambda_c = *lc;
        if (ld) cfg.weights.lambda_d = *ld;
        if (le) cfg.weights.lambda_e = *le;
        if (encoder_lr) cfg.encoder_lr = *encoder_lr;
        if (segmenter_lr) cfg.segmenter_lr = *segmenter_lr;
        if (tmpl) cfg.template_index = *tmpl;
        for (const auto& g : groups) {
            const auto [cls, group] = parse_group_flag(g);
            cfg.groups[index_of(cls)] = group;
        }
        if (strict_diagonal) cfg.strict_diagonal = *strict_diagonal;
        if (losses) cfg.losses = parse_loss_mode(*losses);
        if (train_samples) cfg.train_samples = *train_samples;
        if (test_samples) cfg.test_samples = *test_samples;
        if (image_size) cfg.image_size = *image_size;
        try {
            cfg.validate();
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        return cfg;
    }
};

std::string dataset_table(const std::vector<DatasetEntry>& entries) {
    std::string out = "# seed\tspec\n";
    for (const auto& e : entries) out += std::to_string(e.seed) + "\t" + format_spec(e.spec) + "\n";
    return out;
}

void write_run(const fs::path& dir, const TrainResult& result, const Dataset& data) {
    fs::create_directories(dir);
    write_text(dir / "manifest.json", result.manifest.to_json().dump(2) + "\n");
    write_text(dir / "losses.csv", result.manifest.loss_csv());
    write_text(dir / "metrics.csv", result.manifest.metrics_csv());
    write_text(dir / "dataset_train.tsv", dataset_table(data.train_entries));
    write_text(dir / "dataset_test.tsv", dataset_table(data.test_entries));
    fs::create_directories(dir / "predictions");
    for (std::size_t i = 0; i < data.test.size(); ++i) {
        SegSample s = data.test[i];
        s.predicted_mask = predict_mask(s, result.params.segmenter);
        char name[32];
        std::snprintf(name, sizeof name, "test_%03zu.bvlg", i);
        write_sample(dir / "predictions" / name, s);
    }
}

int cmd_gradcheck(std::uint64_t seed, std::size_t instances, double h, const std::string& out_dir, std::ostream& out) {
    const auto results = run_gradcheck_suite(seed, instances, h);
    std::string table = "check,instances,passed,redrawn,worst_relative_error,tolerance,result\n";
    bool all = true;
    out << "check                    passed   redrawn  worst rel. error  tolerance  result\n";
    for (const auto& r : results) {
        all = all && r.ok();
        char line[160];
        std::snprintf(line, sizeof line, "%-24s %3zu/%-3zu  %5zu    %.3e         %.0e      %s\n", r.name.c_str(),
                      r.passed, r.instances, r.redrawn, r.worst_error, r.tolerance, r.ok() ? "PASS" : "FAIL");
        out << line;
        table += r.name + "," + std::to_string(r.instances) + "," + std::to_string(r.passed) + "," +
                 std::to_string(r.redrawn) + "," +
                 fmt(r.worst_error, "%.6e") + "," + fmt(r.tolerance, "%g") + "," + (r.ok() ? "pass" : "fail") + "\n";
    }
    if (!out_dir.empty()) write_text(fs::path(out_dir) / "gradcheck.csv", table);
    out << "instances whose difference stencil crosses a relu/abs/clamp breakpoint are redrawn\n";
    out << (all ? "all gradient checks passed\n" : "gradient checks FAILED\n");
    return all ? kExitOk : kExitRuntime;
}

int cmd_sinkhorn_bench(std::uint64_t seed, std::size_t trials, std::size_t min_size, std::size_t max_size,
                       const SinkhornConfig& cfg, const std::string& out_dir, std::ostream& out) {
    if (min_size < 1 || max_size < min_size) throw UsageError("--min-size/--max-size: need 1 <= min <= max");
    cfg.validate();
    const SinkhornBenchResult r = sinkhorn_bench(seed, trials, min_size, max_size, cfg);
    const CorrespondenceMatrix example = sinkhorn(Matrix{{2.0, 1.0}, {1.0, 1.0}}, cfg);
    std::ostringstream s;
    s << "trials," << r.trials << "\n"
      << "converged," << r.converged << "\n"
      << "worst_deviation," << fmt(r.worst_deviation, "%.6e") << "\n"
      << "max_iterations," << r.max_iterations << "\n"
      << "mean_iterations," << fmt(r.mean_iterations, "%.3f") << "\n"
      << "example_2x2_00," << fmt(example.values(0, 0), "%.10f") << "\n"
      << "example_2x2_iterations," << example.iterations << "\n";
    out << s.str();
    if (!out_dir.empty()) write_text(fs::path(out_dir) / "sinkhorn_bench.csv", "metric,value\n" + s.str());
    return r.converged == r.trials ? kExitOk : kExitRuntime;
}

int cmd_match_demo(std::uint64_t seed, std::size_t trials, std::size_t nodes, std::size_t dim, double noise,
                   const std::string& out_dir, std::ostream& out) {
    if (nodes == 0 || dim == 0) throw UsageError("--nodes and --dim must be positive");
    if (!(noise >= 0.0)) throw UsageError("--noise must be non-negative");
    const MatchDemoResult r = match_demo(seed, trials, nodes, dim, noise);
    std::ostringstream s;
    s << "trials," << r.trials << "\n"
      << "nodes," << nodes << "\n"
      << "dim," << dim << "\n"
      << "noise," << fmt(noise, "%g") << "\n"
      << "mean_recovery," << fmt(r.mean_recovery, "%.4f") << "\n"
      << "min_recovery," << fmt(r.min_recovery, "%.4f") << "\n"
      << "perfect_trials," << r.perfect << "\n";
    out << s.str();
    if (!out_dir.empty()) write_text(fs::path(out_dir) / "match_demo.csv", "metric,value\n" + s.str());
    return kExitOk;
}

int cmd_prompt(const std::string& spec_text, const std::string& sample_path, std::optional<int> tmpl,
               const std::vector<std::string>& group_flags, std::uint64_t seed, double t1, double t2, bool classes,
               std::ostream& out) {
    if (spec_text.empty() == sample_path.empty()) throw UsageError("prompt: give exactly one of --spec or --sample");
    SeverityProfile profile;
    if (!spec_text.empty()) {
        SeveritySpec spec;
        try {
            spec = parse_spec(spec_text);
        } catch (const std::invalid_argument& e) {
            throw UsageError(std::string("--spec: ") + e.what());
        }
        for (LesionClass c : kAllClasses) {
            if (spec[index_of(c)]) profile.emplace_back(c, *spec[index_of(c)]);
        }
    } else {
        try {
            severity_level(0.0, t1, t2);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        profile = severity_profile(read_sample(sample_path).gt_mask, t1, t2);
    }
    Rng rng(derive_seed(seed, "prompt"));
    GroupChoice groups{};
    for (auto& g : groups) g = static_cast<AdjectiveGroup>(rng.below(3));
    for (const auto& f : group_flags) {
        const auto [cls, group] = parse_group_flag(f);
        groups[index_of(cls)] = group;
    }
    if (tmpl) {
        out << severity_prompt(profile, *tmpl, groups).text << "\n";
    } else {
        for (int i = 1; i <= kNumTemplates; ++i) out << severity_prompt(profile, i, groups).text << "\n";
    }
    if (classes) {
        for (const auto& [cls, _] : profile) out << class_prompt(cls).text << "\n";
    }
    return kExitOk;
}

int cmd_train(const TrainConfig& cfg, const std::string& out_dir, std::ostream& out) {
    const Dataset data = Dataset::synthetic(cfg);
    const TrainResult result = train(data, cfg);
    write_run(out_dir, result, data);
    const auto& m = result.manifest;
    out << "status: " << m.status << "\n"
        << "rounds: " << m.log.size() << "\n"
        << "initial mIoU: " << fmt(m.initial_metrics.miou) << "\n"
        << "final mIoU: " << fmt(m.final_metrics.miou) << "\n"
        << "final mF: " << fmt(m.final_metrics.mf) << "\n"
        << "final mAUPR: " << fmt(m.final_metrics.maupr) << "\n"
        << "relation distortion: " << fmt(m.relation_distortion) << "\n"
        << "manifest: " << (fs::path(out_dir) / "manifest.json").string() << "\n";
    return m.status == "complete" ? kExitOk : kExitRuntime;
}

int cmd_compare(TrainConfig cfg, std::size_t seeds, const std::string& out_dir, std::ostream& out) {
    if (seeds == 0) throw UsageError("--seeds must be positive");
    nlohmann::ordered_json report;
    report["budget"] = cfg.budget;
    nlohmann::ordered_json runs = nlohmann::ordered_json::array();
    std::string csv = "seed,vlgm_distortion,contrastive_distortion,vlgm_miou,contrastive_miou,vlgm_lower\n";
    std::size_t wins = 0;
    bool all_complete = true;
    out << "seed  vlgm distortion  contrastive distortion  vlgm mIoU  contrastive mIoU\n";
    const std::uint64_t first = cfg.seed;
    for (std::size_t k = 0; k < seeds; ++k) {
        cfg.seed = first + k;
        const Dataset data = Dataset::synthetic(cfg);
        TrainConfig vcfg = cfg, ccfg = cfg;
        vcfg.losses = LossMode::Full;
        ccfg.losses = LossMode::Contrastive;
        const TrainResult v = train(data, vcfg);
        const TrainResult c = train(data, ccfg);
        const fs::path seed_dir = fs::path(out_dir) / ("seed_" + std::to_string(cfg.seed));
        write_run(seed_dir / "vlgm", v, data);
        write_run(seed_dir / "contrastive", c, data);
        const double dv = v.manifest.relation_distortion, dc = c.manifest.relation_distortion;
        const bool lower = dv < dc;
        wins += lower ? 1 : 0;
        all_complete = all_complete && v.manifest.status == "complete" && c.manifest.status == "complete";
        runs.push_back({{"seed", cfg.seed},
                        {"vlgm", {{"status", v.manifest.status},
                                  {"relation_distortion", dv},
                                  {"final_miou", v.manifest.final_metrics.miou}}},
                        {"contrastive", {{"status", c.manifest.status},
                                         {"relation_distortion", dc},
                                         {"final_miou", c.manifest.final_metrics.miou}}},
                        {"vlgm_lower_distortion", lower}});
        csv += std::to_string(cfg.seed) + "," + fmt(dv, "%.17g") + "," + fmt(dc, "%.17g") + "," +
               fmt(v.manifest.final_metrics.miou, "%.17g") + "," + fmt(c.manifest.final_metrics.miou, "%.17g") +
               "," + (lower ? "1" : "0") + "\n";
        char line[160];
        std::snprintf(line, sizeof line, "%-5llu %-16.6f %-23.6f %-10.4f %.4f\n",
                      static_cast<unsigned long long>(cfg.seed), dv, dc, v.manifest.final_metrics.miou,
                      c.manifest.final_metrics.miou);
        out << line;
    }
    report["runs"] = runs;
    report["vlgm_lower_count"] = wins;
    report["seeds"] = seeds;
    cfg.seed = first;
    report["config"] = to_json(cfg);
    write_text(fs::path(out_dir) / "comparison.json", report.dump(2) + "\n");
    write_text(fs::path(out_dir) / "comparison.csv", csv);
    out << "vlgm lower distortion in " << wins << " of " << seeds << " seeds\n";
    return all_complete ? kExitOk : kExitRuntime;
}

int cmd_eval(const std::vector<std::string>& inputs, const std::string& out_dir, std::ostream& out) {
    std::vector<fs::path> files;
    for (const auto& in : inputs) {
        const fs::path p(in);
        if (fs::is_directory(p)) {
            for (const auto& e : fs::directory_iterator(p)) {
                if (e.is_regular_file() && e.path().extension() == ".bvlg") files.push_back(e.path());
            }
        } else if (fs::is_regular_file(p)) {
            files.push_back(p);
        } else {
            throw UsageError("eval: no such file or directory: " + in);
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw UsageError("eval: no .bvlg samples found");
    std::vector<ImageMetrics> per_image;
    std::string csv = "sample,classes,miou,mf,maupr\n";
    for (const auto& f : files) {
        const SegSample s = read_sample(f);
        if (!s.predicted_mask) throw std::runtime_error("eval: " + f.string() + " carries no predicted mask");
        per_image.push_back(evaluate_masks(*s.predicted_mask, s.gt_mask));
        const auto& m = per_image.back();
        csv += f.filename().string() + "," + std::to_string(m.evaluated_classes) + "," + fmt(m.miou, "%.17g") + "," +
               fmt(m.mf, "%.17g") + "," + fmt(m.maupr, "%.17g") + "\n";
    }
    const DatasetMetrics d = summarize(per_image);
    const std::string json = to_json(d).dump(2) + "\n";
    out << json;
    if (!out_dir.empty()) {
        write_text(fs::path(out_dir) / "metrics.json", json);
        write_text(fs::path(out_dir) / "metrics.csv", csv);
    }
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Bi-level vision-language graph matching for lesion segmentation", "bivlgm"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    std::string out_dir;

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference checks of every loss and the matching module");
    std::size_t instances = 50;
    double step = 1e-4;
    gradcheck->add_option("--seed", seed, "Suite seed")->capture_default_str();
    gradcheck->add_option("--instances", instances, "Random instances per check")->capture_default_str();
    gradcheck->add_option("--step", step, "Central-difference step h")->capture_default_str();
    gradcheck->add_option("--out", out_dir, "Directory for gradcheck.csv");

    auto* bench = app.add_subcommand("sinkhorn-bench", "Sinkhorn convergence statistics on random positive matrices");
    std::size_t trials = 100, min_size = 2, max_size = 16;
    SinkhornConfig sk = SinkhornConfig::forward_only();
    bench->add_option("--seed", seed, "Bench seed")->capture_default_str();
    bench->add_option("--trials", trials, "Number of matrices")->capture_default_str();
    bench->add_option("--min-size", min_size, "Smallest side")->capture_default_str();
    bench->add_option("--max-size", max_size, "Largest side")->capture_default_str();
    bench->add_option("--iterations", sk.max_iterations, "Iteration cap")->capture_default_str();
    bench->add_option("--tolerance", sk.tolerance, "Doubly-stochastic tolerance")->capture_default_str();
    bench->add_option("--out", out_dir, "Directory for sinkhorn_bench.csv");

    auto* demo = app.add_subcommand("match-demo", "Permutation recovery of the matching module");
    std::size_t nodes = 8, dim = 16;
    double noise = 0.01;
    demo->add_option("--seed", seed, "Demo seed")->capture_default_str();
    demo->add_option("--trials", trials, "Number of trials")->capture_default_str();
    demo->add_option("--nodes", nodes, "Nodes per graph")->capture_default_str();
    demo->add_option("--dim", dim, "Feature width")->capture_default_str();
    demo->add_option("--noise", noise, "Feature noise relative to unit scale")->capture_default_str();
    demo->add_option("--out", out_dir, "Directory for match_demo.csv");

    auto* prompt = app.add_subcommand("prompt", "Render severity-aware prompts for a spec or a stored sample");
    std::string spec_text, sample_path;
    std::optional<int> tmpl;
    std::vector<std::string> group_flags;
    double t1 = kDefaultT1, t2 = kDefaultT2;
    bool classes = false;
    prompt->add_option("--spec", spec_text, "Severity spec such as EX:high,HE:low");
    prompt->add_option("--sample", sample_path, "Stored .bvlg sample")->check(CLI::ExistingFile);
    prompt->add_option("--template", tmpl, "Template 1-5; all five when omitted")->check(CLI::Range(1, 5));
    prompt->add_option("--group", group_flags, "Adjective group per class, e.g. EX=severity (repeatable)");
    prompt->add_option("--seed", seed, "Seed for classes without a --group")->capture_default_str();
    prompt->add_option("--t1", t1, "Lower lesion-ratio threshold")->capture_default_str();
    prompt->add_option("--t2", t2, "Upper lesion-ratio threshold")->capture_default_str();
    prompt->add_flag("--classes", classes, "Also print the class prompts");

    auto* train_cmd = app.add_subcommand("train-synthetic", "Train on the synthetic suite and write a run manifest");
    TrainFlags train_flags;
    train_flags.attach(train_cmd, true);

    auto* compare = app.add_subcommand("compare-contrastive",
                                       "Paired graph-matching vs contrastive alignment runs with relation distortion");
    TrainFlags compare_flags;
    compare_flags.out = "compare";
    std::size_t seeds = 1;
    compare_flags.attach(compare, false);
    compare->add_option("--seeds", seeds, "Number of consecutive seeds starting at --seed")->capture_default_str();

    auto* eval = app.add_subcommand("eval", "Metrics for stored samples that carry predicted masks");
    std::vector<std::string> eval_inputs;
    eval->add_option("inputs", eval_inputs, ".bvlg files or directories")->required();
    eval->add_option("--out", out_dir, "Directory for metrics.json and metrics.csv");

    std::vector<const char*> argv;
    argv.reserve(args.size());
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gradcheck->parsed()) return cmd_gradcheck(seed, instances, step, out_dir, out);
        if (bench->parsed()) return cmd_sinkhorn_bench(seed, trials, min_size, max_size, sk, out_dir, out);
        if (demo->parsed()) return cmd_match_demo(seed, trials, nodes, dim, noise, out_dir, out);
        if (prompt->parsed()) return cmd_prompt(spec_text, sample_path, tmpl, group_flags, seed, t1, t2, classes, out);
        if (train_cmd->parsed()) return cmd_train(train_flags.build(), train_flags.out, out);
        if (compare->parsed()) return cmd_compare(compare_flags.build(), seeds, compare_flags.out, out);
        if (eval->parsed()) return cmd_eval(eval_inputs, out_dir, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n" << "run with --help for usage\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace bivlgm::cli
