#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bivlgm/cli.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "bivlgm");
    std::ostringstream out, err;
    const int code = bivlgm::cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("bivlgm_cli_" + name);
    fs::remove_all(p);
    return p;
}

// Small enough to train in well under a second.
std::vector<std::string> tiny(const fs::path& out) {
    return {"--budget", "3", "--train-samples", "4", "--test-samples", "2", "--batch", "2", "--image-size", "32",
            "--out", out.string()};
}

}  // namespace

TEST(Cli, PromptGolden) {
    const auto r = run({"prompt", "--spec", "EX:high", "--template", "1", "--group", "EX=severity"});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out, "This fundus image has high-severity hard exudates.\n");
}

TEST(Cli, HelpOnEveryCommandDocumentsItsFlags) {
    const std::map<std::string, std::vector<std::string>> flags{
        {"gradcheck", {"--seed", "--instances", "--step", "--out"}},
        {"sinkhorn-bench", {"--seed", "--trials", "--min-size", "--max-size", "--iterations", "--tolerance", "--out"}},
        {"match-demo", {"--seed", "--trials", "--nodes", "--dim", "--noise", "--out"}},
        {"prompt", {"--spec", "--sample", "--template", "--group", "--seed", "--t1", "--t2", "--classes"}},
        {"train-synthetic",
         {"--seed", "--config", "--out", "--budget", "--batch", "--t1", "--t2", "--lambda-a", "--lambda-b",
          "--lambda-c", "--lambda-d", "--lambda-e", "--template", "--group", "--strict-diagonal", "--losses"}},
        {"compare-contrastive", {"--seed", "--seeds", "--config", "--out", "--budget"}},
        {"eval", {"--out"}},
    };
    for (const auto& [cmd, names] : flags) {
        const auto r = run({cmd, "--help"});
        EXPECT_EQ(r.code, 0) << cmd;
        for (const auto& f : names) EXPECT_NE(r.out.find(f), std::string::npos) << cmd << " " << f;
    }
    EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"nonsense"}).code, 2);
    EXPECT_EQ(run({"train-synthetic", "--bogus", "1"}).code, 2);
    EXPECT_EQ(run({"train-synthetic", "--losses", "some"}).code, 2);
    EXPECT_EQ(run({"train-synthetic", "--template", "9"}).code, 2);
    EXPECT_EQ(run({"prompt", "--spec", "EX:huge"}).code, 2);
    EXPECT_EQ(run({"prompt", "--spec", "EX:high", "--group", "EX=loud"}).code, 2);

    const fs::path cfg = scratch("bad_config.json");
    std::ofstream(cfg) << R"({"lambda_q": 1})";
    EXPECT_EQ(run({"train-synthetic", "--config", cfg.string(), "--out", scratch("bad").string()}).code, 2);
    std::ofstream(cfg) << "{not json";
    EXPECT_EQ(run({"train-synthetic", "--config", cfg.string(), "--out", scratch("bad").string()}).code, 2);
}

TEST(Cli, RuntimeFailureExitsThree) {
    const fs::path bad = scratch("corrupt.bvlg");
    std::ofstream(bad, std::ios::binary) << "BVLG1 truncated";
    const auto r = run({"eval", bad.string()});
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("BVLG1"), std::string::npos);
}

TEST(Cli, BudgetZeroWritesManifest) {
    const fs::path out = scratch("budget0");
    auto args = tiny(out);
    args[1] = "0";
    args.insert(args.begin(), "train-synthetic");
    const auto r = run(args);
    EXPECT_EQ(r.code, 0) << r.err;
    const auto m = nlohmann::json::parse(slurp(out / "manifest.json"));
    EXPECT_EQ(m["status"], "complete");
    EXPECT_EQ(m["rounds_completed"], 0);
    EXPECT_TRUE(m.contains("initial_metrics"));
}

TEST(Cli, TrainingIsByteIdenticalAcrossRuns) {
    const fs::path a = scratch("det_a"), b = scratch("det_b");
    auto args_a = tiny(a), args_b = tiny(b);
    args_a.insert(args_a.begin(), "train-synthetic");
    args_b.insert(args_b.begin(), "train-synthetic");
    ASSERT_EQ(run(args_a).code, 0);
    ASSERT_EQ(run(args_b).code, 0);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const fs::path rel = fs::relative(e.path(), a);
        EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
        ++files;
    }
    EXPECT_GE(files, 5u);
}

TEST(Cli, FlagsOverrideConfigOverrideDefaults) {
    const fs::path cfg = scratch("precedence.json");
    std::ofstream(cfg) << R"({"budget": 2, "lambda_a": 0.125, "t2": 0.2})";
    const fs::path out = scratch("precedence");
    auto args = tiny(out);
    args.insert(args.begin(), {"train-synthetic", "--config", cfg.string()});
    args.insert(args.end(), {"--t2", "0.15"});
    ASSERT_EQ(run(args).code, 0);
    const auto c = nlohmann::json::parse(slurp(out / "manifest.json"))["config"];
    EXPECT_EQ(c["budget"], 3);
    EXPECT_EQ(c["lambda_a"], 0.125);
    EXPECT_EQ(c["t2"], 0.15);
    EXPECT_EQ(c["lambda_b"], 0.5);
}

TEST(Cli, EvalReadsStoredPredictions) {
    const fs::path out = scratch("for_eval");
    auto args = tiny(out);
    args.insert(args.begin(), "train-synthetic");
    ASSERT_EQ(run(args).code, 0);
    const fs::path metrics = scratch("eval_out");
    const auto r = run({"eval", (out / "predictions").string(), "--out", metrics.string()});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(metrics / "metrics.json"));
    const auto again = run({"eval", (out / "predictions").string()});
    EXPECT_EQ(r.out, again.out);
}

TEST(Cli, VerificationCommandsAreDeterministic) {
    for (const std::vector<std::string>& cmd : std::vector<std::vector<std::string>>{
             {"sinkhorn-bench", "--seed", "3"},
             {"match-demo", "--seed", "3", "--trials", "10"},
             {"gradcheck", "--seed", "7", "--instances", "2"},
             {"prompt", "--spec", "EX:low,SE:mid", "--seed", "4"}}) {
        const auto a = run(cmd), b = run(cmd);
        EXPECT_EQ(a.code, 0) << cmd[0] << a.err;
        EXPECT_EQ(a.out, b.out) << cmd[0];
    }
}
