#include <gtest/gtest.h>

#include <filesystem>

#include "bivlgm/metrics.hpp"
#include "bivlgm/synthdata.hpp"
#include "oracles.hpp"

using namespace bivlgm;

namespace {

SeveritySpec only(LesionClass c, SeverityLevel l) {
    SeveritySpec s{};
    s[index_of(c)] = l;
    return s;
}

std::vector<double> as_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace

TEST(GenSample, SameSeedSameBytes) {
    const SeveritySpec spec = parse_spec("EX:mid,HE:low");
    const SegSample a = gen_sample(17, 64, 64, spec), b = gen_sample(17, 64, 64, spec);
    EXPECT_EQ(encode_sample(a), encode_sample(b));
    EXPECT_NE(encode_sample(a), encode_sample(gen_sample(18, 64, 64, spec)));
}

TEST(GenSample, HighBandReachesThreshold) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const SegSample s = gen_sample(seed, 64, 64, only(LesionClass::EX, SeverityLevel::High));
        EXPECT_GE(lesion_ratio(s.gt_mask, LesionClass::EX), 0.12);
    }
}

TEST(GenSample, OneRequestedClassOneChannel) {
    const SegSample s = gen_sample(3, 32, 32, only(LesionClass::SE, SeverityLevel::Low));
    std::size_t nonempty = 0;
    for (LesionClass c : kAllClasses) nonempty += lesion_ratio(s.gt_mask, c) > 0.0 ? 1 : 0;
    EXPECT_EQ(nonempty, 1u);
}

TEST(GenSample, EveryRequestedBandIsHit) {
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
        const SeveritySpec spec = random_spec(rng);
        const SegSample s = gen_sample(static_cast<std::uint64_t>(t), 64, 64, spec);
        for (LesionClass c : kAllClasses) {
            const double r = lesion_ratio(s.gt_mask, c);
            if (!spec[index_of(c)]) {
                EXPECT_EQ(r, 0.0);
            } else {
                EXPECT_EQ(severity_level(r), *spec[index_of(c)]);
            }
        }
        for (double v : s.image.data()) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(GenSample, RejectsBadInput) {
    EXPECT_THROW(gen_sample(1, 64, 64, SeveritySpec{}), std::invalid_argument);
    EXPECT_THROW(gen_sample(1, 8, 8, only(LesionClass::EX, SeverityLevel::Low)), std::invalid_argument);
}

TEST(Bvlg1, RoundTripWithAndWithoutPrediction) {
    SegSample s = gen_sample(9, 20, 24, parse_spec("MA:high"));
    EXPECT_EQ(decode_sample(encode_sample(s)), s);
    Mask pred(20, 24);
    Rng rng(2);
    for (auto& v : pred.values.data()) v = rng.uniform();
    s.predicted_mask = pred;
    const auto path = std::filesystem::temp_directory_path() / "bivlgm_roundtrip.bvlg";
    write_sample(path, s);
    EXPECT_EQ(read_sample(path), s);
    std::filesystem::remove(path);
}

TEST(Bvlg1, RejectsCorruptStreams) {
    const std::string bytes = encode_sample(gen_sample(1, 16, 16, parse_spec("EX:low")));
    EXPECT_THROW(decode_sample("NOPE!" + bytes.substr(5)), std::runtime_error);
    EXPECT_THROW(decode_sample(bytes.substr(0, bytes.size() - 3)), std::runtime_error);
    EXPECT_THROW(decode_sample(bytes + "x"), std::runtime_error);
}

TEST(DatasetManifest, RoundTrip) {
    const auto entries = make_dataset_entries(4, 6);
    const auto path = std::filesystem::temp_directory_path() / "bivlgm_manifest.tsv";
    write_dataset_manifest(path, entries);
    const auto back = read_dataset_manifest(path);
    ASSERT_EQ(back.size(), entries.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        EXPECT_EQ(back[i].seed, entries[i].seed);
        EXPECT_EQ(back[i].spec, entries[i].spec);
    }
    std::filesystem::remove(path);
}

TEST(Metrics, PerfectPrediction) {
    const std::vector<double> g{0, 1, 1, 0, 1};
    EXPECT_EQ(iou(g, g), 1.0);
    EXPECT_EQ(f_score(g, g), 1.0);
    EXPECT_EQ(aupr(g, g), 1.0);
}

TEST(Metrics, HalfOverlapHandCounts) {
    const std::vector<double> pred{1, 1, 1, 1, 0, 0}, gt{0, 0, 1, 1, 1, 1};
    EXPECT_NEAR(iou(pred, gt), 2.0 / 6.0, 1e-15);
    EXPECT_NEAR(f_score(pred, gt), 0.5, 1e-15);
}

TEST(Metrics, InvertedRankingMatchesSweep) {
    const std::vector<double> gt{1, 0, 0, 1, 0, 0, 0, 1};
    std::vector<double> scores;
    for (double g : gt) scores.push_back(1.0 - g);
    EXPECT_NEAR(aupr(scores, gt), oracle::aupr(scores, gt), 1e-12);
    // Everything is tied at the final threshold, so the curve ends at the prevalence.
    EXPECT_NEAR(aupr(scores, gt), 3.0 / 8.0, 1e-12);
}

TEST(Metrics, AgreeWithBruteForceOracle) {
    Rng rng(29);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 4 + rng.below(30);
        std::vector<double> gt(n), scores(n);
        for (std::size_t i = 0; i < n; ++i) {
            gt[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
            scores[i] = std::round(rng.uniform() * 8.0) / 8.0;
        }
        gt[rng.below(n)] = 1.0;
        EXPECT_NEAR(iou(scores, gt), oracle::iou(scores, gt), 1e-9);
        EXPECT_NEAR(f_score(scores, gt), oracle::f_score(scores, gt), 1e-9);
        EXPECT_NEAR(aupr(scores, gt), oracle::aupr(scores, gt), 1e-9);
    }
}

TEST(Metrics, ImageMeansSkipAbsentClasses) {
    Mask gt(2, 2), pred(2, 2);
    gt.at(LesionClass::EX, 0, 0) = 1.0;
    pred.at(LesionClass::EX, 0, 0) = 0.9;
    pred.at(LesionClass::HE, 1, 1) = 0.9;
    const ImageMetrics m = evaluate_masks(pred, gt);
    EXPECT_EQ(m.evaluated_classes, 1u);
    EXPECT_TRUE(m.per_class[0].evaluated);
    EXPECT_FALSE(m.per_class[1].evaluated);
    EXPECT_EQ(m.miou, 1.0);
    const DatasetMetrics d = summarize({m, m});
    EXPECT_EQ(d.images, 2u);
    EXPECT_EQ(d.class_count[0], 2u);
    EXPECT_EQ(d.class_count[1], 0u);
}
