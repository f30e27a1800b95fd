#include <gtest/gtest.h>

#include <cmath>

#include "bivlgm/prompts.hpp"

using namespace bivlgm;

namespace {

Mask mask_with(std::size_t h, std::size_t w, std::initializer_list<std::pair<LesionClass, std::size_t>> counts) {
    Mask m(h, w);
    for (const auto& [cls, n] : counts)
        for (std::size_t p = 0; p < n; ++p) m.values(index_of(cls), p) = 1.0;
    return m;
}

GroupChoice all(AdjectiveGroup g) { return {g, g, g, g}; }

}  // namespace

TEST(LesionRatio, EmptyFullAndCounted) {
    EXPECT_EQ(lesion_ratio(Mask(8, 8), LesionClass::EX), 0.0);
    EXPECT_EQ(lesion_ratio(mask_with(8, 8, {{LesionClass::HE, 64}}), LesionClass::HE), 1.0);
    EXPECT_DOUBLE_EQ(lesion_ratio(mask_with(64, 64, {{LesionClass::SE, 410}}), LesionClass::SE), 410.0 / 4096.0);
}

TEST(SeverityLevel, BandsAndBoundaries) {
    EXPECT_EQ(severity_level(0.03), SeverityLevel::Low);
    EXPECT_EQ(severity_level(0.06), SeverityLevel::Mid);
    EXPECT_EQ(severity_level(0.0599999), SeverityLevel::Low);
    EXPECT_EQ(severity_level(0.12), SeverityLevel::High);
    EXPECT_EQ(severity_level(0.1199999), SeverityLevel::Mid);
    EXPECT_EQ(severity_level(0.5), SeverityLevel::High);
    EXPECT_THROW(severity_level(0.5, 0.2, 0.1), std::invalid_argument);
}

TEST(ClassPrompt, Goldens) {
    EXPECT_EQ(class_prompt(LesionClass::EX).text, "A fundus image with hard exudates");
    EXPECT_EQ(class_prompt(LesionClass::HE).text, "A fundus image with hemorrhages");
    EXPECT_EQ(class_prompt(LesionClass::SE).text, "A fundus image with soft exudates");
    EXPECT_EQ(class_prompt(LesionClass::MA).text, "A fundus image with microaneurysms");
    EXPECT_EQ(class_prompt(LesionClass::MA).text, class_prompt(LesionClass::MA).text);
    EXPECT_EQ(class_prompt(LesionClass::MA).template_index, 0);
}

TEST(SeverityPrompt, WorkedExample) {
    GroupChoice g = all(AdjectiveGroup::Amount);
    g[index_of(LesionClass::EX)] = AdjectiveGroup::Density;
    g[index_of(LesionClass::HE)] = AdjectiveGroup::Severity;
    const SeverityProfile profile{{LesionClass::EX, SeverityLevel::Low}, {LesionClass::HE, SeverityLevel::High}};
    const auto p = severity_prompt(profile, 1, g);
    EXPECT_EQ(p.text, "This fundus image has low-density hard exudates and high-severity hemorrhages.");
    EXPECT_EQ(p.template_index, 1);
    ASSERT_EQ(p.records.size(), 2u);
    EXPECT_EQ(p.records[1].cls, LesionClass::HE);
    EXPECT_EQ(p.records[1].level, SeverityLevel::High);
    EXPECT_EQ(p.records[1].group, AdjectiveGroup::Severity);
}

TEST(SeverityPrompt, AllFiveTemplates) {
    const SeverityProfile profile{{LesionClass::SE, SeverityLevel::Mid}};
    const char* want[] = {
        "This fundus image has some soft exudates.",
        "There are some soft exudates in this fundus image.",
        "A fundus image with some soft exudates.",
        "A diabetic retinopathy image has some soft exudates.",
        "some soft exudates in a diabetic retinopathy fundus image.",
    };
    for (int t = 1; t <= 5; ++t) EXPECT_EQ(severity_prompt(profile, t, all(AdjectiveGroup::Amount)).text, want[t - 1]);
    EXPECT_THROW(severity_prompt(profile, 0, all(AdjectiveGroup::Amount)), std::invalid_argument);
    EXPECT_THROW(severity_prompt(profile, 6, all(AdjectiveGroup::Amount)), std::invalid_argument);
}

TEST(SeverityPrompt, AllAdjectiveGroups) {
    const char* want[3][3] = {
        {"few", "some", "many"},
        {"low-density", "medium-density", "high-density"},
        {"low-severity", "medium-severity", "high-severity"},
    };
    for (int g = 0; g < 3; ++g) {
        for (int l = 0; l < 3; ++l) {
            const auto group = static_cast<AdjectiveGroup>(g);
            const SeverityProfile profile{{LesionClass::MA, static_cast<SeverityLevel>(l)}};
            EXPECT_EQ(severity_prompt(profile, 1, all(group)).text,
                      std::string("This fundus image has ") + want[g][l] + " microaneurysms.");
        }
    }
}

TEST(SeverityPrompt, ThreeClassesJoinWithAnd) {
    const SeverityProfile profile{{LesionClass::EX, SeverityLevel::Low},
                                  {LesionClass::SE, SeverityLevel::Mid},
                                  {LesionClass::MA, SeverityLevel::High}};
    EXPECT_EQ(severity_prompt(profile, 1, all(AdjectiveGroup::Amount)).text,
              "This fundus image has few hard exudates and some soft exudates and many microaneurysms.");
}

TEST(SeverityPrompt, FromMaskUsesRatios) {
    // 0.06 and 0.12 of 10000 pixels land exactly on the band edges.
    const Mask m = mask_with(100, 100, {{LesionClass::EX, 600}, {LesionClass::HE, 1200}});
    EXPECT_EQ(severity_prompt(m, 1, all(AdjectiveGroup::Amount)).text,
              "This fundus image has some hard exudates and many hemorrhages.");
}

TEST(SeverityPrompt, EmptyMask) {
    EXPECT_EQ(severity_prompt(Mask(4, 4), 2, all(AdjectiveGroup::Amount)).text, "This fundus image has no lesions.");
}

TEST(EmbedPrompt, DeterministicUnitNorm) {
    const auto p = class_prompt(LesionClass::EX);
    const Matrix a = embed_prompt(p, 32, 7), b = embed_prompt(p, 32, 7);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.rows(), 1u);
    EXPECT_NEAR(frobenius_norm(a), 1.0, 1e-12);
}

TEST(EmbedPrompt, OneAdjectiveChangesTheVector) {
    const SeverityProfile lo{{LesionClass::HE, SeverityLevel::Low}}, hi{{LesionClass::HE, SeverityLevel::High}};
    const auto a = severity_prompt(lo, 1, all(AdjectiveGroup::Density));
    const auto b = severity_prompt(hi, 1, all(AdjectiveGroup::Density));
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const Matrix x = embed_prompt(a, 16, seed), y = embed_prompt(b, 16, seed);
        double cos = 0.0;
        for (std::size_t i = 0; i < 16; ++i) cos += x[i] * y[i];
        EXPECT_LT(cos, 1.0 - 1e-9) << "seed " << seed;
    }
}

TEST(EmbedPrompt, TableOverridesHashing) {
    const auto path = std::filesystem::temp_directory_path() / "bivlgm_embed_table.txt";
    PromptEmbedder::save_table(path, {{"A fundus image with hard exudates", {3.0, 4.0}}});
    PromptEmbedder strict(2, 1);
    strict.load_table(path, true);
    const Matrix e = strict.embed(class_prompt(LesionClass::EX));
    EXPECT_NEAR(e[0], 0.6, 1e-15);
    EXPECT_NEAR(e[1], 0.8, 1e-15);
    EXPECT_THROW(strict.embed(class_prompt(LesionClass::HE)), std::exception);
    PromptEmbedder lenient(2, 1);
    lenient.load_table(path, false);
    EXPECT_EQ(lenient.embed(class_prompt(LesionClass::HE)), PromptEmbedder(2, 1).embed(class_prompt(LesionClass::HE)));
    std::filesystem::remove(path);
}

TEST(Parsing, SpecAndNames) {
    const SeveritySpec s = parse_spec("EX:high,ma:low");
    EXPECT_EQ(s[index_of(LesionClass::EX)], SeverityLevel::High);
    EXPECT_EQ(s[index_of(LesionClass::MA)], SeverityLevel::Low);
    EXPECT_FALSE(s[index_of(LesionClass::HE)].has_value());
    EXPECT_EQ(parse_spec(format_spec(s)), s);
    EXPECT_THROW(parse_class("XX"), std::invalid_argument);
    EXPECT_THROW(parse_group("loud"), std::invalid_argument);
}
