#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bivlgm/lesion.hpp"
#include "bivlgm/matrix.hpp"

namespace bivlgm {

inline constexpr double kDefaultT1 = 0.06;
inline constexpr double kDefaultT2 = 0.12;
inline constexpr int kNumTemplates = 5;

/// Severity sentence templates, 1-based. "{}" marks the "[ADJ] [CLS]" slot.
std::string_view severity_template(int index);

inline constexpr std::string_view kNoLesionsSentence = "This fundus image has no lesions.";

struct PromptRecord {
    LesionClass cls;
    std::optional<SeverityLevel> level;
    std::optional<AdjectiveGroup> group;
};

struct MedicalPrompt {
    std::string text;
    /// 1-5 for severity prompts, 0 for class prompts.
    int template_index = 0;
    std::vector<PromptRecord> records;
};

/// Per-class adjective group, indexed by canonical class order.
using GroupChoice = std::array<AdjectiveGroup, kNumClasses>;

/// Fraction of pixels of `cls` that are set.
double lesion_ratio(const Mask& mask, LesionClass cls);

/// Low below t1, Mid on [t1, t2), High from t2 upward.
SeverityLevel severity_level(double ratio, double t1 = kDefaultT1, double t2 = kDefaultT2);

SeverityProfile severity_profile(const Mask& mask, double t1 = kDefaultT1, double t2 = kDefaultT2);

/// "A fundus image with {display name}"
MedicalPrompt class_prompt(LesionClass cls);

MedicalPrompt severity_prompt(const SeverityProfile& profile, int template_index, const GroupChoice& groups);
MedicalPrompt severity_prompt(const Mask& mask, int template_index, const GroupChoice& groups,
                              double t1 = kDefaultT1, double t2 = kDefaultT2);

/// Deterministic text embeddings. Tokens (whitespace-split) hash to seeded
/// pseudo-Gaussian vectors which are mean-pooled and normalized to unit length.
/// A loaded embedding table takes precedence for exact text matches; its rows
/// are normalized the same way.
class PromptEmbedder {
public:
    PromptEmbedder(std::size_t dim, std::uint64_t seed);

    /// Reads the "DIM <d>" / "<text>\t<floats>" table format. In strict mode a
    /// prompt missing from the table is an error instead of falling back to hashing.
    void load_table(const std::filesystem::path& path, bool strict);
    static void save_table(const std::filesystem::path& path,
                           const std::map<std::string, std::vector<double>>& table);

    std::size_t dim() const { return dim_; }
    bool has_table() const { return !table_.empty(); }

    /// 1 x dim row.
    Matrix embed(std::string_view text) const;
    Matrix embed(const MedicalPrompt& prompt) const { return embed(prompt.text); }

private:
    Matrix hash_embed(std::string_view text) const;

    std::size_t dim_;
    std::uint64_t seed_;
    std::map<std::string, std::vector<double>, std::less<>> table_;
    bool strict_ = false;
};

Matrix embed_prompt(const MedicalPrompt& prompt, std::size_t dim, std::uint64_t seed);

}  // namespace bivlgm
