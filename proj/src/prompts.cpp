#include "bivlgm/prompts.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "bivlgm/rng.hpp"

namespace bivlgm {

std::string_view severity_template(int index) {
    static constexpr std::array<std::string_view, kNumTemplates> templates{
        "This fundus image has {}.",
        "There are {} in this fundus image.",
        "A fundus image with {}.",
        "A diabetic retinopathy image has {}.",
        "{} in a diabetic retinopathy fundus image.",
    };
    if (index < 1 || index > kNumTemplates) {
        throw std::invalid_argument("template index must be in 1.." + std::to_string(kNumTemplates) +
                                    ", got " + std::to_string(index));
    }
    return templates[static_cast<std::size_t>(index - 1)];
}

double lesion_ratio(const Mask& mask, LesionClass cls) {
    std::size_t count = 0;
    for (double v : mask.values.row(index_of(cls))) count += v > 0.5 ? 1 : 0;
    return static_cast<double>(count) / static_cast<double>(mask.pixels());
}

SeverityLevel severity_level(double ratio, double t1, double t2) {
    if (!(t1 >= 0.0) || !(t1 < t2)) {
        throw std::invalid_argument("severity thresholds must satisfy 0 <= t1 < t2");
    }
    if (ratio < t1) return SeverityLevel::Low;
    if (ratio < t2) return SeverityLevel::Mid;
    return SeverityLevel::High;
}

SeverityProfile severity_profile(const Mask& mask, double t1, double t2) {
    SeverityProfile profile;
    for (LesionClass c : kAllClasses) {
        const double r = lesion_ratio(mask, c);
        if (r > 0.0) profile.emplace_back(c, severity_level(r, t1, t2));
    }
    return profile;
}

MedicalPrompt class_prompt(LesionClass cls) {
    MedicalPrompt p;
    p.text = "A fundus image with " + std::string(display_name(cls));
    p.records.push_back({cls, std::nullopt, std::nullopt});
    return p;
}

MedicalPrompt severity_prompt(const SeverityProfile& profile, int template_index, const GroupChoice& groups) {
    const std::string_view tmpl = severity_template(template_index);
    MedicalPrompt p;
    p.template_index = template_index;
    if (profile.empty()) {
        p.text = kNoLesionsSentence;
        return p;
    }
    std::string slot;
    for (const auto& [cls, level] : profile) {
        const AdjectiveGroup g = groups[index_of(cls)];
        if (!slot.empty()) slot += " and ";
        slot += adjective(g, level);
        slot += ' ';
        slot += display_name(cls);
        p.records.push_back({cls, level, g});
    }
    const auto at = tmpl.find("{}");
    p.text = std::string(tmpl.substr(0, at)) + slot + std::string(tmpl.substr(at + 2));
    return p;
}

MedicalPrompt severity_prompt(const Mask& mask, int template_index, const GroupChoice& groups, double t1,
                              double t2) {
    severity_template(template_index);
    return severity_prompt(severity_profile(mask, t1, t2), template_index, groups);
}

PromptEmbedder::PromptEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim == 0) throw std::invalid_argument("embedding dimension must be >= 1");
}

void PromptEmbedder::load_table(const std::filesystem::path& path, bool strict) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open embedding table " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("DIM ", 0) != 0) {
        throw std::runtime_error(path.string() + ": first line must be 'DIM <d>'");
    }
    const std::size_t d = std::stoul(line.substr(4));
    if (d != dim_) {
        throw std::runtime_error(path.string() + ": table dimension " + std::to_string(d) +
                                 " does not match embedder dimension " + std::to_string(dim_));
    }
    std::map<std::string, std::vector<double>, std::less<>> table;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": missing tab separator");
        }
        std::istringstream vals(line.substr(tab + 1));
        std::vector<double> v;
        double x;
        while (vals >> x) v.push_back(x);
        if (v.size() != d) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                                     std::to_string(d) + " values, got " + std::to_string(v.size()));
        }
        table[line.substr(0, tab)] = std::move(v);
    }
    table_ = std::move(table);
    strict_ = strict;
}

void PromptEmbedder::save_table(const std::filesystem::path& path,
                                const std::map<std::string, std::vector<double>>& table) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write embedding table " + path.string());
    std::size_t d = table.empty() ? 0 : table.begin()->second.size();
    out << "DIM " << d << '\n';
    out << std::setprecision(17);
    for (const auto& [text, v] : table) {
        if (v.size() != d) throw std::invalid_argument("embedding table rows differ in length");
        out << text << '\t';
        for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << v[i];
        out << '\n';
    }
}

Matrix PromptEmbedder::embed(std::string_view text) const {
    if (!table_.empty()) {
        auto it = table_.find(text);
        if (it != table_.end()) {
            Matrix e(1, dim_, it->second);
            const double norm = frobenius_norm(e);
            if (!(norm > 0.0)) throw std::invalid_argument("zero embedding for \"" + std::string(text) + "\"");
            return e * (1.0 / norm);
        }
        if (strict_) throw std::invalid_argument("prompt not in embedding table: \"" + std::string(text) + "\"");
    }
    return hash_embed(text);
}

Matrix PromptEmbedder::hash_embed(std::string_view text) const {
    Matrix acc(1, dim_);
    std::size_t tokens = 0;
    std::istringstream ss{std::string(text)};
    std::string token;
    while (ss >> token) {
        Rng rng(derive_seed(seed_, token));
        for (std::size_t j = 0; j < dim_; ++j) acc(0, j) += rng.normal();
        ++tokens;
    }
    if (tokens == 0) throw std::invalid_argument("cannot embed an empty prompt");
    acc *= 1.0 / static_cast<double>(tokens);
    const double norm = frobenius_norm(acc);
    acc *= 1.0 / norm;
    return acc;
}

Matrix embed_prompt(const MedicalPrompt& prompt, std::size_t dim, std::uint64_t seed) {
    return PromptEmbedder(dim, seed).embed(prompt);
}

}  // namespace bivlgm
