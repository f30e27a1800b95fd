#include "bivlgm/lesion.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace bivlgm {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

}  // namespace

std::string_view class_code(LesionClass c) {
    static constexpr std::array<std::string_view, kNumClasses> codes{"EX", "HE", "SE", "MA"};
    return codes[index_of(c)];
}

std::string_view display_name(LesionClass c) {
    static constexpr std::array<std::string_view, kNumClasses> names{
        "hard exudates", "hemorrhages", "soft exudates", "microaneurysms"};
    return names[index_of(c)];
}

std::string_view level_name(SeverityLevel l) {
    static constexpr std::array<std::string_view, 3> names{"low", "mid", "high"};
    return names[static_cast<std::size_t>(l)];
}

std::string_view group_name(AdjectiveGroup g) {
    static constexpr std::array<std::string_view, 3> names{"amount", "density", "severity"};
    return names[static_cast<std::size_t>(g)];
}

std::string_view adjective(AdjectiveGroup g, SeverityLevel l) {
    static constexpr std::array<std::array<std::string_view, 3>, 3> table{{
        {"few", "some", "many"},
        {"low-density", "medium-density", "high-density"},
        {"low-severity", "medium-severity", "high-severity"},
    }};
    return table[static_cast<std::size_t>(g)][static_cast<std::size_t>(l)];
}

LesionClass parse_class(std::string_view s) {
    const std::string k = lower(trim(s));
    for (LesionClass c : kAllClasses) {
        if (k == lower(class_code(c))) return c;
    }
    throw std::invalid_argument("unknown lesion class '" + std::string(s) + "' (expected EX, HE, SE or MA)");
}

SeverityLevel parse_level(std::string_view s) {
    const std::string k = lower(trim(s));
    if (k == "low") return SeverityLevel::Low;
    if (k == "mid" || k == "medium") return SeverityLevel::Mid;
    if (k == "high") return SeverityLevel::High;
    throw std::invalid_argument("unknown severity level '" + std::string(s) + "' (expected low, mid or high)");
}

AdjectiveGroup parse_group(std::string_view s) {
    const std::string k = lower(trim(s));
    if (k == "amount") return AdjectiveGroup::Amount;
    if (k == "density") return AdjectiveGroup::Density;
    if (k == "severity") return AdjectiveGroup::Severity;
    throw std::invalid_argument("unknown adjective group '" + std::string(s) +
                                "' (expected amount, density or severity)");
}

Mask::Mask(std::size_t h, std::size_t w, Matrix v) : height(h), width(w), values(std::move(v)) {
    if (values.rows() != kNumClasses || values.cols() != h * w) {
        throw ShapeError("mask values " + values.shape_string() + " do not match " +
                         std::to_string(kNumClasses) + "x" + std::to_string(h) + "*" + std::to_string(w));
    }
}

std::string format_spec(const SeveritySpec& spec) {
    std::string out;
    for (LesionClass c : kAllClasses) {
        const auto& level = spec[index_of(c)];
        if (!level) continue;
        if (!out.empty()) out += ',';
        out += class_code(c);
        out += ':';
        out += level_name(*level);
    }
    return out;
}

SeveritySpec parse_spec(std::string_view s) {
    SeveritySpec spec{};
    bool any = false;
    while (!s.empty()) {
        const auto comma = s.find(',');
        std::string_view item = trim(s.substr(0, comma));
        s = comma == std::string_view::npos ? std::string_view{} : s.substr(comma + 1);
        if (item.empty()) continue;
        const auto colon = item.find(':');
        if (colon == std::string_view::npos) {
            throw std::invalid_argument("spec entry '" + std::string(item) + "' must look like CLS:level");
        }
        const LesionClass c = parse_class(item.substr(0, colon));
        if (spec[index_of(c)]) {
            throw std::invalid_argument("class " + std::string(class_code(c)) + " listed twice in spec");
        }
        spec[index_of(c)] = parse_level(item.substr(colon + 1));
        any = true;
    }
    if (!any) throw std::invalid_argument("severity spec must name at least one class");
    return spec;
}

}  // namespace bivlgm
