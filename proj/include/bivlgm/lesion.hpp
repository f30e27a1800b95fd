#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bivlgm/matrix.hpp"

namespace bivlgm {

/// Canonical order: EX, HE, SE, MA.
enum class LesionClass { EX = 0, HE = 1, SE = 2, MA = 3 };
inline constexpr std::size_t kNumClasses = 4;
inline constexpr std::array<LesionClass, kNumClasses> kAllClasses{LesionClass::EX, LesionClass::HE,
                                                                  LesionClass::SE, LesionClass::MA};

enum class SeverityLevel { Low = 0, Mid = 1, High = 2 };

enum class AdjectiveGroup { Amount = 0, Density = 1, Severity = 2 };

std::string_view class_code(LesionClass c);
std::string_view display_name(LesionClass c);
std::string_view level_name(SeverityLevel l);
std::string_view group_name(AdjectiveGroup g);
std::string_view adjective(AdjectiveGroup g, SeverityLevel l);

// Case-insensitive parsers; throw std::invalid_argument on unknown names.
LesionClass parse_class(std::string_view s);
SeverityLevel parse_level(std::string_view s);
AdjectiveGroup parse_group(std::string_view s);

inline std::size_t index_of(LesionClass c) { return static_cast<std::size_t>(c); }

/// Multi-channel lesion mask, one row per class in canonical order and one
/// column per pixel (row-major over H x W). Binary for ground truth, soft in
/// [0, 1] for predictions.
struct Mask {
    std::size_t height = 0;
    std::size_t width = 0;
    Matrix values;

    Mask() : Mask(1, 1) {}
    Mask(std::size_t h, std::size_t w) : height(h), width(w), values(kNumClasses, h * w) {}
    Mask(std::size_t h, std::size_t w, Matrix v);

    std::size_t pixels() const { return height * width; }
    double& at(LesionClass c, std::size_t y, std::size_t x) { return values(index_of(c), y * width + x); }
    double at(LesionClass c, std::size_t y, std::size_t x) const {
        return values(index_of(c), y * width + x);
    }
    bool operator==(const Mask&) const = default;
};

/// Ordered (class, level) pairs for the classes present in a mask.
using SeverityProfile = std::vector<std::pair<LesionClass, SeverityLevel>>;

/// Per-class target band for synthetic samples; nullopt means absent.
using SeveritySpec = std::array<std::optional<SeverityLevel>, kNumClasses>;

std::string format_spec(const SeveritySpec& spec);
/// Parses "EX:high,HE:low" style lists.
SeveritySpec parse_spec(std::string_view s);

}  // namespace bivlgm
