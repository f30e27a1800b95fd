#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bivlgm/lesion.hpp"
#include "bivlgm/prompts.hpp"
#include "bivlgm/rng.hpp"

namespace bivlgm {

struct SegSample {
    std::size_t height = 0;
    std::size_t width = 0;
    Matrix image;  // H x W, values in [0, 1]
    Mask gt_mask;
    std::optional<Mask> predicted_mask;
    std::uint64_t seed = 0;
    SeveritySpec spec{};

    bool operator==(const SegSample&) const = default;
};

class InfeasibleSpec : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Renders seeded elliptical blobs per requested class until each class's
/// lesion ratio lands in its requested severity band. Deterministic per
/// (seed, shape, spec, thresholds).
SegSample gen_sample(std::uint64_t seed, std::size_t height, std::size_t width, const SeveritySpec& spec,
                     double t1 = kDefaultT1, double t2 = kDefaultT2);

/// Random spec: each class independently absent with probability 1/2, otherwise
/// a uniformly chosen level; at least one class is always present.
SeveritySpec random_spec(Rng& rng);

struct DatasetEntry {
    std::uint64_t seed;
    SeveritySpec spec;
};

/// Seeds and specs of a synthetic dataset, derived from one master seed.
std::vector<DatasetEntry> make_dataset_entries(std::uint64_t seed, std::size_t count);
std::vector<SegSample> generate_dataset(const std::vector<DatasetEntry>& entries, std::size_t height,
                                        std::size_t width, double t1 = kDefaultT1, double t2 = kDefaultT2);

// "BVLG1" binary container: magic, u32 channels/height/width, u64 seed,
// u8 spec[4], u8 has_prediction, then f64 image, u8 gt mask and optional f64
// predicted mask. All integers and floats little-endian.
void write_sample(const std::filesystem::path& path, const SegSample& sample);
SegSample read_sample(const std::filesystem::path& path);
std::string encode_sample(const SegSample& sample);
SegSample decode_sample(const std::string& bytes);

/// Plain-text manifest, one "<seed>\t<spec>" line per sample after a header.
void write_dataset_manifest(const std::filesystem::path& path, const std::vector<DatasetEntry>& entries);
std::vector<DatasetEntry> read_dataset_manifest(const std::filesystem::path& path);

}  // namespace bivlgm
