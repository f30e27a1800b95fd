#include "bivlgm/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string_view>

#include "bivlgm/rng.hpp"

namespace bivlgm {

namespace {

constexpr std::size_t kMaxAttempts = 200;
constexpr double kBackground = 0.4;
constexpr double kNoiseStd = 0.04;
// Additive intensity of each class in the rendered image (EX, HE, SE, MA).
constexpr std::array<double, kNumClasses> kIntensity{0.45, -0.25, 0.25, -0.15};

struct Band {
    double lo;  // inclusive
    double hi;  // exclusive
};

Band band_for(SeverityLevel level, double t1, double t2, double min_ratio) {
    switch (level) {
        case SeverityLevel::Low: return {min_ratio, t1};
        case SeverityLevel::Mid: return {t1, t2};
        case SeverityLevel::High: return {t2, std::min(1.0, t2 + std::max(0.1, t2))};
    }
    return {0.0, 0.0};
}

void paint_ellipse(Matrix& channel, std::size_t h, std::size_t w, double cy, double cx, double ry, double rx,
                   double angle) {
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double reach = std::max(rx, ry) + 1.0;
    const auto y0 = static_cast<std::ptrdiff_t>(std::floor(cy - reach));
    const auto y1 = static_cast<std::ptrdiff_t>(std::ceil(cy + reach));
    const auto x0 = static_cast<std::ptrdiff_t>(std::floor(cx - reach));
    const auto x1 = static_cast<std::ptrdiff_t>(std::ceil(cx + reach));
    for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(0, y0); y <= std::min<std::ptrdiff_t>(h - 1, y1); ++y) {
        for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(0, x0); x <= std::min<std::ptrdiff_t>(w - 1, x1); ++x) {
            const double dy = static_cast<double>(y) + 0.5 - cy;
            const double dx = static_cast<double>(x) + 0.5 - cx;
            const double u = (dx * ca + dy * sa) / rx;
            const double v = (-dx * sa + dy * ca) / ry;
            if (u * u + v * v <= 1.0) channel(0, static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) = 1.0;
        }
    }
}

double channel_ratio(const Matrix& channel) {
    std::size_t n = 0;
    for (double v : channel.data()) n += v > 0.5 ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(channel.size());
}

Matrix render_channel(Rng& rng, std::size_t h, std::size_t w, Band band, LesionClass cls) {
    const double area = static_cast<double>(h * w);
    for (std::size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
        const double target = rng.uniform(band.lo, band.lo + 0.8 * (band.hi - band.lo));
        // Microaneurysms are many small dots; other lesions fewer, larger blobs.
        const std::size_t blobs = cls == LesionClass::MA ? 3 + rng.below(5) : 1 + rng.below(3);
        const double blob_area = std::max(1.0, target * area / static_cast<double>(blobs));
        Matrix channel(1, h * w);
        for (std::size_t guard = 0; guard < 64 && channel_ratio(channel) < target; ++guard) {
            const double r = std::sqrt(blob_area / std::numbers::pi);
            const double ry = std::max(0.6, r * rng.uniform(0.7, 1.3));
            const double rx = std::max(0.6, r * r / ry);
            const double cy = rng.uniform(0.0, static_cast<double>(h));
            const double cx = rng.uniform(0.0, static_cast<double>(w));
            paint_ellipse(channel, h, w, cy, cx, ry, rx, rng.uniform(0.0, std::numbers::pi));
        }
        const double ratio = channel_ratio(channel);
        if (ratio >= band.lo && ratio < band.hi && ratio > 0.0) return channel;
    }
    throw InfeasibleSpec("cannot place " + std::string(class_code(cls)) + " lesions with ratio in [" +
                         std::to_string(band.lo) + ", " + std::to_string(band.hi) + ") on a " +
                         std::to_string(h) + "x" + std::to_string(w) + " canvas");
}

Matrix box_blur(const Matrix& img) {
    Matrix out(img.rows(), img.cols());
    const auto h = static_cast<std::ptrdiff_t>(img.rows());
    const auto w = static_cast<std::ptrdiff_t>(img.cols());
    for (std::ptrdiff_t y = 0; y < h; ++y) {
        for (std::ptrdiff_t x = 0; x < w; ++x) {
            double s = 0.0;
            int n = 0;
            for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
                for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
                    const auto yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    s += img(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
                    ++n;
                }
            }
            out(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = s / n;
        }
    }
    return out;
}

}  // namespace

SegSample gen_sample(std::uint64_t seed, std::size_t height, std::size_t width, const SeveritySpec& spec,
                     double t1, double t2) {
    if (height < 16 || width < 16) throw std::invalid_argument("synthetic samples must be at least 16x16");
    if (!(t1 > 0.0) || !(t1 < t2)) throw std::invalid_argument("thresholds must satisfy 0 < t1 < t2");
    if (std::none_of(spec.begin(), spec.end(), [](const auto& l) { return l.has_value(); })) {
        throw std::invalid_argument("severity spec must request at least one class");
    }
    Rng rng(derive_seed(seed, "synthetic-sample"));
    SegSample s;
    s.height = height;
    s.width = width;
    s.seed = seed;
    s.spec = spec;
    s.gt_mask = Mask(height, width);
    const double min_ratio = 1.0 / static_cast<double>(height * width);
    for (LesionClass c : kAllClasses) {
        const auto& level = spec[index_of(c)];
        if (!level) continue;
        Matrix channel = render_channel(rng, height, width, band_for(*level, t1, t2, min_ratio), c);
        std::copy(channel.data().begin(), channel.data().end(), s.gt_mask.values.row(index_of(c)).begin());
    }
    s.image = Matrix(height, width, kBackground);
    for (LesionClass c : kAllClasses) {
        if (!spec[index_of(c)]) continue;
        Matrix layer(height, width, std::vector<double>(s.gt_mask.values.row(index_of(c)).begin(),
                                                        s.gt_mask.values.row(index_of(c)).end()));
        s.image += box_blur(layer) * kIntensity[index_of(c)];
    }
    for (auto& v : s.image.data()) v = std::clamp(v + kNoiseStd * rng.normal(), 0.0, 1.0);
    return s;
}

SeveritySpec random_spec(Rng& rng) {
    SeveritySpec spec{};
    bool any = false;
    for (LesionClass c : kAllClasses) {
        if (rng.uniform() < 0.5) {
            spec[index_of(c)] = static_cast<SeverityLevel>(rng.below(3));
            any = true;
        }
    }
    if (!any) spec[rng.below(kNumClasses)] = static_cast<SeverityLevel>(rng.below(3));
    return spec;
}

std::vector<DatasetEntry> make_dataset_entries(std::uint64_t seed, std::size_t count) {
    Rng rng(derive_seed(seed, "dataset"));
    std::vector<DatasetEntry> entries;
    entries.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t s = rng.next();
        entries.push_back({s, random_spec(rng)});
    }
    return entries;
}

std::vector<SegSample> generate_dataset(const std::vector<DatasetEntry>& entries, std::size_t height,
                                        std::size_t width, double t1, double t2) {
    std::vector<SegSample> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(gen_sample(e.seed, height, width, e.spec, t1, t2));
    return out;
}

namespace {

constexpr char kMagic[5] = {'B', 'V', 'L', 'G', '1'};

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes_[pos_++])) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw std::runtime_error("BVLG1 stream truncated");
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string encode_sample(const SegSample& s) {
    std::string out(kMagic, sizeof kMagic);
    put_u32(out, static_cast<std::uint32_t>(kNumClasses));
    put_u32(out, static_cast<std::uint32_t>(s.height));
    put_u32(out, static_cast<std::uint32_t>(s.width));
    put_u64(out, s.seed);
    for (const auto& level : s.spec) put_u8(out, level ? static_cast<std::uint8_t>(static_cast<int>(*level) + 1) : 0);
    put_u8(out, s.predicted_mask ? 1 : 0);
    for (double v : s.image.data()) put_f64(out, v);
    for (double v : s.gt_mask.values.data()) put_u8(out, v > 0.5 ? 1 : 0);
    if (s.predicted_mask) {
        for (double v : s.predicted_mask->values.data()) put_f64(out, v);
    }
    return out;
}

SegSample decode_sample(const std::string& bytes) {
    if (bytes.size() < sizeof kMagic || bytes.compare(0, sizeof kMagic, kMagic, sizeof kMagic) != 0) {
        throw std::runtime_error("not a BVLG1 sample (bad magic)");
    }
    Reader r(std::string_view(bytes).substr(sizeof kMagic));
    const std::uint32_t channels = r.u32();
    if (channels != kNumClasses) throw std::runtime_error("BVLG1: unsupported channel count " + std::to_string(channels));
    SegSample s;
    s.height = r.u32();
    s.width = r.u32();
    if (s.height == 0 || s.width == 0) throw std::runtime_error("BVLG1: empty image");
    s.seed = r.u64();
    for (auto& level : s.spec) {
        const std::uint8_t code = r.u8();
        if (code > 3) throw std::runtime_error("BVLG1: bad severity code");
        if (code) level = static_cast<SeverityLevel>(code - 1);
    }
    const bool has_pred = r.u8() != 0;
    s.image = Matrix(s.height, s.width);
    for (auto& v : s.image.data()) v = r.f64();
    s.gt_mask = Mask(s.height, s.width);
    for (auto& v : s.gt_mask.values.data()) v = r.u8() ? 1.0 : 0.0;
    if (has_pred) {
        Mask pred(s.height, s.width);
        for (auto& v : pred.values.data()) v = r.f64();
        s.predicted_mask = std::move(pred);
    }
    if (!r.done()) throw std::runtime_error("BVLG1: trailing bytes");
    return s;
}

void write_sample(const std::filesystem::path& path, const SegSample& sample) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    const std::string bytes = encode_sample(sample);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

SegSample read_sample(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_sample(ss.str());
}

void write_dataset_manifest(const std::filesystem::path& path, const std::vector<DatasetEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "# seed\tspec\n";
    for (const auto& e : entries) out << e.seed << '\t' << format_spec(e.spec) << '\n';
}

std::vector<DatasetEntry> read_dataset_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::vector<DatasetEntry> entries;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw std::runtime_error("manifest line without tab: " + line);
        entries.push_back({std::stoull(line.substr(0, tab)), parse_spec(line.substr(tab + 1))});
    }
    return entries;
}

}  // namespace bivlgm
