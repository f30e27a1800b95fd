#pragma once

// Bi-level training: the alignment side (image/text encoders, edge
// generators, GCNs, affinities) is fitted on ground-truth masks, the
// segmenter on its own predicted masks, alternating with the other side frozen.

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bivlgm/autodiff.hpp"
#include "bivlgm/features.hpp"
#include "bivlgm/gcn.hpp"
#include "bivlgm/gradcheck.hpp"
#include "bivlgm/graph.hpp"
#include "bivlgm/losses.hpp"
#include "bivlgm/matching.hpp"
#include "bivlgm/metrics.hpp"
#include "bivlgm/prompts.hpp"
#include "bivlgm/synthdata.hpp"
#include "json.hpp"

namespace bivlgm {

enum class LossMode { Dice, Full, Contrastive };

std::string_view loss_mode_name(LossMode m);
LossMode parse_loss_mode(std::string_view s);

struct TrainConfig {
    LossWeights weights;
    double t1 = kDefaultT1;
    double t2 = kDefaultT2;
    std::size_t batch_size = 8;
    double encoder_lr = 1e-2;
    double segmenter_lr = 1.0;
    std::size_t budget = 500;
    std::uint64_t seed = 0;
    std::size_t feature_dim = 16;
    /// Leading fraction of the budget spent on alignment steps only.
    double warmup_fraction = 0.2;
    /// Severity template per sample; nullopt draws one of the five per sample and round.
    std::optional<int> template_index;
    /// Adjective group per class; nullopt draws one per sample and round.
    std::array<std::optional<AdjectiveGroup>, kNumClasses> groups{};
    SinkhornConfig sinkhorn = SinkhornConfig::differentiable();
    /// Sentence-level ground truth is the identity even when severity profiles repeat.
    bool strict_diagonal = false;
    LossMode losses = LossMode::Full;
    double temperature = kDefaultTemperature;
    std::size_t image_size = 64;
    std::size_t train_samples = 32;
    std::size_t test_samples = 16;

    void validate() const;
    std::size_t warmup_rounds() const;
};

nlohmann::ordered_json to_json(const TrainConfig& cfg);
/// Applies any keys present in `j` on top of `cfg`.
void apply_json(TrainConfig& cfg, const nlohmann::json& j);

/// Per-pixel scorer: a 3x3 filter bank on the image, a 1x1 mixing layer that
/// yields the feature map f, and a 1x1 head with one sigmoid channel per class.
struct SegmenterParams {
    Matrix conv;       // 9 x D
    Matrix conv_bias;  // 1 x D
    Matrix mix;        // D x D
    Matrix mix_bias;   // 1 x D
    Matrix head;       // D x C
    Matrix head_bias;  // 1 x C

    static SegmenterParams init(std::size_t dim, Rng& rng);
    std::size_t dim() const { return conv.cols(); }

    struct Vars {
        Var conv, conv_bias, mix, mix_bias, head, head_bias;
    };

    template <typename F>
    void for_each(F&& f) {
        f("conv", conv);
        f("conv_bias", conv_bias);
        f("mix", mix);
        f("mix_bias", mix_bias);
        f("head", head);
        f("head_bias", head_bias);
    }
    bool operator==(const SegmenterParams&) const = default;
};

/// Parameters of one matching level (word or sentence).
struct LevelParams {
    EdgeGeneratorParams vision_edges;
    EdgeGeneratorParams text_edges;
    GcnParams gcn;
    AffinityParams affinity;

    static LevelParams init(std::size_t dim, Rng& rng);

    template <typename F>
    void for_each(F&& f) {
        vision_edges.for_each([&](const char* n, Matrix& m) { f(std::string("vision_edges.") + n, m); });
        text_edges.for_each([&](const char* n, Matrix& m) { f(std::string("text_edges.") + n, m); });
        gcn.for_each([&](const char* n, Matrix& m) { f(std::string("gcn.") + n, m); });
        affinity.for_each([&](const char* n, Matrix& m) { f(std::string("affinity.") + n, m); });
    }
    bool operator==(const LevelParams& o) const;
};

struct AlignmentParams {
    EncoderParams image_encoder;
    EncoderParams text_encoder;
    Matrix global_proj;  // D x D
    LevelParams word;
    LevelParams sentence;

    static AlignmentParams init(std::size_t dim, Rng& rng);

    template <typename F>
    void for_each(F&& f) {
        image_encoder.for_each([&](const char* n, Matrix& m) { f(std::string("image_encoder.") + n, m); });
        text_encoder.for_each([&](const char* n, Matrix& m) { f(std::string("text_encoder.") + n, m); });
        f(std::string("global_proj"), global_proj);
        word.for_each([&](const std::string& n, Matrix& m) { f("word." + n, m); });
        sentence.for_each([&](const std::string& n, Matrix& m) { f("sentence." + n, m); });
    }
};

struct ModelParams {
    SegmenterParams segmenter;
    AlignmentParams alignment;

    static ModelParams init(std::size_t dim, std::uint64_t seed);
};

/// 3x3 zero-padded neighbourhoods of every pixel of the standardized image
/// (zero mean, unit variance): (H*W) x 9.
Matrix image_patches(const Matrix& image);

struct SegmenterOutput {
    Var features;  // (H*W) x D
    Var mask;      // C x (H*W)
};

/// Parameter matrices bound to a tape, keyed by address for the update step.
using ParamSlots = std::vector<std::pair<const Matrix*, Var>>;

SegmenterParams::Vars bind_segmenter(const SegmenterParams& params, Tape& tape, bool trainable,
                                     ParamSlots* slots = nullptr);
SegmenterOutput run_segmenter(Var patches, const SegmenterParams::Vars& params);

Mask predict_mask(const SegSample& sample, const SegmenterParams& params);
FeatureMap feature_map(const SegSample& sample, const SegmenterParams& params);

/// Identity over the GT-present classes.
GtCorrespondence build_word_gt(std::span<const LesionClass> present);
/// (i, j) = 1 iff profile i equals profile j; identity when `strict_diagonal`.
GtCorrespondence build_sentence_gt(const std::vector<SeverityProfile>& profiles, bool strict_diagonal = false);

/// Mean absolute difference between the pairwise cosine-distance matrices of
/// the rows of `before` and `after`.
double relation_distortion(const Matrix& before, const Matrix& after);

/// A sample with everything that does not depend on parameters precomputed.
struct PreparedSample {
    const SegSample* sample;
    Matrix patches;
    std::vector<LesionClass> present;
    std::vector<std::size_t> present_rows;
    SeverityProfile profile;
};

PreparedSample prepare(const SegSample& sample, double t1, double t2);

/// One round's batch with its severity prompts.
struct Batch {
    std::vector<const PreparedSample*> samples;
    std::vector<MedicalPrompt> severity_prompts;
};

Batch make_batch(std::vector<const PreparedSample*> samples, const TrainConfig& cfg, Rng& rng);

class NonFiniteTraining : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct StepLosses {
    double total = 0.0;
    double dice = 0.0;
    double local = 0.0;
    double global = 0.0;
};

/// Shared prompt embeddings for a run.
struct TextInputs {
    Matrix class_embeddings;  // 4 x D, canonical class order
    PromptEmbedder embedder;

    TextInputs(std::size_t dim, std::uint64_t seed);
};

/// L_E on the tape with every alignment parameter registered as a variable in
/// `slots`; the segmenter is evaluated as a constant.
/// `features`, when given, holds each sample's segmenter feature values so
/// the segmenter is not run again.
Var encoder_objective(Tape& tape, const Batch& batch, const ModelParams& params, const TextInputs& text,
                      const TrainConfig& cfg, ParamSlots* slots, StepLosses* parts,
                      const std::vector<Matrix>* features = nullptr);

/// L_G on the tape for a segmenter already bound to `tape`; the alignment
/// side enters as constants.
Var generator_objective(Tape& tape, const Batch& batch, const SegmenterParams::Vars& segmenter,
                        const AlignmentParams& alignment, const TextInputs& text, const TrainConfig& cfg,
                        StepLosses* parts);
Var generator_objective(Tape& tape, const Batch& batch, const std::vector<SegmenterOutput>& outputs,
                        const AlignmentParams& alignment, const TextInputs& text, const TrainConfig& cfg,
                        StepLosses* parts);

StepLosses encoder_step(const Batch& batch, ModelParams& params, const TextInputs& text, const TrainConfig& cfg,
                        const std::vector<Matrix>* features = nullptr);
StepLosses segmenter_step(const Batch& batch, ModelParams& params, const TextInputs& text, const TrainConfig& cfg);

struct RoundLosses {
    StepLosses encoder;
    std::optional<StepLosses> segmenter;
};

/// One alternating round: an encoder step, then a segmenter step unless
/// `encoder_only`. Equivalent to calling the two steps in turn, with the
/// segmenter forward pass shared between them.
RoundLosses train_round(const Batch& batch, ModelParams& params, const TextInputs& text, const TrainConfig& cfg,
                        bool encoder_only);

/// L_G as a program over the six segmenter matrices, for gradient checking.
DifferentiableProgram generator_program(const Batch& batch, const ModelParams& params, const TextInputs& text,
                                        const TrainConfig& cfg);

struct LossRecord {
    std::size_t round = 0;
    StepLosses encoder;
    std::optional<StepLosses> segmenter;
};

struct Dataset {
    std::vector<DatasetEntry> train_entries;
    std::vector<DatasetEntry> test_entries;
    std::vector<SegSample> train;
    std::vector<SegSample> test;

    /// The standard synthetic suite for a config: train/test splits drawn from cfg.seed.
    static Dataset synthetic(const TrainConfig& cfg);
};

struct RunManifest {
    TrainConfig config;
    std::string status = "complete";
    std::vector<LossRecord> log;
    DatasetMetrics initial_metrics;
    DatasetMetrics final_metrics;
    /// Class-centroid image-encoder features on the test split, both computed
    /// from the trained segmenter: "before" through the initial alignment
    /// parameters, "after" through the trained ones. Holding the segmenter
    /// fixed isolates what alignment training did to the feature geometry.
    Matrix centroids_before;
    Matrix centroids_after;
    double relation_distortion = 0.0;

    nlohmann::ordered_json to_json() const;
    std::string loss_csv() const;
    std::string metrics_csv() const;
};

struct TrainResult {
    RunManifest manifest;
    ModelParams params;
};

/// Alternates encoder and segmenter steps for cfg.budget rounds and evaluates
/// on the test split. On a non-finite loss the manifest carries the failure
/// status and the rounds completed so far.
TrainResult train(const Dataset& data, const TrainConfig& cfg);

std::vector<ImageMetrics> evaluate(const std::vector<SegSample>& samples, const SegmenterParams& params);

/// Mean image-encoder feature of each class over the samples where it is
/// present (GT masks); rows for classes never present are omitted.
Matrix class_centroids(const std::vector<SegSample>& samples, const ModelParams& params);

nlohmann::ordered_json to_json(const DatasetMetrics& m);

}  // namespace bivlgm
