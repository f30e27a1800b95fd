#include "bivlgm/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

namespace bivlgm {

std::string_view loss_mode_name(LossMode m) {
    switch (m) {
        case LossMode::Dice: return "dice";
        case LossMode::Full: return "full";
        case LossMode::Contrastive: return "contrastive";
    }
    return "?";
}

LossMode parse_loss_mode(std::string_view s) {
    std::string lower(s);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "dice") return LossMode::Dice;
    if (lower == "full") return LossMode::Full;
    if (lower == "contrastive") return LossMode::Contrastive;
    throw std::invalid_argument("unknown loss mode '" + std::string(s) + "' (expected dice, full or contrastive)");
}

void TrainConfig::validate() const {
    weights.validate();
    if (!(0.0 <= t1 && t1 < t2)) throw std::invalid_argument("config: thresholds must satisfy 0 <= t1 < t2");
    if (batch_size == 0) throw std::invalid_argument("config: batch size must be positive");
    if (!(encoder_lr >= 0.0) || !(segmenter_lr >= 0.0)) {
        throw std::invalid_argument("config: learning rates must be non-negative");
    }
    if (feature_dim == 0) throw std::invalid_argument("config: feature_dim must be positive");
    if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
        throw std::invalid_argument("config: warmup_fraction must lie in [0, 1]");
    }
    if (template_index && (*template_index < 1 || *template_index > kNumTemplates)) {
        throw std::invalid_argument("config: template must be in 1..5");
    }
    sinkhorn.validate();
    if (!(temperature > 0.0)) throw std::invalid_argument("config: temperature must be positive");
    if (image_size < 16) throw std::invalid_argument("config: image_size must be at least 16");
    if (train_samples == 0 || test_samples == 0) {
        throw std::invalid_argument("config: train and test splits must be nonempty");
    }
}

std::size_t TrainConfig::warmup_rounds() const {
    return static_cast<std::size_t>(std::floor(warmup_fraction * static_cast<double>(budget)));
}

nlohmann::ordered_json to_json(const TrainConfig& cfg) {
    nlohmann::ordered_json groups = nlohmann::ordered_json::object();
    for (LesionClass c : kAllClasses) {
        const auto& g = cfg.groups[index_of(c)];
        groups[std::string(class_code(c))] = g ? nlohmann::ordered_json(std::string(group_name(*g))) : nullptr;
    }
    nlohmann::ordered_json j;
    j["lambda_a"] = cfg.weights.lambda_a;
    j["lambda_b"] = cfg.weights.lambda_b;
    j["lambda_c"] = cfg.weights.lambda_c;
    j["lambda_d"] = cfg.weights.lambda_d;
    j["lambda_e"] = cfg.weights.lambda_e;
    j["t1"] = cfg.t1;
    j["t2"] = cfg.t2;
    j["batch"] = cfg.batch_size;
    j["encoder_lr"] = cfg.encoder_lr;
    j["segmenter_lr"] = cfg.segmenter_lr;
    j["budget"] = cfg.budget;
    j["seed"] = cfg.seed;
    j["feature_dim"] = cfg.feature_dim;
    j["warmup_fraction"] = cfg.warmup_fraction;
    j["template"] = cfg.template_index ? nlohmann::ordered_json(*cfg.template_index) : nullptr;
    j["groups"] = groups;
    j["sinkhorn_iterations"] = cfg.sinkhorn.max_iterations;
    j["sinkhorn_tolerance"] = cfg.sinkhorn.tolerance;
    j["strict_diagonal"] = cfg.strict_diagonal;
    j["losses"] = std::string(loss_mode_name(cfg.losses));
    j["temperature"] = cfg.temperature;
    j["image_size"] = cfg.image_size;
    j["train_samples"] = cfg.train_samples;
    j["test_samples"] = cfg.test_samples;
    return j;
}

void apply_json(TrainConfig& cfg, const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
    static const std::vector<std::string> known{
        "lambda_a", "lambda_b",    "lambda_c",       "lambda_d",        "lambda_e",         "t1",
        "t2",       "batch",       "encoder_lr",     "segmenter_lr",    "budget",           "seed",
        "feature_dim", "warmup_fraction", "template", "groups",         "sinkhorn_iterations", "sinkhorn_tolerance",
        "strict_diagonal", "losses", "temperature",  "image_size",      "train_samples",    "test_samples"};
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw std::invalid_argument("config: unknown key '" + key + "'");
        }
    }
    try {
        auto num = [&](const char* key, double& out) {
            if (j.contains(key)) out = j.at(key).get<double>();
        };
        auto count = [&](const char* key, std::size_t& out) {
            if (!j.contains(key)) return;
            const auto& v = j.at(key);
            if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
                throw std::invalid_argument(std::string("config: '") + key + "' must be a non-negative integer");
            }
            out = v.get<std::size_t>();
        };
        num("lambda_a", cfg.weights.lambda_a);
        num("lambda_b", cfg.weights.lambda_b);
        num("lambda_c", cfg.weights.lambda_c);
        num("lambda_d", cfg.weights.lambda_d);
        num("lambda_e", cfg.weights.lambda_e);
        num("t1", cfg.t1);
        num("t2", cfg.t2);
        count("batch", cfg.batch_size);
        num("encoder_lr", cfg.encoder_lr);
        num("segmenter_lr", cfg.segmenter_lr);
        count("budget", cfg.budget);
        if (j.contains("seed")) {
            const auto& v = j.at("seed");
            if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
                throw std::invalid_argument("config: 'seed' must be a non-negative integer");
            }
            cfg.seed = v.get<std::uint64_t>();
        }
        count("feature_dim", cfg.feature_dim);
        num("warmup_fraction", cfg.warmup_fraction);
        if (j.contains("template")) {
            const auto& v = j.at("template");
            if (v.is_null()) cfg.template_index.reset();
            else cfg.template_index = v.get<int>();
        }
        if (j.contains("groups")) {
            const auto& g = j.at("groups");
            if (!g.is_object()) throw std::invalid_argument("config: 'groups' must map class codes to groups");
            for (const auto& [cls, val] : g.items()) {
                auto& slot = cfg.groups[index_of(parse_class(cls))];
                if (val.is_null()) slot.reset();
                else slot = parse_group(val.get<std::string>());
            }
        }
        count("sinkhorn_iterations", cfg.sinkhorn.max_iterations);
        num("sinkhorn_tolerance", cfg.sinkhorn.tolerance);
        if (j.contains("strict_diagonal")) cfg.strict_diagonal = j.at("strict_diagonal").get<bool>();
        if (j.contains("losses")) cfg.losses = parse_loss_mode(j.at("losses").get<std::string>());
        num("temperature", cfg.temperature);
        count("image_size", cfg.image_size);
        count("train_samples", cfg.train_samples);
        count("test_samples", cfg.test_samples);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
}

SegmenterParams SegmenterParams::init(std::size_t dim, Rng& rng) {
    const double bc = 1.0 / 3.0;
    const double bd = 1.0 / std::sqrt(static_cast<double>(dim));
    SegmenterParams p{rng.uniform_matrix(9, dim, -bc, bc), rng.uniform_matrix(1, dim, -bc, bc),
                      rng.uniform_matrix(dim, dim, -bd, bd), rng.uniform_matrix(1, dim, -bd, bd),
                      rng.uniform_matrix(dim, kNumClasses, -bd, bd), Matrix(1, kNumClasses)};
    // Start from a mostly-background prediction.
    for (auto& v : p.head_bias.data()) v = -2.0;
    return p;
}

bool LevelParams::operator==(const LevelParams& o) const {
    return vision_edges.query == o.vision_edges.query && vision_edges.key == o.vision_edges.key &&
           text_edges.query == o.text_edges.query && text_edges.key == o.text_edges.key &&
           gcn.weight == o.gcn.weight && affinity.bilinear == o.affinity.bilinear;
}

LevelParams LevelParams::init(std::size_t dim, Rng& rng) {
    LevelParams p{EdgeGeneratorParams::init(dim, rng), EdgeGeneratorParams::init(dim, rng), GcnParams::init(dim, rng),
                  AffinityParams::init(dim, rng)};
    return p;
}

AlignmentParams AlignmentParams::init(std::size_t dim, Rng& rng) {
    AlignmentParams p{EncoderParams::init(dim, rng), EncoderParams::init(dim, rng), Matrix::identity(dim),
                      LevelParams::init(dim, rng), LevelParams::init(dim, rng)};
    return p;
}

ModelParams ModelParams::init(std::size_t dim, std::uint64_t seed) {
    Rng seg_rng(derive_seed(seed, "segmenter"));
    Rng align_rng(derive_seed(seed, "alignment"));
    return {SegmenterParams::init(dim, seg_rng), AlignmentParams::init(dim, align_rng)};
}

Matrix image_patches(const Matrix& raw) {
    const std::size_t h = raw.rows(), w = raw.cols();
    const double mu = mean(raw);
    double var = 0.0;
    for (double v : raw.data()) var += (v - mu) * (v - mu);
    const double sd = std::sqrt(std::max(var / static_cast<double>(raw.size()), 1e-12));
    Matrix image = raw;
    for (auto& v : image.data()) v = (v - mu) / sd;
    Matrix out(h * w, 9);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            std::size_t k = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx, ++k) {
                    const auto yy = static_cast<std::ptrdiff_t>(y) + dy;
                    const auto xx = static_cast<std::ptrdiff_t>(x) + dx;
                    if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) ||
                        xx >= static_cast<std::ptrdiff_t>(w)) {
                        continue;
                    }
                    out(y * w + x, k) = image(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
                }
            }
        }
    }
    return out;
}

namespace {

class Binder {
public:
    Binder(Tape& tape, bool trainable, ParamSlots* slots) : tape_(tape), trainable_(trainable), slots_(slots) {}

    Var operator()(const Matrix& m) {
        if (!trainable_) return tape_.constant(m);
        Var v = tape_.variable(m);
        if (slots_) slots_->emplace_back(&m, v);
        return v;
    }

private:
    Tape& tape_;
    bool trainable_;
    ParamSlots* slots_;
};

struct LevelVars {
    EdgeGeneratorParams::Vars vision;
    EdgeGeneratorParams::Vars text;
    Var gcn;
    Var affinity;
};

struct AlignmentVars {
    EncoderParams::Vars image;
    EncoderParams::Vars text;
    Var proj;
    LevelVars word;
    LevelVars sentence;
};

LevelVars bind_level(const LevelParams& p, Binder& b) {
    return {{b(p.vision_edges.query), b(p.vision_edges.key)},
            {b(p.text_edges.query), b(p.text_edges.key)},
            b(p.gcn.weight),
            b(p.affinity.bilinear)};
}

AlignmentVars bind_alignment(const AlignmentParams& p, Binder& b) {
    AlignmentVars v;
    v.image = {b(p.image_encoder.w1), b(p.image_encoder.b1), b(p.image_encoder.w2), b(p.image_encoder.b2)};
    v.text = {b(p.text_encoder.w1), b(p.text_encoder.b1), b(p.text_encoder.w2), b(p.text_encoder.b2)};
    v.proj = b(p.global_proj);
    v.word = bind_level(p.word, b);
    v.sentence = bind_level(p.sentence, b);
    return v;
}

Var matching_loss(Var vision, Var text, const LevelVars& level, const GtCorrespondence& gt, Branch branch,
                  const TrainConfig& cfg) {
    if (cfg.losses == LossMode::Contrastive) {
        return contrastive_loss(vision, text, GtCorrespondence(Matrix::identity(vision.rows())), cfg.temperature);
    }
    const GraphVar gv = build_graph(vision, level.vision);
    const GraphVar gl = build_graph(text, level.text);
    const Var x = ais(gv, gl, level.gcn, level.affinity, cfg.sinkhorn);
    const MatchedGraphs m{gv.adjacency, gl.adjacency, x};
    return branch == Branch::Gt ? local_gt_loss(m, gt) : local_pred_loss(m, gt);
}

Var alignment_loss(Var vision, Var text, const LevelVars& level, const GtCorrespondence& gt, Branch branch,
                   const TrainConfig& cfg) {
    if (vision.rows() != 1) return matching_loss(vision, text, level, gt, branch, cfg);
    // One node on each side always matches with weight 1, so the loss is a
    // constant; evaluate it off-tape.
    Tape scratch;
    auto detach = [&](Var v) { return scratch.constant(v.value()); };
    const LevelVars fixed{{detach(level.vision.query), detach(level.vision.key)},
                          {detach(level.text.query), detach(level.text.key)},
                          detach(level.gcn),
                          detach(level.affinity)};
    const double value = matching_loss(detach(vision), detach(text), fixed, gt, branch, cfg).item();
    return vision.tape().constant(Matrix::scalar(value));
}

Var mean_of(Tape& tape, const std::vector<Var>& parts) {
    if (parts.empty()) return tape.constant(Matrix::scalar(0.0));
    Var total = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) total = add(total, parts[i]);
    return scale(total, 1.0 / static_cast<double>(parts.size()));
}

Var severity_embeddings(Tape& tape, const Batch& batch, const TextInputs& text) {
    std::vector<Var> rows;
    rows.reserve(batch.severity_prompts.size());
    for (const auto& p : batch.severity_prompts) rows.push_back(tape.constant(text.embedder.embed(p)));
    return vstack(rows);
}

GtCorrespondence sentence_gt(const Batch& batch, const TrainConfig& cfg) {
    std::vector<SeverityProfile> profiles;
    profiles.reserve(batch.samples.size());
    for (const auto* s : batch.samples) profiles.push_back(s->profile);
    return build_sentence_gt(profiles, cfg.strict_diagonal);
}

void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw NonFiniteTraining(std::string(what) + " is not finite");
}

void apply_update(const Gradients& grads, const ParamSlots& slots, double lr,
                  const std::function<void(const std::function<void(Matrix&)>&)>& visit) {
    if (lr == 0.0) return;
    std::map<const Matrix*, Var> lookup(slots.begin(), slots.end());
    std::vector<std::pair<Matrix*, Matrix>> updates;
    visit([&](Matrix& m) {
        auto it = lookup.find(&m);
        if (it == lookup.end()) return;
        Matrix g = grads.wrt(it->second);
        if (!all_finite(g)) throw NonFiniteTraining("gradient is not finite");
        updates.emplace_back(&m, std::move(g));
    });
    for (auto& [m, g] : updates) {
        g *= lr;
        *m -= g;
    }
}

}  // namespace

SegmenterParams::Vars bind_segmenter(const SegmenterParams& p, Tape& tape, bool trainable, ParamSlots* slots) {
    Binder b(tape, trainable, slots);
    return {b(p.conv), b(p.conv_bias), b(p.mix), b(p.mix_bias), b(p.head), b(p.head_bias)};
}

SegmenterOutput run_segmenter(Var patches, const SegmenterParams::Vars& p) {
    if (patches.cols() != p.conv.rows()) {
        throw ShapeError("segmenter: patches " + patches.value().shape_string() + " vs filters " +
                         p.conv.value().shape_string());
    }
    Var h = tanh(add(matmul(patches, p.conv), p.conv_bias));
    Var f = tanh(add(matmul(h, p.mix), p.mix_bias));
    Var logits = add(matmul(f, p.head), p.head_bias);
    return {f, sigmoid(transpose(logits))};
}

Mask predict_mask(const SegSample& sample, const SegmenterParams& params) {
    Tape t;
    const auto out = run_segmenter(t.constant(image_patches(sample.image)), bind_segmenter(params, t, false));
    return Mask(sample.height, sample.width, out.mask.value());
}

FeatureMap feature_map(const SegSample& sample, const SegmenterParams& params) {
    Tape t;
    const auto out = run_segmenter(t.constant(image_patches(sample.image)), bind_segmenter(params, t, false));
    return {sample.height, sample.width, out.features.value()};
}

GtCorrespondence build_word_gt(std::span<const LesionClass> present) {
    if (present.empty()) throw std::invalid_argument("build_word_gt: no present classes");
    return GtCorrespondence(Matrix::identity(present.size()));
}

GtCorrespondence build_sentence_gt(const std::vector<SeverityProfile>& profiles, bool strict_diagonal) {
    if (profiles.empty()) throw std::invalid_argument("build_sentence_gt: empty batch");
    const std::size_t n = profiles.size();
    Matrix g(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            g(i, j) = (i == j || (!strict_diagonal && profiles[i] == profiles[j])) ? 1.0 : 0.0;
        }
    }
    return GtCorrespondence(std::move(g));
}

namespace {

Matrix cosine_distances(const Matrix& x) {
    const std::size_t n = x.rows();
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (double v : x.row(i)) s += v * v;
        norms[i] = std::sqrt(s);
        if (norms[i] == 0.0) throw std::invalid_argument("relation_distortion: zero row has no direction");
    }
    Matrix d(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            const auto a = x.row(i), b = x.row(j);
            for (std::size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
            d(i, j) = 1.0 - dot / (norms[i] * norms[j]);
        }
    }
    return d;
}

}  // namespace

double relation_distortion(const Matrix& before, const Matrix& after) {
    require_same_shape(before, after, "relation_distortion");
    if (before.rows() < 2) throw std::invalid_argument("relation_distortion: needs at least 2 rows");
    const Matrix a = cosine_distances(before);
    const Matrix b = cosine_distances(after);
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
    return total / static_cast<double>(a.size());
}

PreparedSample prepare(const SegSample& sample, double t1, double t2) {
    PreparedSample p{&sample, image_patches(sample.image), present_classes(sample.gt_mask), {}, {}};
    if (p.present.empty()) throw std::invalid_argument("prepare: training sample has no lesions");
    p.present_rows = class_indices(p.present);
    p.profile = severity_profile(sample.gt_mask, t1, t2);
    return p;
}

Batch make_batch(std::vector<const PreparedSample*> samples, const TrainConfig& cfg, Rng& rng) {
    if (samples.empty()) throw std::invalid_argument("make_batch: empty batch");
    Batch b;
    b.severity_prompts.reserve(samples.size());
    for (const auto* s : samples) {
        const int tmpl = cfg.template_index ? *cfg.template_index : 1 + static_cast<int>(rng.below(kNumTemplates));
        GroupChoice groups{};
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            groups[c] = cfg.groups[c] ? *cfg.groups[c] : static_cast<AdjectiveGroup>(rng.below(3));
        }
        b.severity_prompts.push_back(severity_prompt(s->profile, tmpl, groups));
    }
    b.samples = std::move(samples);
    return b;
}

TextInputs::TextInputs(std::size_t dim, std::uint64_t seed) : class_embeddings(kNumClasses, dim), embedder(dim, seed) {
    for (LesionClass c : kAllClasses) {
        const Matrix e = embedder.embed(class_prompt(c));
        for (std::size_t k = 0; k < dim; ++k) class_embeddings(index_of(c), k) = e(0, k);
    }
}

Var encoder_objective(Tape& tape, const Batch& batch, const ModelParams& params, const TextInputs& text,
                      const TrainConfig& cfg, ParamSlots* slots, StepLosses* parts,
                      const std::vector<Matrix>* features) {
    if (features && features->size() != batch.samples.size()) {
        throw std::invalid_argument("encoder_objective: one feature map per sample is required");
    }
    Binder bind(tape, true, slots);
    const AlignmentVars a = bind_alignment(params.alignment, bind);
    const Var class_text = encode(tape.constant(text.class_embeddings), a.text);

    std::vector<Var> local_losses, globals;
    for (std::size_t i = 0; i < batch.samples.size(); ++i) {
        const auto* s = batch.samples[i];
        const Matrix f = features ? (*features)[i] : feature_map(*s->sample, params.segmenter).values;
        const Var pooled = masked_pool(tape.constant(s->sample->gt_mask.values), tape.constant(f), s->present_rows);
        const Var local = encode(pooled, a.image);
        const Var cls = select_rows(class_text, s->present_rows);
        local_losses.push_back(alignment_loss(local, cls, a.word, build_word_gt(s->present), Branch::Gt, cfg));
        globals.push_back(global_project(local, a.proj));
    }
    const Var l_local = mean_of(tape, local_losses);
    const Var sentences = encode(severity_embeddings(tape, batch, text), a.text);
    const Var l_global = alignment_loss(vstack(globals), sentences, a.sentence, sentence_gt(batch, cfg), Branch::Gt, cfg);
    const Var total = encoder_loss(l_local, l_global, cfg.weights);
    if (parts) {
        parts->total = total.item();
        parts->local = l_local.item();
        parts->global = l_global.item();
    }
    return total;
}

Var generator_objective(Tape& tape, const Batch& batch, const SegmenterParams::Vars& segmenter,
                        const AlignmentParams& alignment, const TextInputs& text, const TrainConfig& cfg,
                        StepLosses* parts) {
    std::vector<SegmenterOutput> outputs;
    for (const auto* s : batch.samples) outputs.push_back(run_segmenter(tape.constant(s->patches), segmenter));
    return generator_objective(tape, batch, outputs, alignment, text, cfg, parts);
}

Var generator_objective(Tape& tape, const Batch& batch, const std::vector<SegmenterOutput>& outputs,
                        const AlignmentParams& alignment, const TextInputs& text, const TrainConfig& cfg,
                        StepLosses* parts) {
    if (outputs.size() != batch.samples.size()) {
        throw std::invalid_argument("generator_objective: one segmenter output per sample is required");
    }
    const bool aligned =
        cfg.losses != LossMode::Dice && (cfg.weights.lambda_d != 0.0 || cfg.weights.lambda_e != 0.0);
    Binder bind(tape, false, nullptr);
    std::optional<AlignmentVars> a;
    std::optional<Var> class_text;
    if (aligned) {
        a = bind_alignment(alignment, bind);
        class_text = encode(tape.constant(text.class_embeddings), a->text);
    }

    std::vector<Var> dice_losses, local_losses, globals;
    for (std::size_t i = 0; i < batch.samples.size(); ++i) {
        const auto* s = batch.samples[i];
        const SegmenterOutput& out = outputs[i];
        dice_losses.push_back(dice_loss(out.mask, s->sample->gt_mask.values));
        if (!aligned) continue;
        const Var local = encode(masked_pool(out.mask, out.features, s->present_rows), a->image);
        const Var cls = select_rows(*class_text, s->present_rows);
        local_losses.push_back(alignment_loss(local, cls, a->word, build_word_gt(s->present), Branch::Predicted, cfg));
        globals.push_back(global_project(local, a->proj));
    }
    const Var l_dice = mean_of(tape, dice_losses);
    Var total = scale(l_dice, cfg.weights.lambda_c);
    double local_value = 0.0, global_value = 0.0;
    if (aligned) {
        const Var l_local = mean_of(tape, local_losses);
        const Var sentences = encode(severity_embeddings(tape, batch, text), a->text);
        const Var l_global =
            alignment_loss(vstack(globals), sentences, a->sentence, sentence_gt(batch, cfg), Branch::Predicted, cfg);
        total = generator_loss(l_dice, l_local, l_global, cfg.weights);
        local_value = l_local.item();
        global_value = l_global.item();
    }
    if (parts) {
        parts->total = total.item();
        parts->dice = l_dice.item();
        parts->local = local_value;
        parts->global = global_value;
    }
    return total;
}

StepLosses encoder_step(const Batch& batch, ModelParams& params, const TextInputs& text, const TrainConfig& cfg,
                        const std::vector<Matrix>* features) {
    Tape tape;
    ParamSlots slots;
    StepLosses parts;
    const Var loss = encoder_objective(tape, batch, params, text, cfg, &slots, &parts, features);
    require_finite(parts.total, "encoder loss");
    if (cfg.encoder_lr == 0.0) return parts;
    const Gradients grads = tape.backward(loss);
    apply_update(grads, slots, cfg.encoder_lr, [&](const std::function<void(Matrix&)>& f) {
        params.alignment.for_each([&](const std::string&, Matrix& m) { f(m); });
    });
    return parts;
}

namespace {

StepLosses finish_segmenter_step(Tape& tape, const ParamSlots& slots, const std::vector<SegmenterOutput>& outputs,
                                 const Batch& batch, ModelParams& params, const TextInputs& text,
                                 const TrainConfig& cfg) {
    StepLosses parts;
    const Var loss = generator_objective(tape, batch, outputs, params.alignment, text, cfg, &parts);
    require_finite(parts.total, "segmenter loss");
    if (cfg.segmenter_lr == 0.0) return parts;
    const Gradients grads = tape.backward(loss);
    apply_update(grads, slots, cfg.segmenter_lr, [&](const std::function<void(Matrix&)>& f) {
        params.segmenter.for_each([&](const char*, Matrix& m) { f(m); });
    });
    return parts;
}

std::vector<SegmenterOutput> run_batch(Tape& tape, const Batch& batch, const SegmenterParams::Vars& seg) {
    std::vector<SegmenterOutput> outputs;
    for (const auto* s : batch.samples) outputs.push_back(run_segmenter(tape.constant(s->patches), seg));
    return outputs;
}

}  // namespace

StepLosses segmenter_step(const Batch& batch, ModelParams& params, const TextInputs& text, const TrainConfig& cfg) {
    Tape tape;
    ParamSlots slots;
    const auto seg = bind_segmenter(params.segmenter, tape, true, &slots);
    return finish_segmenter_step(tape, slots, run_batch(tape, batch, seg), batch, params, text, cfg);
}

RoundLosses train_round(const Batch& batch, ModelParams& params, const TextInputs& text, const TrainConfig& cfg,
                        bool encoder_only) {
    Tape tape;
    ParamSlots slots;
    const auto seg = bind_segmenter(params.segmenter, tape, !encoder_only, &slots);
    const auto outputs = run_batch(tape, batch, seg);
    std::vector<Matrix> features;
    for (const auto& o : outputs) features.push_back(o.features.value());
    RoundLosses r;
    r.encoder = encoder_step(batch, params, text, cfg, &features);
    if (!encoder_only) r.segmenter = finish_segmenter_step(tape, slots, outputs, batch, params, text, cfg);
    return r;
}

DifferentiableProgram generator_program(const Batch& batch, const ModelParams& params, const TextInputs& text,
                                        const TrainConfig& cfg) {
    std::map<std::string, Matrix> inputs;
    SegmenterParams seg = params.segmenter;
    seg.for_each([&](const char* name, Matrix& m) { inputs.emplace(name, m); });
    // The program may outlive its arguments; keep copies.
    auto body = [batch, alignment = params.alignment, text, cfg](Tape& tape, const VarMap& v) {
        const SegmenterParams::Vars vars{v.at("conv"), v.at("conv_bias"), v.at("mix"),
                                         v.at("mix_bias"), v.at("head"), v.at("head_bias")};
        return generator_objective(tape, batch, vars, alignment, text, cfg, nullptr);
    };
    return DifferentiableProgram(std::move(inputs), std::move(body));
}

Dataset Dataset::synthetic(const TrainConfig& cfg) {
    Dataset d;
    d.train_entries = make_dataset_entries(derive_seed(cfg.seed, "train"), cfg.train_samples);
    d.test_entries = make_dataset_entries(derive_seed(cfg.seed, "test"), cfg.test_samples);
    d.train = generate_dataset(d.train_entries, cfg.image_size, cfg.image_size, cfg.t1, cfg.t2);
    d.test = generate_dataset(d.test_entries, cfg.image_size, cfg.image_size, cfg.t1, cfg.t2);
    return d;
}

std::vector<ImageMetrics> evaluate(const std::vector<SegSample>& samples, const SegmenterParams& params) {
    std::vector<ImageMetrics> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(evaluate_masks(predict_mask(s, params), s.gt_mask));
    return out;
}

Matrix class_centroids(const std::vector<SegSample>& samples, const ModelParams& params) {
    const std::size_t dim = params.segmenter.dim();
    Matrix sums(kNumClasses, dim);
    std::array<std::size_t, kNumClasses> counts{};
    for (const auto& s : samples) {
        const auto present = present_classes(s.gt_mask);
        if (present.empty()) continue;
        const Matrix pooled = masked_pool(s.gt_mask, feature_map(s, params.segmenter), present);
        const LocalFeatures local = encode_local(pooled, params.alignment.image_encoder, present, Branch::Gt);
        for (std::size_t r = 0; r < present.size(); ++r) {
            const std::size_t c = index_of(present[r]);
            ++counts[c];
            for (std::size_t k = 0; k < dim; ++k) sums(c, k) += local.values(r, k);
        }
    }
    std::vector<double> data;
    std::size_t rows = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (counts[c] == 0) continue;
        ++rows;
        for (std::size_t k = 0; k < dim; ++k) data.push_back(sums(c, k) / static_cast<double>(counts[c]));
    }
    if (rows == 0) throw std::invalid_argument("class_centroids: no lesion present in any sample");
    return Matrix(rows, dim, std::move(data));
}

nlohmann::ordered_json to_json(const DatasetMetrics& m) {
    nlohmann::ordered_json j;
    j["images"] = m.images;
    j["miou"] = m.miou;
    j["mf"] = m.mf;
    j["maupr"] = m.maupr;
    nlohmann::ordered_json per = nlohmann::ordered_json::object();
    for (LesionClass c : kAllClasses) {
        const std::size_t i = index_of(c);
        per[std::string(class_code(c))] = {{"images", m.class_count[i]},
                                           {"iou", m.class_iou[i]},
                                           {"f", m.class_f[i]},
                                           {"aupr", m.class_aupr[i]}};
    }
    j["per_class"] = per;
    return j;
}

namespace {

nlohmann::ordered_json matrix_json(const Matrix& m) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    return rows;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

nlohmann::ordered_json RunManifest::to_json() const {
    nlohmann::ordered_json j;
    j["format"] = "bivlgm-run/1";
    j["status"] = status;
    j["config"] = bivlgm::to_json(config);
    j["parameter_sharing"] = {
        {"edge_generators", "separate for vision and text graphs and for word and sentence levels"},
        {"gcn", "one per level, shared by the vision and text graphs and by the GT and predicted branches"},
        {"affinity", "one per level, shared by the GT and predicted branches"},
        {"encoders", "one image encoder and one text encoder shared by both levels and both branches"},
        {"segmenter", "trained only by the segmenter step"}};
    j["deviations"] = {
        "optimizer is plain gradient descent with a constant learning rate; no poly schedule",
        "segmenter learning rate defaults to 1.0; at 0.01 the small segmenter does not leave its initial all-background "
        "prediction within 500 rounds",
        "segmenter is a small per-pixel scorer on synthetic images instead of a pretrained backbone",
        "text embeddings are deterministic hashed token vectors instead of a pretrained language model",
        "predicted-branch correspondence loss uses L1 in place of cross entropy; the structure term is unchanged",
        "structure loss is the mean absolute value of E_a X - X E_b",
        "masked pooling divides by the soft mask area",
        "differentiable Sinkhorn is unrolled for a fixed number of iterations",
        "the first warmup_fraction of rounds run alignment steps only"};
    j["rounds_completed"] = log.size();
    nlohmann::ordered_json losses = nlohmann::ordered_json::array();
    for (const auto& r : log) {
        nlohmann::ordered_json e;
        e["round"] = r.round;
        e["L_E"] = r.encoder.total;
        e["L_local_gt"] = r.encoder.local;
        e["L_global_gt"] = r.encoder.global;
        if (r.segmenter) {
            e["L_G"] = r.segmenter->total;
            e["dice"] = r.segmenter->dice;
            e["L_local_p"] = r.segmenter->local;
            e["L_global_p"] = r.segmenter->global;
        }
        losses.push_back(e);
    }
    j["loss_log"] = losses;
    j["initial_metrics"] = bivlgm::to_json(initial_metrics);
    j["final_metrics"] = bivlgm::to_json(final_metrics);
    j["relation_distortion"] = relation_distortion;
    j["centroids_before"] = matrix_json(centroids_before);
    j["centroids_after"] = matrix_json(centroids_after);
    return j;
}

std::string RunManifest::loss_csv() const {
    std::string out = "round,L_E,L_local_gt,L_global_gt,L_G,dice,L_local_p,L_global_p\n";
    for (const auto& r : log) {
        out += std::to_string(r.round) + "," + fmt(r.encoder.total) + "," + fmt(r.encoder.local) + "," +
               fmt(r.encoder.global);
        if (r.segmenter) {
            out += "," + fmt(r.segmenter->total) + "," + fmt(r.segmenter->dice) + "," + fmt(r.segmenter->local) +
                   "," + fmt(r.segmenter->global);
        } else {
            out += ",,,,";
        }
        out += "\n";
    }
    return out;
}

std::string RunManifest::metrics_csv() const {
    std::string out = "stage,class,images,iou,f,aupr\n";
    auto emit = [&](const char* stage, const DatasetMetrics& m) {
        out += std::string(stage) + ",mean," + std::to_string(m.images) + "," + fmt(m.miou) + "," + fmt(m.mf) +
               "," + fmt(m.maupr) + "\n";
        for (LesionClass c : kAllClasses) {
            const std::size_t i = index_of(c);
            out += std::string(stage) + "," + std::string(class_code(c)) + "," + std::to_string(m.class_count[i]) +
                   "," + fmt(m.class_iou[i]) + "," + fmt(m.class_f[i]) + "," + fmt(m.class_aupr[i]) + "\n";
        }
    };
    emit("initial", initial_metrics);
    emit("final", final_metrics);
    return out;
}

TrainResult train(const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.train.empty() || data.test.empty()) throw std::invalid_argument("train: dataset splits must be nonempty");
    TrainResult res{RunManifest{}, ModelParams::init(cfg.feature_dim, cfg.seed)};
    RunManifest& man = res.manifest;
    man.config = cfg;
    const TextInputs text(cfg.feature_dim, derive_seed(cfg.seed, "text"));

    std::vector<PreparedSample> prepared;
    prepared.reserve(data.train.size());
    for (const auto& s : data.train) prepared.push_back(prepare(s, cfg.t1, cfg.t2));

    man.initial_metrics = summarize(evaluate(data.test, res.params.segmenter));
    const AlignmentParams initial_alignment = res.params.alignment;

    Rng rng(derive_seed(cfg.seed, "schedule"));
    std::vector<std::size_t> order(prepared.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::size_t cursor = 0;
    const std::size_t batch_size = std::min(cfg.batch_size, prepared.size());
    const std::size_t warmup = cfg.warmup_rounds();

    for (std::size_t round = 0; round < cfg.budget; ++round) {
        std::vector<const PreparedSample*> members;
        for (std::size_t k = 0; k < batch_size; ++k) {
            if (cursor == order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            members.push_back(&prepared[order[cursor++]]);
        }
        const Batch batch = make_batch(std::move(members), cfg, rng);
        LossRecord rec;
        rec.round = round;
        try {
            const RoundLosses r = train_round(batch, res.params, text, cfg, round < warmup);
            rec.encoder = r.encoder;
            rec.segmenter = r.segmenter;
        } catch (const NonFiniteTraining& e) {
            man.status = "failed: round " + std::to_string(round) + ": " + e.what();
            break;
        }
        man.log.push_back(rec);
    }

    man.final_metrics = summarize(evaluate(data.test, res.params.segmenter));
    ModelParams untrained_alignment = res.params;
    untrained_alignment.alignment = initial_alignment;
    man.centroids_before = class_centroids(data.test, untrained_alignment);
    man.centroids_after = class_centroids(data.test, res.params);
    if (man.centroids_before.rows() >= 2) {
        man.relation_distortion = relation_distortion(man.centroids_before, man.centroids_after);
    }
    return res;
}

}  // namespace bivlgm
