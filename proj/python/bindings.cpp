#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>

#include "bivlgm/cli.hpp"
#include "bivlgm/losses.hpp"
#include "bivlgm/matching.hpp"
#include "bivlgm/metrics.hpp"
#include "bivlgm/pipeline.hpp"
#include "bivlgm/prompts.hpp"
#include "bivlgm/synthdata.hpp"

namespace py = pybind11;
using namespace bivlgm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
    if (a.ndim() == 1) {
        return Matrix(1, static_cast<std::size_t>(a.shape(0)), std::vector<double>(a.data(), a.data() + a.size()));
    }
    if (a.ndim() != 2) throw py::value_error("expected a 1-D or 2-D array");
    return Matrix(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                  std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Matrix& m) {
    Array out({m.rows(), m.cols()});
    std::copy(m.data().begin(), m.data().end(), out.mutable_data());
    return out;
}

/// Masks cross the boundary as C x H x W arrays.
Mask to_mask(const Array& a) {
    if (a.ndim() != 3 || a.shape(0) != static_cast<py::ssize_t>(kNumClasses)) {
        throw py::value_error("mask must have shape (4, H, W)");
    }
    const auto h = static_cast<std::size_t>(a.shape(1)), w = static_cast<std::size_t>(a.shape(2));
    return Mask(h, w, Matrix(kNumClasses, h * w, std::vector<double>(a.data(), a.data() + a.size())));
}

Array mask_array(const Mask& m) {
    Array out({kNumClasses, m.height, m.width});
    std::copy(m.values.data().begin(), m.values.data().end(), out.mutable_data());
    return out;
}

GroupChoice groups_from(const std::map<std::string, std::string>& groups) {
    GroupChoice g{AdjectiveGroup::Amount, AdjectiveGroup::Amount, AdjectiveGroup::Amount, AdjectiveGroup::Amount};
    for (const auto& [cls, group] : groups) g[index_of(parse_class(cls))] = parse_group(group);
    return g;
}

std::vector<double> flat(const Array& a) { return {a.data(), a.data() + a.size()}; }

}  // namespace

PYBIND11_MODULE(_bivlgm, m) {
    m.doc() = "Bi-level vision-language graph matching on dense double matrices";

    m.def(
        "sinkhorn",
        [](const Array& k, std::size_t max_iterations, double tolerance) {
            const auto c = sinkhorn(to_matrix(k), SinkhornConfig{max_iterations, tolerance});
            return py::make_tuple(to_array(c.values), c.iterations, c.deviation);
        },
        py::arg("k"), py::arg("max_iterations") = 100, py::arg("tolerance") = 1e-6,
        "Returns (matrix, iterations, deviation).");
    m.def(
        "affinity",
        [](const Array& a, const Array& b, const Array& bilinear) {
            return to_array(affinity(to_matrix(a), to_matrix(b), AffinityParams{to_matrix(bilinear)}));
        },
        py::arg("a_nodes"), py::arg("b_nodes"), py::arg("bilinear"));
    m.def("positive_normalize", [](const Array& s) { return to_array(positive_normalize(to_matrix(s))); });

    m.def("ce_corr", [](const Array& pred, const Array& gt) {
        return ce_corr(to_matrix(pred), GtCorrespondence(to_matrix(gt)));
    });
    m.def("qc", [](const Array& ea, const Array& eb, const Array& pred) {
        return qc(to_matrix(ea), to_matrix(eb), to_matrix(pred));
    });
    m.def("l1_corr", [](const Array& pred, const Array& gt) {
        return l1_corr(to_matrix(pred), GtCorrespondence(to_matrix(gt)));
    });
    m.def("dice_loss", [](const Array& pred, const Array& gt) { return dice_loss(to_matrix(pred), to_matrix(gt)); },
          "Masks as C x P arrays.");
    m.def(
        "contrastive_loss",
        [](const Array& a, const Array& b, const Array& positives, double temperature) {
            return contrastive_loss(to_matrix(a), to_matrix(b), GtCorrespondence(to_matrix(positives)), temperature);
        },
        py::arg("a"), py::arg("b"), py::arg("positives"), py::arg("temperature") = kDefaultTemperature);

    m.def("lesion_ratio", [](const Array& mask, const std::string& cls) {
        return lesion_ratio(to_mask(mask), parse_class(cls));
    });
    m.def(
        "severity_level",
        [](double ratio, double t1, double t2) { return std::string(level_name(severity_level(ratio, t1, t2))); },
        py::arg("ratio"), py::arg("t1") = kDefaultT1, py::arg("t2") = kDefaultT2);
    m.def("class_prompt", [](const std::string& cls) { return class_prompt(parse_class(cls)).text; });
    m.def(
        "severity_prompt",
        [](const std::string& spec, int template_index, const std::map<std::string, std::string>& groups) {
            SeverityProfile profile;
            const SeveritySpec s = parse_spec(spec);
            for (LesionClass c : kAllClasses) {
                if (s[index_of(c)]) profile.emplace_back(c, *s[index_of(c)]);
            }
            return severity_prompt(profile, template_index, groups_from(groups)).text;
        },
        py::arg("spec"), py::arg("template_index") = 1, py::arg("groups") = std::map<std::string, std::string>{},
        "Renders a prompt for a spec such as 'EX:low,HE:high'; unlisted groups default to amount.");
    m.def(
        "embed_prompt",
        [](const std::string& text, std::size_t dim, std::uint64_t seed) {
            return to_array(PromptEmbedder(dim, seed).embed(text));
        },
        py::arg("text"), py::arg("dim"), py::arg("seed"));

    m.def(
        "gen_sample",
        [](std::uint64_t seed, std::size_t height, std::size_t width, const std::string& spec, double t1, double t2) {
            const SegSample s = gen_sample(seed, height, width, parse_spec(spec), t1, t2);
            return py::make_tuple(to_array(s.image), mask_array(s.gt_mask));
        },
        py::arg("seed"), py::arg("height"), py::arg("width"), py::arg("spec"), py::arg("t1") = kDefaultT1,
        py::arg("t2") = kDefaultT2, "Returns (image H x W, gt mask 4 x H x W).");

    m.def("iou", [](const Array& pred, const Array& gt) { return iou(flat(pred), flat(gt)); });
    m.def("f_score", [](const Array& pred, const Array& gt) { return f_score(flat(pred), flat(gt)); });
    m.def("aupr", [](const Array& scores, const Array& gt) { return aupr(flat(scores), flat(gt)); });
    m.def("relation_distortion", [](const Array& before, const Array& after) {
        return relation_distortion(to_matrix(before), to_matrix(after));
    });

    m.def(
        "train",
        [](const std::string& config_json) {
            TrainConfig cfg;
            apply_json(cfg, nlohmann::json::parse(config_json));
            cfg.validate();
            TrainResult r;
            {
                py::gil_scoped_release release;
                r = train(Dataset::synthetic(cfg), cfg);
            }
            return r.manifest.to_json().dump();
        },
        py::arg("config_json") = "{}",
        "Trains on the synthetic suite for a JSON config and returns the run manifest as JSON text.");
    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::vector<std::string> argv{"bivlgm"};
            argv.insert(argv.end(), args.begin(), args.end());
            std::ostringstream out, err;
            const int code = cli::run(argv, out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        "Runs a command-line invocation in-process; returns (exit code, stdout, stderr).");
}
