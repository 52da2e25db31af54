#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "icl/corpus.hpp"
#include "icl/errors.hpp"
#include "icl/lm.hpp"

namespace icl::calib {

using corpus::LabelSpace;
using corpus::LabelSpacePtr;
using corpus::PromptTemplate;
using lm::LabelDistribution;
using json = nlohmann::json;

/// Placeholder inputs carrying no task signal, used to expose the bias a
/// bare template induces.
struct ContentFreeSet {
    std::vector<std::string> strings{"", "N/A", "[MASK]"};

    void validate() const {
        if (strings.empty()) throw ConfigError("content-free set must be non-empty");
        for (std::size_t i = 0; i < strings.size(); ++i) {
            for (std::size_t j = i + 1; j < strings.size(); ++j) {
                if (strings[i] == strings[j]) {
                    throw ConfigError("content-free set has duplicate entry '" + strings[i] + "'");
                }
            }
        }
    }
};

/// Vector-scaling transform q = σ(diag(w) p + b). The weight diagonal is the
/// elementwise reciprocal of the content-free distribution and the offset is
/// pinned to zero.
struct CalibrationVector {
    std::vector<double> w_diag;
    std::vector<double> b;
    LabelDistribution source_pcf;

    std::size_t size() const { return w_diag.size(); }
};

/// w = 1/pcf elementwise, b = 0. pcf entries are floored upstream, so the
/// reciprocals are finite.
inline CalibrationVector make_calibrator(const LabelDistribution& pcf) {
    CalibrationVector cal;
    cal.w_diag.reserve(pcf.size());
    for (double p : pcf.probs) cal.w_diag.push_back(1.0 / std::max(p, lm::kProbFloor));
    cal.b.assign(pcf.size(), 0.0);
    cal.source_pcf = pcf;
    return cal;
}

/// Applies the transform to a probability vector and renormalizes.
inline LabelDistribution calibrate(const LabelDistribution& p, const CalibrationVector& cal) {
    if (p.size() != cal.size() || !p.same_space(cal.source_pcf)) {
        throw ShapeError("calibration vector does not match the distribution's label space");
    }
    std::vector<double> scaled(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) scaled[i] = cal.w_diag[i] * p.probs[i] + cal.b[i];
    return LabelDistribution::normalized(std::move(scaled), p.space);
}

/// Content-free estimate plus the per-string distributions behind it.
struct PcfEstimate {
    LabelDistribution pcf;
    std::vector<LabelDistribution> per_string;
};

/// Renders one zero-shot prompt per content-free string, scores each, and
/// normalizes the arithmetic mean of the probability vectors.
inline PcfEstimate estimate_pcf(const PromptTemplate& tmpl, const ContentFreeSet& cf,
                                const LabelSpacePtr& space, lm::LmBackend& backend) {
    cf.validate();
    PcfEstimate est;
    std::vector<double> mean(space->num_labels(), 0.0);
    for (const auto& s : cf.strings) {
        auto prompt = corpus::render_zero_shot(tmpl, corpus::content_free_example(tmpl, s));
        auto dist = lm::score_labels(prompt, space, backend);
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += dist.probs[i];
        est.per_string.push_back(std::move(dist));
    }
    for (auto& m : mean) m /= static_cast<double>(cf.strings.size());
    est.pcf = LabelDistribution::normalized(std::move(mean), space);
    return est;
}

/// The template-bias probe: which label a bare template pushes the model
/// toward, and how hard.
struct BiasProbeReport {
    std::string task_name;
    std::string model_name;
    LabelDistribution pcf;
    std::vector<LabelDistribution> per_string_distributions;
    int max_label = 0;
    double max_prob = 0.0;
};

inline BiasProbeReport probe_template_bias(const PromptTemplate& tmpl, const ContentFreeSet& cf,
                                           const LabelSpacePtr& space, lm::LmBackend& backend) {
    auto est = estimate_pcf(tmpl, cf, space, backend);
    BiasProbeReport report;
    report.task_name = tmpl.task_name;
    report.model_name = backend.model_name();
    report.max_label = est.pcf.argmax();
    report.max_prob = est.pcf.probs[static_cast<std::size_t>(report.max_label)];
    report.pcf = std::move(est.pcf);
    report.per_string_distributions = std::move(est.per_string);
    return report;
}

inline json bias_probe_to_json(const BiasProbeReport& report, const ContentFreeSet& cf) {
    json per_string = json::array();
    for (std::size_t i = 0; i < report.per_string_distributions.size(); ++i) {
        per_string.push_back(json{{"content_free_string", cf.strings[i]},
                                  {"probs", report.per_string_distributions[i].probs}});
    }
    return json{{"task", report.task_name},
                {"model", report.model_name},
                {"labels", report.pcf.space->verbalizers},
                {"pcf", report.pcf.probs},
                {"max_label", report.max_label},
                {"max_verbalizer", report.pcf.space->verbalizers[static_cast<std::size_t>(
                                       report.max_label)]},
                {"max_prob", report.max_prob},
                {"per_string", std::move(per_string)}};
}

/// Plot-data rows (label, raw_prob, calibrated_prob): raw is the content-free
/// estimate, calibrated is that estimate pushed through its own calibrator,
/// i.e. the before/after pair of the bias chart.
inline std::string bias_probe_plot_data(const BiasProbeReport& report) {
    auto cal = make_calibrator(report.pcf);
    auto calibrated = calibrate(report.pcf, cal);
    std::string out = "label\traw_prob\tcalibrated_prob\n";
    for (std::size_t i = 0; i < report.pcf.size(); ++i) {
        out += report.pcf.space->verbalizers[i] + '\t' + std::to_string(report.pcf.probs[i]) +
               '\t' + std::to_string(calibrated.probs[i]) + '\n';
    }
    return out;
}

}  // namespace icl::calib
