#include "nsn/curriculum.hpp"

#include <algorithm>
#include <tuple>

#include "nsn/error.hpp"

namespace nsn {

void CurriculumConfig::validate() const {
    if (!(tau_min > 0 && tau_min < tau_max && tau_max < 1))
        throw ConfigError("curriculum thresholds need 0 < tau_min < tau_max < 1");
}

std::vector<ConfidenceRecord> candidate_filter(const std::vector<ConfidenceRecord>& records, double tau_min) {
    std::vector<ConfidenceRecord> out;
    std::copy_if(records.begin(), records.end(), std::back_inserter(out),
                 [&](const ConfidenceRecord& r) { return r.confidence > tau_min; });
    return out;
}

CategoryStats relative_difficulty(const std::vector<ConfidenceRecord>& candidates, double tau_max) {
    CategoryStats stats;
    std::array<std::size_t, 4> confident{};
    for (const auto& r : candidates) {
        const auto c = static_cast<std::size_t>(r.category);
        ++stats.candidates[c];
        if (r.confidence > tau_max) ++confident[c];
    }
    for (std::size_t c = 0; c < 4; ++c)
        stats.sigma[c] = stats.candidates[c] ? static_cast<double>(confident[c]) / static_cast<double>(stats.candidates[c]) : 0.0;
    return stats;
}

AdaptiveThresholds adaptive_thresholds(const CategoryStats& stats, double tau_max, double tau_min) {
    if (!(tau_min < tau_max)) throw ConfigError("tau_min must be below tau_max");
    AdaptiveThresholds t;
    t.tau_min = tau_min;
    t.tau_max = tau_max;
    const double max_sigma = *std::max_element(stats.sigma.begin(), stats.sigma.end());
    if (max_sigma <= 0) {
        t.tau.fill(tau_max);
        t.fallback_triggered = true;
        return t;
    }
    for (std::size_t c = 0; c < 4; ++c) t.tau[c] = std::max(stats.sigma[c] / max_sigma * tau_max, tau_min);
    return t;
}

ThresholdDecision apply_thresholds(const std::vector<ConfidenceRecord>& candidates, const AdaptiveThresholds& t) {
    ThresholdDecision d;
    for (const auto& r : candidates) {
        const double tau = t[r.category];
        if (r.confidence > tau)
            d.accepted.push_back(r);
        else
            d.rejected.push_back({r, tau, r.confidence - tau});
    }
    return d;
}

nlohmann::ordered_json threshold_report(const CategoryStats& stats, const AdaptiveThresholds& t) {
    nlohmann::ordered_json per;
    for (auto c : kAllCategories)
        per[std::string(to_string(c))] = {
            {"N_c", stats.count(c)}, {"sigma", stats.relative_difficulty(c)}, {"tau", t[c]}};
    return {{"categories", per},
            {"tau_min", t.tau_min},
            {"tau_max", t.tau_max},
            {"fallback_triggered", t.fallback_triggered}};
}

std::vector<nlohmann::ordered_json> decision_lines(const ThresholdDecision& d) {
    struct Line {
        const ConfidenceRecord* record;
        nlohmann::ordered_json json;
    };
    std::vector<Line> lines;
    for (const auto& r : d.accepted)
        lines.push_back({&r,
                         {{"image", r.image},
                          {"box_index", r.box_index},
                          {"category", to_string(r.category)},
                          {"confidence", r.confidence},
                          {"accepted", true}}});
    for (const auto& rej : d.rejected) {
        const auto& r = rej.record;
        lines.push_back({&r,
                         {{"image", r.image},
                          {"box_index", r.box_index},
                          {"category", to_string(r.category)},
                          {"confidence", r.confidence},
                          {"accepted", false},
                          {"threshold", rej.threshold},
                          {"margin", rej.margin}}});
    }
    std::stable_sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) {
        return std::tie(a.record->image, a.record->box_index) < std::tie(b.record->image, b.record->box_index);
    });
    std::vector<nlohmann::ordered_json> out;
    out.reserve(lines.size());
    for (auto& l : lines) out.push_back(std::move(l.json));
    return out;
}

}  // namespace nsn
