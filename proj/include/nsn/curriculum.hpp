#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsn/difficulty.hpp"

namespace nsn {

struct ConfidenceRecord {
    std::string image;
    std::size_t box_index = 0;
    DifficultyCategory category = DifficultyCategory::SmallTarget;
    double confidence = 0;
};

struct CategoryStats {
    std::array<std::size_t, 4> candidates{};  // N_c
    std::array<double, 4> sigma{};            // relative difficulty

    std::size_t count(DifficultyCategory c) const { return candidates[static_cast<std::size_t>(c)]; }
    double relative_difficulty(DifficultyCategory c) const { return sigma[static_cast<std::size_t>(c)]; }
};

struct AdaptiveThresholds {
    std::array<double, 4> tau{};
    double tau_min = 0.25;
    double tau_max = 0.75;
    bool fallback_triggered = false;

    double operator[](DifficultyCategory c) const { return tau[static_cast<std::size_t>(c)]; }
};

struct CurriculumConfig {
    double tau_min = 0.25;
    double tau_max = 0.75;

    void validate() const;
};

/// Keeps records with confidence strictly above tau_min, preserving order.
std::vector<ConfidenceRecord> candidate_filter(const std::vector<ConfidenceRecord>& records, double tau_min);

/// sigma(c) = fraction of category-c candidates with confidence strictly above tau_max.
CategoryStats relative_difficulty(const std::vector<ConfidenceRecord>& candidates, double tau_max);

/// tau(c) = max(sigma(c) / max sigma * tau_max, tau_min). All tau = tau_max when max sigma is 0.
AdaptiveThresholds adaptive_thresholds(const CategoryStats& stats, double tau_max, double tau_min);

struct Rejection {
    ConfidenceRecord record;
    double threshold = 0;
    double margin = 0;  // confidence - threshold, <= 0
};

struct ThresholdDecision {
    std::vector<ConfidenceRecord> accepted;
    std::vector<Rejection> rejected;
};

/// Accepts candidates with confidence strictly above their category threshold.
ThresholdDecision apply_thresholds(const std::vector<ConfidenceRecord>& candidates, const AdaptiveThresholds& t);

nlohmann::ordered_json threshold_report(const CategoryStats& stats, const AdaptiveThresholds& t);

/// One JSON object per candidate, ordered by (image, box index).
std::vector<nlohmann::ordered_json> decision_lines(const ThresholdDecision& d);

}  // namespace nsn
