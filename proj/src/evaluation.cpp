#include "nsn/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nsn/error.hpp"

namespace nsn {

namespace fs = std::filesystem;

std::string to_string(Interpolation m) { return m == Interpolation::AllPoint ? "all-point" : "11-point"; }

Interpolation interpolation_from_string(const std::string& s) {
    if (s == "all-point" || s == "all") return Interpolation::AllPoint;
    if (s == "11-point" || s == "11") return Interpolation::ElevenPoint;
    throw InputError("unknown interpolation '" + s + "'");
}

namespace {

struct RankedDetection {
    std::size_t image;
    std::size_t index;
    double confidence;
};

double integrate(const std::vector<PRPoint>& curve, Interpolation mode) {
    if (curve.empty()) return 0.0;
    if (mode == Interpolation::ElevenPoint) {
        double sum = 0;
        for (int k = 0; k <= 10; ++k) {
            const double r = k / 10.0;
            double best = 0;
            for (const auto& p : curve)
                if (p.recall >= r - 1e-12) best = std::max(best, p.precision);
            sum += best;
        }
        return sum / 11.0;
    }
    // Area under the monotone envelope: precision at recall r is the best precision at any
    // recall >= r.
    std::vector<double> envelope(curve.size());
    double running = 0;
    for (std::size_t k = curve.size(); k-- > 0;) {
        running = std::max(running, curve[k].precision);
        envelope[k] = running;
    }
    double area = 0, previous_recall = 0;
    for (std::size_t k = 0; k < curve.size(); ++k) {
        area += (curve[k].recall - previous_recall) * envelope[k];
        previous_recall = curve[k].recall;
    }
    return area;
}

}  // namespace

APResult average_precision(const EvaluationSet& set, double iou_threshold, Interpolation mode) {
    const std::size_t n = set.ground_truth.size();
    if (set.detections.size() != n || set.image_keys.size() != n)
        throw InputError("evaluation set has mismatched image counts");

    APResult result;
    result.mode = mode;
    result.iou_threshold = iou_threshold;
    result.per_image.resize(n);

    std::vector<RankedDetection> ranked;
    std::size_t total_gt = 0;
    for (std::size_t i = 0; i < n; ++i) {
        total_gt += set.ground_truth[i].size();
        for (std::size_t d = 0; d < set.detections[i].size(); ++d) {
            const auto& det = set.detections[i][d];
            if (!det.confidence) throw InputError("detection without confidence in " + set.image_keys[i]);
            ranked.push_back({i, d, *det.confidence});
        }
    }
    std::sort(ranked.begin(), ranked.end(), [&](const RankedDetection& a, const RankedDetection& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        if (set.image_keys[a.image] != set.image_keys[b.image]) return set.image_keys[a.image] < set.image_keys[b.image];
        if (a.image != b.image) return a.image < b.image;
        return a.index < b.index;
    });

    std::vector<std::vector<bool>> taken(n);
    for (std::size_t i = 0; i < n; ++i) taken[i].assign(set.ground_truth[i].size(), false);

    std::size_t tp = 0, fp = 0;
    for (std::size_t k = 0; k < ranked.size(); ++k) {
        const auto& r = ranked[k];
        const BBox& box = set.detections[r.image][r.index].bbox;
        const auto& gts = set.ground_truth[r.image];
        std::size_t best = gts.size();
        double best_iou = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (taken[r.image][g]) continue;
            const double v = iou(box, gts[g]);
            if (v >= iou_threshold && v > best_iou) {
                best = g;
                best_iou = v;
            }
        }
        if (best < gts.size()) {
            taken[r.image][best] = true;
            ++tp;
            ++result.per_image[r.image].tp;
            result.matches.push_back({r.image, r.index, best, best_iou});
        } else {
            ++fp;
            ++result.per_image[r.image].fp;
        }
        const bool group_end = k + 1 == ranked.size() || ranked[k + 1].confidence != r.confidence;
        if (group_end && total_gt > 0) {
            PRPoint p;
            p.threshold = r.confidence;
            p.tp = tp;
            p.fp = fp;
            p.fn = total_gt - tp;
            p.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
            p.recall = static_cast<double>(tp) / static_cast<double>(total_gt);
            result.pr_curve.push_back(p);
        }
    }
    for (std::size_t i = 0; i < n; ++i) result.per_image[i].fn = set.ground_truth[i].size() - result.per_image[i].tp;
    result.tp = tp;
    result.fp = fp;
    result.fn = total_gt - tp;
    result.ap = total_gt == 0 ? 0.0 : integrate(result.pr_curve, mode);
    return result;
}

MapReport map50(const DatasetManifest& ground_truth, const fs::path& prediction_dir, Interpolation mode,
                double iou_threshold) {
    EvaluationSet set;
    MapReport report;
    for (std::size_t i = 0; i < ground_truth.size(); ++i) {
        const std::string key = ground_truth.entries[i].image.generic_string();
        set.image_keys.push_back(key);
        report.images.push_back(key);
        std::vector<BBox> gt;
        if (const auto label = ground_truth.label_path(i))
            for (const auto& b : load_labels(*label)) gt.push_back(b.bbox);
        set.ground_truth.push_back(std::move(gt));

        const fs::path pred = prediction_dir / ground_truth.entries[i].image.filename().replace_extension(".txt");
        if (fs::exists(pred)) {
            set.detections.push_back(load_labels(pred, std::nullopt, LabelKind::Pseudo));
        } else {
            set.detections.emplace_back();
            ++report.missing_predictions;
        }
    }
    report.ap = average_precision(set, iou_threshold, mode);
    report.map = report.ap.ap * 100.0;
    return report;
}

nlohmann::ordered_json to_json(const MapReport& r) {
    nlohmann::ordered_json curve = nlohmann::ordered_json::array();
    for (const auto& p : r.ap.pr_curve)
        curve.push_back({{"threshold", p.threshold},
                         {"precision", p.precision},
                         {"recall", p.recall},
                         {"tp", p.tp},
                         {"fp", p.fp},
                         {"fn", p.fn}});
    nlohmann::ordered_json per_image = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < r.ap.per_image.size(); ++i)
        per_image.push_back({{"image", r.images.at(i)},
                             {"tp", r.ap.per_image[i].tp},
                             {"fp", r.ap.per_image[i].fp},
                             {"fn", r.ap.per_image[i].fn}});
    return {{"ap", r.ap.ap},
            {"map", r.map},
            {"map_display", round_display(r.map)},
            {"mode", to_string(r.ap.mode)},
            {"iou_threshold", r.ap.iou_threshold},
            {"tp", r.ap.tp},
            {"fp", r.ap.fp},
            {"fn", r.ap.fn},
            {"missing_predictions", r.missing_predictions},
            {"pr_curve", curve},
            {"per_image", per_image}};
}

double adaptation_gain(const AdaptationGainInputs& in) {
    for (double v : {in.adapted, in.source_only, in.oracle})
        if (!std::isfinite(v) || v < 0 || v > 100) throw InputError("mAP values must lie in [0, 100]");
    if (in.oracle == in.source_only) throw UndefinedGainError("adaptation gain undefined: oracle equals source-only");
    return (in.adapted - in.source_only) / (in.oracle - in.source_only) * 100.0;
}

double round_display(double percent) {
    // Nudge by a few ulps so values like 51.75 computed as 51.7499999 still round half-up.
    const double scaled = percent * 10.0;
    return std::floor(scaled + 0.5 + 1e-9 * std::max(1.0, std::abs(scaled))) / 10.0;
}

}  // namespace nsn
