#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsn/annotations.hpp"
#include "nsn/manifest.hpp"

namespace nsn {

enum class Interpolation { AllPoint, ElevenPoint };

std::string to_string(Interpolation m);
Interpolation interpolation_from_string(const std::string& s);

struct PRPoint {
    double threshold = 0;
    double precision = 1;
    double recall = 0;
    std::size_t tp = 0, fp = 0, fn = 0;
};

struct MatchedPair {
    std::size_t image = 0;
    std::size_t detection = 0;
    std::size_t ground_truth = 0;
    double iou = 0;
};

struct ImageEvaluation {
    std::size_t tp = 0, fp = 0, fn = 0;
};

struct APResult {
    double ap = 0;
    Interpolation mode = Interpolation::AllPoint;
    double iou_threshold = 0.5;
    std::size_t tp = 0, fp = 0, fn = 0;
    std::vector<PRPoint> pr_curve;  // one point per distinct confidence, descending
    std::vector<MatchedPair> matches;
    std::vector<ImageEvaluation> per_image;
};

/// Images are keyed by position; `image_keys` (same length) orders confidence ties.
struct EvaluationSet {
    std::vector<std::string> image_keys;
    std::vector<std::vector<BBox>> ground_truth;
    std::vector<std::vector<LabeledBox>> detections;
};

/// Single-category AP. Detections are ranked by confidence (ties: image key, box index) and
/// greedily matched to the unmatched ground truth of highest IoU >= threshold. Tied confidences
/// form one operating point. With no ground truth at all AP is 0.
APResult average_precision(const EvaluationSet& set, double iou_threshold = 0.5,
                           Interpolation mode = Interpolation::AllPoint);

struct MapReport {
    APResult ap;
    double map = 0;  // percent, full precision
    std::size_t missing_predictions = 0;
    std::vector<std::string> images;
};

/// Loads predictions `<pred_dir>/<image stem>.txt` for each ground-truth entry; a missing file
/// counts as no detections.
MapReport map50(const DatasetManifest& ground_truth, const std::filesystem::path& prediction_dir,
                Interpolation mode = Interpolation::AllPoint, double iou_threshold = 0.5);

nlohmann::ordered_json to_json(const MapReport& r);

struct AdaptationGainInputs {
    double adapted = 0;      // mAP of the adapted model
    double source_only = 0;  // mAP of the source-only model
    double oracle = 0;       // mAP of the target-trained model
};

/// (adapted - source) / (oracle - source) x 100. Throws UndefinedGainError when oracle == source.
double adaptation_gain(const AdaptationGainInputs& in);

/// Display rounding to one decimal, half-up.
double round_display(double percent);

}  // namespace nsn
