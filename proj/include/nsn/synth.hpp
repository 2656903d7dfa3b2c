#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsn/manifest.hpp"
#include "nsn/raster.hpp"

namespace nsn::synth {

enum class Background { Uniform, Gradient, Checker, NoiseTexture };
enum class Shape { Disc, RoundedRect, Cross };

struct SceneSpec {
    ImageSize size{160, 160};
    Background background = Background::Uniform;
    double background_level = 170;      // mean gray level
    double background_amplitude = 40;   // gradient span / checker contrast / noise spread
    int checker_cell = 16;
    int targets_min = 1;
    int targets_max = 1;
    std::vector<Shape> shapes{Shape::Disc};
    int size_min = 12;                  // target extent in px
    int size_max = 24;
    double intensity_min = 20;          // target gray level
    double intensity_max = 70;
    std::uint64_t seed = 0;
    Domain domain = Domain::Source;
    Split split = Split::Train;

    void validate() const;
};

nlohmann::ordered_json to_json(const SceneSpec& s);
SceneSpec scene_spec_from_json(const nlohmann::ordered_json& j);

struct RenderedScene {
    RasterImage image;
    BinaryMask targets;          // union of target pixels
    std::vector<PixelRect> boxes;
};

/// Renders scene `index` of a spec; a pure function of (spec, index).
RenderedScene render_scene(const SceneSpec& spec, std::size_t index);

/// Renders a filled shape of the given extent into a mask of size `canvas`, top-left at (x, y).
void draw_shape(BinaryMask& canvas, Shape shape, int x, int y, int extent);

/// Writes `images/NNNN.png`, `labels/NNNN.txt` and `manifest.json` under `out`.
DatasetManifest generate_domain(const SceneSpec& spec, std::size_t count, const std::filesystem::path& out,
                                unsigned jobs = 1);

struct ConfidenceLaw {
    double lo = 1.0;
    double hi = 1.0;
};

struct Corruption {
    ConfidenceLaw confidence;
    double drop_rate = 0;
    int jitter_px = 0;
    double false_positive_rate = 0;  // expected false positives per image
    ConfidenceLaw false_positive_confidence{0.3, 0.6};
    /// Confidence subtracted from boxes of at most `small_target_area` px^2.
    double small_target_penalty = 0;
    double small_target_area = 256;
};

nlohmann::ordered_json to_json(const Corruption& c);
Corruption corruption_from_json(const nlohmann::ordered_json& j);

/// Predictions for one image: ground truth perturbed per `c`. Randomness is keyed by
/// (seed, image key, box index), so the same box sees the same draws under any corruption level.
std::vector<LabeledBox> stub_predictions(const std::vector<LabeledBox>& truth, ImageSize size, const Corruption& c,
                                         std::uint64_t seed, const std::string& image_key);

/// Writes `<out>/<image stem>.txt` for every manifest entry.
void stub_detect(const DatasetManifest& truth, const Corruption& c, std::uint64_t seed,
                 const std::filesystem::path& out, unsigned jobs = 1);

/// Stand-in model artifact understood by the stub adapters.
struct StubModel {
    std::string role = "large";  // large | small
    double quality = 0.4;        // 0 = useless, 1 = perfect
    std::uint64_t seed = 0;
    int generation = 0;
    std::vector<std::string> truth;  // manifests the stub can "see"

    Corruption corruption() const;
};

nlohmann::ordered_json to_json(const StubModel& m);
StubModel stub_model_from_json(const nlohmann::ordered_json& j);

/// Detector adapter body: `infer --request <file>`.
void stub_infer(const std::filesystem::path& request, unsigned jobs = 1);

/// Trainer adapter body: `train --request <file>`. Quality grows with the number of target
/// labels (pasted-true ones weigh double) in the training manifest.
void stub_train(const std::filesystem::path& request, const std::vector<std::string>& truth);

}  // namespace nsn::synth
