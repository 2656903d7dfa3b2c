#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsn/annotations.hpp"
#include "nsn/manifest.hpp"
#include "nsn/poisson.hpp"
#include "nsn/random.hpp"
#include "nsn/raster.hpp"

namespace nsn {

struct CropAsset {
    std::string id;
    RasterImage image;  // RGB
    BinaryMask mask;
    PixelRect tight;    // in crop pixels
    bool degraded = false;
};

struct CropLibraryReport {
    std::size_t inputs = 0;
    std::size_t kept = 0;
    std::vector<std::string> degraded;       // ids excluded (or kept, when allowed) for fallback masks
    std::vector<std::string> external_masks; // ids whose mask came from a file
    std::vector<std::string> errors;
};

struct CropLibrary {
    std::vector<CropAsset> assets;
    CropLibraryReport report;
};

struct CropLibraryOptions {
    std::optional<std::filesystem::path> external_masks;
    bool allow_degraded = false;
    unsigned jobs = 1;
};

/// One asset per manifest entry. Entries with a label file are pre-cropped around their first
/// box; others are used whole. Masks come from `<stem>.mask.png` in the external directory when
/// present, else from saliency_mask. Throws ConfigError when nothing usable remains.
CropLibrary build_crop_library(const DatasetManifest& crops, const CropLibraryOptions& options);

/// Builds an asset from an in-memory crop (mask computed or supplied).
CropAsset make_crop_asset(std::string id, const RasterImage& rgb, std::optional<BinaryMask> mask = std::nullopt);

struct AugmentConfig {
    int pastes = 3;  // J
    std::uint64_t seed = 0;
    int max_retries = 25;
    double overlap_iou = 0.3;
    bool allow_overlap = false;
    bool allow_degraded_masks = false;
    /// Size images without pseudo labels from the dataset-wide pseudo-box pool.
    bool fallback_sizing = false;
    PoissonSolveParams solver;
    unsigned jobs = 1;

    void validate() const;
};

struct PlacedCrop {
    std::string crop_id;
    PixelRect box;
    BBox bbox;
    bool blend_fallback = false;  // Poisson failed, hard copy used
};

struct AugmentationRecord {
    std::string source_image;
    std::string output_image;
    std::optional<std::size_t> reference_index;
    std::optional<PixelRect> reference_box;
    std::vector<PlacedCrop> placed;
    std::size_t skipped = 0;
    std::uint64_t stream_position = 0;
    std::string status;  // augmented, passthrough, error
    std::string error;
};

nlohmann::ordered_json to_json(const AugmentationRecord& r);

struct AugmentResult {
    RasterImage image;
    std::vector<LabeledBox> labels;  // input pseudo labels then pasted boxes
    AugmentationRecord record;
};

/// Pastes up to J size-matched crops onto one image. `reference_size` overrides the reference
/// pseudo-label choice (used by fallback sizing; `pseudo` may then be empty).
AugmentResult augment_image(const RasterImage& image, const std::vector<LabeledBox>& pseudo,
                            const std::vector<CropAsset>& library, const AugmentConfig& config, Rng& rng,
                            std::optional<ImageSize> reference_size = std::nullopt);

struct AugmentDatasetResult {
    DatasetManifest manifest;
    std::vector<AugmentationRecord> records;  // input manifest order
    std::size_t augmented = 0;
    std::size_t passthrough = 0;
    std::size_t failed = 0;
    std::size_t pasted = 0;
};

/// Augments every image of `target` (labels read as pseudo predictions) into `out_dir`,
/// mirroring relative paths, and writes `<out_dir>/records.mca.jsonl` plus `manifest.json`.
AugmentDatasetResult augment_dataset(const DatasetManifest& target, const std::vector<CropAsset>& library,
                                     const AugmentConfig& config, const std::filesystem::path& out_dir);

}  // namespace nsn
