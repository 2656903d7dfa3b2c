#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsn/annotations.hpp"
#include "nsn/manifest.hpp"
#include "nsn/raster.hpp"

namespace nsn {

struct BackgroundRegion {
    PixelRect outer;  // clipped to the image
    PixelRect inner;  // clipped to the image
    long long background_pixels = 0;  // N_b
};

/// Target size, local contrast and background complexity of one box.
struct DifficultyMetrics {
    double target_size = 0;           // m_ts, px^2
    double local_contrast = 0;        // m_lc
    double background_complexity = 0; // m_bc
    double target_mean = 0;
    double background_mean = 0;
    long long background_pixels = 0;
};

struct DifficultyThresholds {
    double target_size = 16.0 * 16.0;
    double local_contrast = 10.0;
    double background_complexity = 10.0;
    double background_factor = 1.5;

    void validate() const;
};

enum class DifficultyCategory { SmallTarget = 0, LowContrast = 1, ComplexBackground = 2, SimpleExample = 3 };

inline constexpr std::array<DifficultyCategory, 4> kAllCategories{
    DifficultyCategory::SmallTarget, DifficultyCategory::LowContrast, DifficultyCategory::ComplexBackground,
    DifficultyCategory::SimpleExample};

std::string_view to_string(DifficultyCategory c);  // "st", "lc", "cb", "se"
DifficultyCategory category_from_string(std::string_view s);

/// Background window of `factor` times the target dims, centred on the target, clipped.
BackgroundRegion background_region(const BBox& box, ImageSize image, double factor);

/// Raw rectangle statistics on a gray image. N_b = 0 gives zero contrast and complexity.
DifficultyMetrics compute_metrics(const RasterImage& gray, const BBox& box, const DifficultyThresholds& thresholds);

/// The four-way cascade: small size first, then low contrast, then background complexity.
DifficultyCategory classify(const DifficultyMetrics& m, const DifficultyThresholds& t);

struct BoxDifficulty {
    std::size_t box_index = 0;
    DifficultyMetrics metrics;
    DifficultyCategory category = DifficultyCategory::SmallTarget;
};

struct ImageDifficulty {
    std::string image;
    std::vector<BoxDifficulty> boxes;
};

struct PartitionOptions {
    DifficultyThresholds thresholds;
    /// Resample images (and thus box pixel footprints) to this size before measuring.
    std::optional<ImageSize> resize_to;
    unsigned jobs = 1;
};

struct PartitionReport {
    std::vector<ImageDifficulty> images;  // manifest order
    std::array<std::size_t, 4> counts{};  // indexed by DifficultyCategory
    std::vector<std::string> errors;

    std::size_t count(DifficultyCategory c) const { return counts[static_cast<std::size_t>(c)]; }
};

/// Classifies `boxes[i]` against the image of manifest entry i. Per-image failures are reported.
PartitionReport partition_dataset(const DatasetManifest& manifest, const std::vector<std::vector<LabeledBox>>& boxes,
                                  const PartitionOptions& options);

/// Same, reading boxes from the manifest's own label files.
PartitionReport partition_dataset(const DatasetManifest& manifest, const PartitionOptions& options);

nlohmann::ordered_json to_json(const PartitionReport& r);

}  // namespace nsn
