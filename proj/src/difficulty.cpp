#include "nsn/difficulty.hpp"

#include <cmath>

#include "nsn/error.hpp"
#include "nsn/image_io.hpp"
#include "nsn/imaging.hpp"
#include "nsn/parallel.hpp"

namespace nsn {

void DifficultyThresholds::validate() const {
    if (!(target_size > 0) || !(local_contrast > 0) || !(background_complexity > 0))
        throw ConfigError("difficulty thresholds must be strictly positive");
    if (!(background_factor > 1)) throw ConfigError("background factor must exceed 1");
}

std::string_view to_string(DifficultyCategory c) {
    switch (c) {
        case DifficultyCategory::SmallTarget: return "st";
        case DifficultyCategory::LowContrast: return "lc";
        case DifficultyCategory::ComplexBackground: return "cb";
        case DifficultyCategory::SimpleExample: return "se";
    }
    return "st";
}

DifficultyCategory category_from_string(std::string_view s) {
    for (auto c : kAllCategories)
        if (to_string(c) == s) return c;
    throw InputError("unknown difficulty category '" + std::string(s) + "'");
}

BackgroundRegion background_region(const BBox& box, ImageSize image, double factor) {
    const PixelRect target = box.to_pixels(image);
    const int ow = static_cast<int>(round_half_up(factor * target.width()));
    const int oh = static_cast<int>(round_half_up(factor * target.height()));
    const double cx = target.x0 + target.width() / 2.0;
    const double cy = target.y0 + target.height() / 2.0;
    const int x0 = static_cast<int>(round_half_up(cx - ow / 2.0));
    const int y0 = static_cast<int>(round_half_up(cy - oh / 2.0));

    BackgroundRegion r;
    r.outer = clip({x0, y0, x0 + ow, y0 + oh}, image);
    r.inner = intersect(clip(target, image), r.outer);
    r.background_pixels = r.outer.area() - r.inner.area();
    return r;
}

DifficultyMetrics compute_metrics(const RasterImage& gray, const BBox& box, const DifficultyThresholds& thresholds) {
    if (gray.channels() != 1) throw InputError("compute_metrics expects a grayscale image");
    const BackgroundRegion region = background_region(box, gray.size(), thresholds.background_factor);
    if (region.inner.empty()) throw DegenerateBoxError("box has no pixels inside the image");

    const auto& plane = gray[0];
    DifficultyMetrics m;
    m.target_size = static_cast<double>(region.inner.area());
    m.background_pixels = region.background_pixels;
    m.target_mean = plane.block(region.inner.y0, region.inner.x0, region.inner.height(), region.inner.width())
                        .cast<double>()
                        .mean();
    if (region.background_pixels == 0) return m;

    const PixelRect& o = region.outer;
    const auto outer = plane.block(o.y0, o.x0, o.height(), o.width()).cast<double>();
    const auto inner = plane.block(region.inner.y0, region.inner.x0, region.inner.height(), region.inner.width())
                           .cast<double>();
    const double n = static_cast<double>(region.background_pixels);
    m.background_mean = (outer.sum() - inner.sum()) / n;

    // Squared deviations over the ring, taken as (outer - inner) sums of exact per-pixel terms.
    auto ring_sum = [&](double centre) {
        return (outer - centre).square().sum() - (inner - centre).square().sum();
    };
    m.local_contrast = std::sqrt(std::max(0.0, ring_sum(m.target_mean) / n));
    m.background_complexity = std::sqrt(std::max(0.0, ring_sum(m.background_mean) / n));
    return m;
}

DifficultyCategory classify(const DifficultyMetrics& m, const DifficultyThresholds& t) {
    if (m.target_size <= t.target_size) return DifficultyCategory::SmallTarget;
    if (m.local_contrast <= t.local_contrast) return DifficultyCategory::LowContrast;
    if (m.background_complexity <= t.background_complexity) return DifficultyCategory::SimpleExample;
    return DifficultyCategory::ComplexBackground;
}

PartitionReport partition_dataset(const DatasetManifest& manifest, const std::vector<std::vector<LabeledBox>>& boxes,
                                  const PartitionOptions& options) {
    options.thresholds.validate();
    if (boxes.size() != manifest.size()) throw InputError("box lists do not match the manifest");

    std::vector<ImageDifficulty> images(manifest.size());
    std::vector<std::string> errors(manifest.size());
    parallel_for(manifest.size(), options.jobs, [&](std::size_t i) {
        images[i].image = manifest.entries[i].image.generic_string();
        if (boxes[i].empty()) return;
        try {
            RasterImage gray = to_grayscale(read_image(manifest.image_path(i)));
            if (options.resize_to) gray = resize_bilinear(gray, *options.resize_to);
            for (std::size_t b = 0; b < boxes[i].size(); ++b) {
                BoxDifficulty d;
                d.box_index = b;
                d.metrics = compute_metrics(gray, boxes[i][b].bbox, options.thresholds);
                d.category = classify(d.metrics, options.thresholds);
                images[i].boxes.push_back(d);
            }
        } catch (const Error& e) {
            images[i].boxes.clear();
            errors[i] = manifest.image_path(i).string() + ": " + e.what();
        }
    });

    PartitionReport report;
    report.images = std::move(images);
    for (const auto& img : report.images)
        for (const auto& b : img.boxes) ++report.counts[static_cast<std::size_t>(b.category)];
    for (auto& e : errors)
        if (!e.empty()) report.errors.push_back(std::move(e));
    return report;
}

PartitionReport partition_dataset(const DatasetManifest& manifest, const PartitionOptions& options) {
    std::vector<std::vector<LabeledBox>> boxes(manifest.size());
    std::vector<std::string> errors(manifest.size());
    parallel_for(manifest.size(), options.jobs, [&](std::size_t i) {
        const auto label = manifest.label_path(i);
        if (!label) return;
        try {
            boxes[i] = load_labels(*label);
        } catch (const Error& e) {
            errors[i] = e.what();
        }
    });
    PartitionReport report = partition_dataset(manifest, boxes, options);
    for (auto& e : errors)
        if (!e.empty()) report.errors.push_back(std::move(e));
    return report;
}

nlohmann::ordered_json to_json(const PartitionReport& r) {
    nlohmann::ordered_json counts;
    std::size_t total = 0;
    for (auto c : kAllCategories) {
        counts[std::string(to_string(c))] = r.count(c);
        total += r.count(c);
    }
    nlohmann::ordered_json images = nlohmann::ordered_json::object();
    for (const auto& img : r.images) {
        nlohmann::ordered_json list = nlohmann::ordered_json::array();
        for (const auto& b : img.boxes)
            list.push_back({{"box_index", b.box_index},
                            {"m_ts", b.metrics.target_size},
                            {"m_lc", b.metrics.local_contrast},
                            {"m_bc", b.metrics.background_complexity},
                            {"category", to_string(b.category)}});
        images[img.image] = std::move(list);
    }
    return {{"summary", {{"boxes", total}, {"counts", counts}, {"errors", r.errors.size()}}},
            {"images", images},
            {"errors", r.errors}};
}

}  // namespace nsn
