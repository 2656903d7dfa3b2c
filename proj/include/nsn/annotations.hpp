#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nsn {

struct ImageSize {
    int width = 0;
    int height = 0;
    bool operator==(const ImageSize&) const = default;
};

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct PixelRect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    long long area() const { return empty() ? 0 : static_cast<long long>(width()) * height(); }
    bool empty() const { return x1 <= x0 || y1 <= y0; }
    bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
    bool operator==(const PixelRect&) const = default;
};

PixelRect intersect(const PixelRect& a, const PixelRect& b);
PixelRect clip(const PixelRect& r, ImageSize size);

/// Box in normalized center/size form, the representation used by label files.
struct BBox {
    double cx = 0.5, cy = 0.5, w = 0.0, h = 0.0;

    bool operator==(const BBox&) const = default;

    double x0() const { return cx - w / 2; }
    double x1() const { return cx + w / 2; }
    double y0() const { return cy - h / 2; }
    double y1() const { return cy + h / 2; }

    bool valid() const;

    /// Sizes are rounded half-up (at least 1 px), then the top-left corner is rounded half-up.
    PixelRect to_pixels(ImageSize size) const;
    static BBox from_pixels(const PixelRect& r, ImageSize size);
};

double iou(const BBox& a, const BBox& b);
double iou(const PixelRect& a, const PixelRect& b);

enum class LabelKind { GroundTruth, Pseudo, PastedTrue };

std::string_view to_string(LabelKind k);
LabelKind label_kind_from_string(std::string_view s);

struct LabeledBox {
    BBox bbox;
    LabelKind kind = LabelKind::GroundTruth;
    std::optional<double> confidence;
    int category = 0;

    static LabeledBox ground_truth(const BBox& b) { return {b, LabelKind::GroundTruth, std::nullopt, 0}; }
    static LabeledBox pseudo(const BBox& b, double p) { return {b, LabelKind::Pseudo, p, 0}; }
    static LabeledBox pasted(const BBox& b) { return {b, LabelKind::PastedTrue, std::nullopt, 0}; }

    bool operator==(const LabeledBox&) const = default;
};

double round_half_up(double v);

/// Provenance sidecar path for a label file: `<stem>.prov.json` beside it.
std::filesystem::path provenance_path(const std::filesystem::path& label_file);

/// Parses a label file. Six-field lines are predictions (kind Pseudo); five-field lines take
/// `kind_default`, unless a provenance sidecar marks the line as pasted. When `image_size` is
/// given, boxes whose pixel footprint misses the image are rejected.
std::vector<LabeledBox> load_labels(const std::filesystem::path& path,
                                    std::optional<ImageSize> image_size = std::nullopt,
                                    LabelKind kind_default = LabelKind::GroundTruth);

/// Writes `category cx cy w h [conf]` with six decimals. A sidecar is written when any box is
/// PastedTrue and removed otherwise.
void save_labels(const std::vector<LabeledBox>& boxes, const std::filesystem::path& path);

std::string format_label_line(const LabeledBox& box);

}  // namespace nsn
