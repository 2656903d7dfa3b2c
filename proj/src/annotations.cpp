#include "nsn/annotations.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nsn/error.hpp"

namespace nsn {

namespace fs = std::filesystem;

double round_half_up(double v) { return std::floor(v + 0.5); }

PixelRect intersect(const PixelRect& a, const PixelRect& b) {
    PixelRect r{std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
    if (r.empty()) return {};
    return r;
}

PixelRect clip(const PixelRect& r, ImageSize size) { return intersect(r, {0, 0, size.width, size.height}); }

bool BBox::valid() const {
    auto finite = std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h);
    return finite && cx >= 0 && cx <= 1 && cy >= 0 && cy <= 1 && w > 0 && w <= 1 && h > 0 && h <= 1;
}

PixelRect BBox::to_pixels(ImageSize size) const {
    const int wp = std::max(1, static_cast<int>(round_half_up(w * size.width)));
    const int hp = std::max(1, static_cast<int>(round_half_up(h * size.height)));
    const int x0 = static_cast<int>(round_half_up(cx * size.width - wp / 2.0));
    const int y0 = static_cast<int>(round_half_up(cy * size.height - hp / 2.0));
    return {x0, y0, x0 + wp, y0 + hp};
}

BBox BBox::from_pixels(const PixelRect& r, ImageSize size) {
    return {(r.x0 + r.width() / 2.0) / size.width, (r.y0 + r.height() / 2.0) / size.height,
            static_cast<double>(r.width()) / size.width, static_cast<double>(r.height()) / size.height};
}

double iou(const BBox& a, const BBox& b) {
    const double iw = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
    const double ih = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
    if (iw <= 0 || ih <= 0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

double iou(const PixelRect& a, const PixelRect& b) {
    const long long inter = intersect(a, b).area();
    if (inter == 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(a.area() + b.area() - inter);
}

std::string_view to_string(LabelKind k) {
    switch (k) {
        case LabelKind::GroundTruth: return "gt";
        case LabelKind::Pseudo: return "pseudo";
        case LabelKind::PastedTrue: return "pasted";
    }
    return "gt";
}

LabelKind label_kind_from_string(std::string_view s) {
    if (s == "gt") return LabelKind::GroundTruth;
    if (s == "pseudo") return LabelKind::Pseudo;
    if (s == "pasted") return LabelKind::PastedTrue;
    throw InputError("unknown label kind '" + std::string(s) + "'");
}

fs::path provenance_path(const fs::path& label_file) {
    fs::path p = label_file;
    p.replace_extension(".prov.json");
    return p;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        const std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

std::optional<double> parse_decimal(std::string_view s) {
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::map<std::size_t, LabelKind> read_provenance(const fs::path& label_file) {
    std::map<std::size_t, LabelKind> out;
    const fs::path prov = provenance_path(label_file);
    if (!fs::exists(prov)) return out;
    std::ifstream in(prov);
    nlohmann::ordered_json j;
    try {
        in >> j;
        for (auto& [key, value] : j.items()) out[std::stoul(key)] = label_kind_from_string(value.at("kind").get<std::string>());
    } catch (const std::exception& e) {
        throw ParseError(prov, 1, std::string("malformed provenance sidecar: ") + e.what());
    }
    return out;
}

}  // namespace

std::vector<LabeledBox> load_labels(const fs::path& path, std::optional<ImageSize> image_size, LabelKind kind_default) {
    if (!fs::exists(path)) throw NotFoundError(path);
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    const auto provenance = read_provenance(path);

    std::vector<LabeledBox> boxes;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto fields = split_fields(line);
        if (fields.empty()) continue;
        if (fields.size() != 5 && fields.size() != 6)
            throw ParseError(path, lineno, "expected 5 or 6 fields, got " + std::to_string(fields.size()));
        double values[6] = {};
        for (std::size_t f = 0; f < fields.size(); ++f) {
            auto v = parse_decimal(fields[f]);
            if (!v) throw ParseError(path, lineno, "non-numeric field '" + std::string(fields[f]) + "'");
            values[f] = *v;
        }
        if (values[0] != 0.0) throw ParseError(path, lineno, "category must be 0");
        LabeledBox box;
        box.bbox = {values[1], values[2], values[3], values[4]};
        if (box.bbox.cx < 0 || box.bbox.cx > 1) throw ParseError(path, lineno, "cx out of range");
        if (box.bbox.cy < 0 || box.bbox.cy > 1) throw ParseError(path, lineno, "cy out of range");
        if (box.bbox.w <= 0 || box.bbox.w > 1) throw ParseError(path, lineno, "w out of range");
        if (box.bbox.h <= 0 || box.bbox.h > 1) throw ParseError(path, lineno, "h out of range");
        if (fields.size() == 6) {
            if (values[5] < 0 || values[5] > 1) throw ParseError(path, lineno, "confidence out of range");
            box.kind = LabelKind::Pseudo;
            box.confidence = values[5];
        } else {
            if (kind_default == LabelKind::Pseudo)
                throw ParseError(path, lineno, "prediction line lacks a confidence");
            box.kind = kind_default;
        }
        if (auto it = provenance.find(boxes.size()); it != provenance.end()) {
            if ((it->second == LabelKind::Pseudo) != (box.kind == LabelKind::Pseudo))
                throw ParseError(path, lineno, "provenance sidecar disagrees with field count");
            box.kind = it->second;
        }
        if (image_size && clip(box.bbox.to_pixels(*image_size), *image_size).empty())
            throw ParseError(path, lineno, "box has no pixels inside the image");
        boxes.push_back(box);
    }
    return boxes;
}

std::string format_label_line(const LabeledBox& box) {
    char buf[160];
    if (box.confidence) {
        std::snprintf(buf, sizeof buf, "%d %.6f %.6f %.6f %.6f %.6f", box.category, box.bbox.cx, box.bbox.cy,
                      box.bbox.w, box.bbox.h, *box.confidence);
    } else {
        std::snprintf(buf, sizeof buf, "%d %.6f %.6f %.6f %.6f", box.category, box.bbox.cx, box.bbox.cy, box.bbox.w,
                      box.bbox.h);
    }
    return buf;
}

void save_labels(const std::vector<LabeledBox>& boxes, const fs::path& path) {
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    std::ostringstream text;
    for (const auto& b : boxes) text << format_label_line(b) << '\n';
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + path.string());
        out << text.str();
        if (!out) throw IoError("write failed: " + path.string());
    }

    const bool any_pasted =
        std::any_of(boxes.begin(), boxes.end(), [](const LabeledBox& b) { return b.kind == LabelKind::PastedTrue; });
    const fs::path prov = provenance_path(path);
    if (!any_pasted) {
        fs::remove(prov, ec);
        return;
    }
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < boxes.size(); ++i) j[std::to_string(i)] = {{"kind", std::string(to_string(boxes[i].kind))}};
    std::ofstream out(prov, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + prov.string());
    out << j.dump(2) << '\n';
}

}  // namespace nsn
