#include "nsn/mca.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include "nsn/error.hpp"
#include "nsn/image_io.hpp"
#include "nsn/imaging.hpp"
#include "nsn/parallel.hpp"

namespace nsn {

namespace fs = std::filesystem;

CropAsset make_crop_asset(std::string id, const RasterImage& rgb, std::optional<BinaryMask> mask) {
    CropAsset asset;
    asset.id = std::move(id);
    asset.image = rgb;
    if (mask) {
        if (mask->cols() != rgb.width() || mask->rows() != rgb.height())
            throw SizeError("mask dimensions differ from crop " + asset.id);
        asset.mask = *mask;
    } else {
        auto s = saliency_mask(rgb);
        asset.mask = std::move(s.mask);
        asset.degraded = s.degraded;
    }
    asset.tight = tight_box(asset.mask);
    if (asset.tight.empty()) throw InputError("empty mask for crop " + asset.id);
    return asset;
}

CropLibrary build_crop_library(const DatasetManifest& crops, const CropLibraryOptions& options) {
    struct Slot {
        std::optional<CropAsset> asset;
        bool external = false;
        std::string error;
    };
    std::vector<Slot> slots(crops.size());
    parallel_for(crops.size(), options.jobs, [&](std::size_t i) {
        const std::string id = crops.entries[i].image.generic_string();
        try {
            RasterImage rgb = read_rgb(crops.image_path(i));
            std::optional<BinaryMask> mask;
            if (options.external_masks) {
                const fs::path file = *options.external_masks / (crops.image_path(i).stem().string() + ".mask.png");
                if (fs::exists(file)) {
                    mask = read_mask(file);
                    slots[i].external = true;
                }
            }
            if (const auto label = crops.label_path(i)) {
                const auto boxes = load_labels(*label, rgb.size());
                if (!boxes.empty()) {
                    const PixelRect r = clip(boxes.front().bbox.to_pixels(rgb.size()), rgb.size());
                    if (mask && (mask->cols() != rgb.width() || mask->rows() != rgb.height()))
                        throw SizeError("mask dimensions differ from crop " + id);
                    rgb = crop(rgb, r);
                    if (mask) mask = crop(*mask, r);
                }
            }
            slots[i].asset = make_crop_asset(id, rgb, mask);
        } catch (const Error& e) {
            slots[i].error = id + ": " + e.what();
        }
    });

    CropLibrary lib;
    lib.report.inputs = crops.size();
    for (auto& s : slots) {
        if (!s.error.empty()) {
            lib.report.errors.push_back(std::move(s.error));
            continue;
        }
        if (s.external) lib.report.external_masks.push_back(s.asset->id);
        if (s.asset->degraded) {
            lib.report.degraded.push_back(s.asset->id);
            if (!options.allow_degraded) continue;
        }
        lib.assets.push_back(std::move(*s.asset));
    }
    lib.report.kept = lib.assets.size();
    if (lib.assets.empty()) throw ConfigError("crop library is empty; augmentation is impossible");
    return lib;
}

void AugmentConfig::validate() const {
    if (pastes < 1) throw ConfigError("pastes per image must be at least 1");
    if (max_retries < 1) throw ConfigError("placement retries must be at least 1");
    if (!(overlap_iou >= 0 && overlap_iou <= 1)) throw ConfigError("overlap IoU limit must lie in [0, 1]");
    if (!(solver.tolerance > 0)) throw ConfigError("solver tolerance must be positive");
}

nlohmann::ordered_json to_json(const AugmentationRecord& r) {
    auto rect = [](const PixelRect& p) { return nlohmann::ordered_json{p.x0, p.y0, p.x1, p.y1}; };
    nlohmann::ordered_json placed = nlohmann::ordered_json::array();
    for (const auto& p : r.placed)
        placed.push_back({{"crop", p.crop_id},
                          {"box", rect(p.box)},
                          {"bbox", {p.bbox.cx, p.bbox.cy, p.bbox.w, p.bbox.h}},
                          {"blend_fallback", p.blend_fallback}});
    nlohmann::ordered_json j;
    j["source_image"] = r.source_image;
    j["output_image"] = r.output_image;
    j["status"] = r.status;
    j["reference_index"] = r.reference_index ? nlohmann::ordered_json(*r.reference_index) : nlohmann::ordered_json();
    j["reference_box"] = r.reference_box ? rect(*r.reference_box) : nlohmann::ordered_json();
    j["placed"] = std::move(placed);
    j["skipped"] = r.skipped;
    j["stream_position"] = r.stream_position;
    if (!r.error.empty()) j["error"] = r.error;
    return j;
}

namespace {

/// A crop rescaled so its mask's tight box matches the reference size, cut to that box plus a
/// one-pixel border of real (or edge-replicated) crop pixels.
struct Patch {
    RasterImage image;
    BinaryMask mask;     // object pixels, never on the border
    BinaryMask region;   // blend region: object dilated by one pixel
    int width = 0, height = 0;  // tight box dims
};

std::optional<Patch> fit_patch(const CropAsset& asset, ImageSize reference) {
    const double sx = static_cast<double>(reference.width) / asset.tight.width();
    const double sy = static_cast<double>(reference.height) / asset.tight.height();
    int w = std::max(1, static_cast<int>(round_half_up(asset.image.width() * sx)));
    int h = std::max(1, static_cast<int>(round_half_up(asset.image.height() * sy)));
    for (int attempt = 0; attempt < 4; ++attempt) {
        const BinaryMask mask = resize_bilinear(asset.mask, ImageSize{w, h});
        const PixelRect t = tight_box(mask);
        if (t.empty()) return std::nullopt;
        const int dw = reference.width - t.width(), dh = reference.height - t.height();
        if (std::abs(dw) <= 1 && std::abs(dh) <= 1) {
            const RasterImage image = resize_bilinear(asset.image, ImageSize{w, h});
            Patch p;
            p.width = t.width();
            p.height = t.height();
            const int pw = t.width() + 2, ph = t.height() + 2;
            p.image = RasterImage(pw, ph, image.channels());
            p.mask = BinaryMask::Constant(ph, pw, false);
            for (int y = 0; y < ph; ++y)
                for (int x = 0; x < pw; ++x) {
                    const int ix = std::clamp(t.x0 - 1 + x, 0, w - 1);
                    const int iy = std::clamp(t.y0 - 1 + y, 0, h - 1);
                    for (int c = 0; c < image.channels(); ++c) p.image.at(x, y, c) = image.at(ix, iy, c);
                    if (x > 0 && y > 0 && x < pw - 1 && y < ph - 1) p.mask(y, x) = mask(iy, ix);
                }
            p.region = dilate3x3(p.mask);
            return p;
        }
        w = std::max(1, w + dw);
        h = std::max(1, h + dh);
    }
    return std::nullopt;
}

}  // namespace

AugmentResult augment_image(const RasterImage& image, const std::vector<LabeledBox>& pseudo,
                            const std::vector<CropAsset>& library, const AugmentConfig& config, Rng& rng,
                            std::optional<ImageSize> reference_size) {
    if (library.empty()) throw ConfigError("crop library is empty; augmentation is impossible");
    if (image.channels() != 3) throw InputError("augment_image expects an RGB image");
    const ImageSize size = image.size();

    AugmentResult result;
    result.image = image;
    result.labels = pseudo;
    auto& rec = result.record;

    ImageSize reference;
    if (reference_size) {
        reference = *reference_size;
    } else if (pseudo.empty()) {
        rec.status = "passthrough";
        rec.stream_position = rng.draws();
        return result;
    } else {
        const auto idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pseudo.size()) - 1));
        const PixelRect r = clip(pseudo[idx].bbox.to_pixels(size), size);
        rec.reference_index = idx;
        rec.reference_box = r;
        reference = {r.width(), r.height()};
    }

    std::vector<PixelRect> occupied;
    for (const auto& b : pseudo) occupied.push_back(clip(b.bbox.to_pixels(size), size));

    for (int j = 0; j < config.pastes; ++j) {
        const auto& asset = library[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(library.size()) - 1))];
        const auto patch = reference.width >= 1 && reference.height >= 1 ? fit_patch(asset, reference) : std::nullopt;
        // The blend region (object plus one pixel) must keep one pixel clear of the border.
        const int max_x = size.width - patch.value_or(Patch{}).width - 2;
        const int max_y = size.height - patch.value_or(Patch{}).height - 2;
        if (!patch || max_x < 2 || max_y < 2) {
            ++rec.skipped;
            continue;
        }
        std::optional<PixelRect> spot;
        for (int attempt = 0; attempt < config.max_retries && !spot; ++attempt) {
            const int x = static_cast<int>(rng.uniform_int(2, max_x));
            const int y = static_cast<int>(rng.uniform_int(2, max_y));
            const PixelRect box{x, y, x + patch->width, y + patch->height};
            const bool clear = config.allow_overlap ||
                               std::all_of(occupied.begin(), occupied.end(),
                                           [&](const PixelRect& o) { return iou(box, o) <= config.overlap_iou; });
            if (clear) spot = box;
        }
        if (!spot) {
            ++rec.skipped;
            continue;
        }
        const Offset offset{spot->x0 - 1, spot->y0 - 1};
        PlacedCrop placed{asset.id, *spot, BBox::from_pixels(*spot, size), false};
        try {
            // Region pixels outside the object sit on the boundary ring and keep the target.
            result.image = poisson_blend(result.image, patch->image, patch->region, offset, config.solver);
        } catch (const ConvergenceError&) {
            result.image = masked_copy(result.image, patch->image, patch->mask, offset);
            placed.blend_fallback = true;
        }
        occupied.push_back(*spot);
        result.labels.push_back(LabeledBox::pasted(placed.bbox));
        rec.placed.push_back(std::move(placed));
    }
    rec.status = "augmented";
    rec.stream_position = rng.draws();
    return result;
}

AugmentDatasetResult augment_dataset(const DatasetManifest& target, const std::vector<CropAsset>& library,
                                     const AugmentConfig& config, const fs::path& out_dir) {
    config.validate();
    std::vector<CropAsset> usable;
    for (const auto& a : library)
        if (!a.degraded || config.allow_degraded_masks) usable.push_back(a);
    if (usable.empty()) throw ConfigError("crop library is empty; augmentation is impossible");

    const std::size_t n = target.size();
    std::vector<std::vector<LabeledBox>> pseudo(n);
    std::vector<std::string> load_errors(n);
    parallel_for(n, config.jobs, [&](std::size_t i) {
        if (const auto label = target.label_path(i); label && fs::exists(*label)) {
            try {
                pseudo[i] = load_labels(*label, std::nullopt, LabelKind::Pseudo);
            } catch (const Error& e) {
                load_errors[i] = e.what();
            }
        }
    });

    // Dataset-wide pool of pseudo-box pixel sizes, used only with fallback sizing. Sorted so the
    // pool does not depend on manifest order.
    std::vector<std::pair<int, int>> pool;
    std::vector<ImageSize> sizes(n);
    if (config.fallback_sizing) {
        parallel_for(n, config.jobs, [&](std::size_t i) {
            if (!pseudo[i].empty()) sizes[i] = read_image(target.image_path(i)).size();
        });
        for (std::size_t i = 0; i < n; ++i)
            for (const auto& b : pseudo[i]) {
                const PixelRect r = clip(b.bbox.to_pixels(sizes[i]), sizes[i]);
                pool.emplace_back(r.width(), r.height());
            }
        std::sort(pool.begin(), pool.end());
    }

    AugmentDatasetResult out;
    out.records.resize(n);
    DatasetManifest manifest;
    manifest.root = out_dir;
    manifest.split = target.split;
    manifest.domain = Domain::TargetAugmented;
    manifest.entries.resize(n);

    parallel_for(n, config.jobs, [&](std::size_t i) {
        const fs::path rel_image = fs::path(target.entries[i].image).replace_extension(".png");
        const auto& given = target.entries[i].label;
        const fs::path rel_label = given && given->is_relative()
                                       ? *given
                                       : fs::path(target.entries[i].image).replace_extension(".txt");
        const std::string key = target.entries[i].image.generic_string();
        manifest.entries[i] = {rel_image.relative_path(), rel_label.relative_path()};
        auto& rec = out.records[i];
        rec.source_image = key;
        rec.output_image = rel_image.relative_path().generic_string();
        try {
            if (!load_errors[i].empty()) throw InputError(load_errors[i]);
            Rng rng(derive_seed(config.seed, key));
            const RasterImage image = read_rgb(target.image_path(i));
            std::optional<ImageSize> reference;
            if (pseudo[i].empty() && config.fallback_sizing && !pool.empty()) {
                const auto& s = pool[static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
                reference = ImageSize{s.first, s.second};
            }
            AugmentResult res = augment_image(image, pseudo[i], usable, config, rng, reference);
            write_png(res.image, out_dir / manifest.entries[i].image);
            save_labels(res.labels, out_dir / *manifest.entries[i].label);
            res.record.source_image = rec.source_image;
            res.record.output_image = rec.output_image;
            rec = std::move(res.record);
        } catch (const Error& e) {
            rec.status = "error";
            rec.error = e.what();
        }
    });

    std::vector<ManifestEntry> kept;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::ofstream records(out_dir / "records.mca.jsonl", std::ios::binary | std::ios::trunc);
    if (!records) throw IoError("cannot write " + (out_dir / "records.mca.jsonl").string());
    for (std::size_t i = 0; i < n; ++i) {
        const auto& rec = out.records[i];
        records << to_json(rec).dump() << '\n';
        if (rec.status == "error") {
            ++out.failed;
            continue;
        }
        if (rec.status == "augmented")
            ++out.augmented;
        else
            ++out.passthrough;
        out.pasted += rec.placed.size();
        kept.push_back(manifest.entries[i]);
    }
    if (n > 0 && out.failed == n) throw StageError("augmentation failed for every image");
    manifest.entries = std::move(kept);
    DatasetManifest relocatable = manifest;
    relocatable.root = ".";
    save_manifest(relocatable, out_dir / "manifest.json");
    out.manifest = std::move(manifest);
    return out;
}

}  // namespace nsn
