#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include "nsn/annotations.hpp"
#include "nsn/image_io.hpp"
#include "nsn/manifest.hpp"
#include "nsn/raster.hpp"

namespace nsn::testing {

/// Gray image (stored RGB) with a target rectangle of value `inside` and background from `bg`.
inline RasterImage target_on_background(int size, const PixelRect& target, int inside,
                                        const std::function<int(int, int)>& bg) {
    RasterImage img(size, size, 3);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const int v = target.contains(x, y) ? inside : bg(x, y);
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>(v);
        }
    return img;
}

/// Four 64x64 images, one box each, built to land on the category boundaries with thresholds
/// (256, 10, 10) and factor 1.5. A 20x20 target has a 30x30 window and a 500-pixel ring whose
/// checkerboard split is 250/250.
///   small.png:   16x16 target, m_ts = 256                     -> SmallTarget
///   lowcon.png:  target 100 on flat 110, m_lc = 10            -> LowContrast
///   simple.png:  target 50 on 140/160 checker, m_bc = 10      -> SimpleExample
///   complex.png: target 50 on 100/200 checker, m_bc = 50      -> ComplexBackground
inline std::filesystem::path write_four_category_fixture(const std::filesystem::path& dir) {
    const ImageSize size{64, 64};
    const PixelRect big{22, 22, 42, 42}, small{24, 24, 40, 40};
    auto checker = [](int a, int b) { return [a, b](int x, int y) { return (x + y) % 2 ? b : a; }; };
    struct Item {
        const char* name;
        PixelRect box;
        int inside;
        std::function<int(int, int)> bg;
    };
    const Item items[] = {
        {"small", small, 40, [](int, int) { return 200; }},
        {"lowcon", big, 100, [](int, int) { return 110; }},
        {"simple", big, 50, checker(140, 160)},
        {"complex", big, 50, checker(100, 200)},
    };
    DatasetManifest m;
    m.root = ".";
    m.domain = Domain::Target;
    for (const auto& it : items) {
        const std::string stem = it.name;
        write_png(target_on_background(size.width, it.box, it.inside, it.bg), dir / "images" / (stem + ".png"));
        save_labels({LabeledBox::ground_truth(BBox::from_pixels(it.box, size))}, dir / "labels" / (stem + ".txt"));
        m.entries.push_back({"images/" + stem + ".png", "labels/" + stem + ".txt"});
    }
    save_manifest(m, dir / "manifest.json");
    return dir / "manifest.json";
}

}  // namespace nsn::testing
