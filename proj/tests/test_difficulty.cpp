#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "nsn/difficulty.hpp"
#include "nsn/error.hpp"
#include "nsn/imaging.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace nsn;
using nsn::testing::TempDir;

namespace {

RasterImage gray_image(int w, int h, const std::function<int(int, int)>& f) {
    RasterImage img(w, h, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) img.at(x, y) = static_cast<std::uint8_t>(f(x, y));
    return img;
}

// Per-pixel reference statistics over the window ring.
struct RingStats {
    double m_lc = 0, m_bc = 0;
};

RingStats ring_stats(const RasterImage& g, const PixelRect& outer, const PixelRect& inner) {
    double tsum = 0, tn = 0;
    std::vector<double> ring;
    for (int y = 0; y < g.height(); ++y)
        for (int x = 0; x < g.width(); ++x) {
            if (inner.contains(x, y)) {
                tsum += g.at(x, y);
                tn += 1;
            } else if (outer.contains(x, y)) {
                ring.push_back(g.at(x, y));
            }
        }
    RingStats s;
    if (ring.empty()) return s;
    const double it = tsum / tn;
    double mean = 0;
    for (double v : ring) mean += v / static_cast<double>(ring.size());
    for (double v : ring) {
        s.m_lc += (v - it) * (v - it);
        s.m_bc += (v - mean) * (v - mean);
    }
    s.m_lc = std::sqrt(s.m_lc / static_cast<double>(ring.size()));
    s.m_bc = std::sqrt(s.m_bc / static_cast<double>(ring.size()));
    return s;
}

}  // namespace

TEST_CASE("background_region examples") {
    const ImageSize img{640, 640};
    const BBox centred = BBox::from_pixels({310, 310, 330, 330}, img);
    const BackgroundRegion r = background_region(centred, img, 1.5);
    CHECK(r.outer.width() == 30);
    CHECK(r.outer.height() == 30);
    CHECK(r.background_pixels == 900 - 400);

    const BackgroundRegion full = background_region({0.5, 0.5, 1.0, 1.0}, img, 1.5);
    CHECK(full.outer == PixelRect{0, 0, 640, 640});
    CHECK(full.background_pixels == 0);

    const BBox corner = BBox::from_pixels({0, 0, 10, 10}, img);
    const BackgroundRegion c = background_region(corner, img, 1.5);
    // Window 15x15 centred on (5, 5): x0 = round(5 - 7.5) = -2 (half-up), clipped at 0.
    CHECK(c.background_pixels == oracle::enumerate_background(640, 640, -2, -2, 13, 13, 0, 0, 10, 10));
    CHECK(c.background_pixels == 13 * 13 - 100);
}

TEST_CASE("N_b equals pixel enumeration for random boxes") {
    std::mt19937_64 gen(42);
    std::uniform_int_distribution<int> dim(8, 60);
    std::uniform_real_distribution<double> u(0.0, 1.0), f(1.1, 3.0);
    for (int i = 0; i < 300; ++i) {
        const ImageSize img{dim(gen), dim(gen)};
        const BBox b{u(gen), u(gen), std::max(0.02, u(gen) * 0.6), std::max(0.02, u(gen) * 0.6)};
        const double factor = f(gen);
        const PixelRect t = b.to_pixels(img);
        // Window from the definition: factor x target dims, rounded half-up, centred.
        const int ow = static_cast<int>(std::floor(factor * t.width() + 0.5));
        const int oh = static_cast<int>(std::floor(factor * t.height() + 0.5));
        const int ox = static_cast<int>(std::floor(t.x0 + t.width() / 2.0 - ow / 2.0 + 0.5));
        const int oy = static_cast<int>(std::floor(t.y0 + t.height() / 2.0 - oh / 2.0 + 0.5));
        const BackgroundRegion r = background_region(b, img, factor);
        CHECK(r.background_pixels ==
              oracle::enumerate_background(img.width, img.height, ox, oy, ox + ow, oy + oh, t.x0, t.y0, t.x1, t.y1));
    }
}

TEST_CASE("compute_metrics examples") {
    const DifficultyThresholds th;
    const RasterImage flat = gray_image(64, 64, [](int, int) { return 128; });
    const DifficultyMetrics u = compute_metrics(flat, BBox::from_pixels({20, 20, 30, 40}, {64, 64}), th);
    CHECK(u.target_size == 200);
    CHECK(u.local_contrast == 0);
    CHECK(u.background_complexity == 0);

    const PixelRect t{22, 22, 42, 42};
    const RasterImage two = gray_image(64, 64, [&](int x, int y) { return t.contains(x, y) ? 200 : 100; });
    const DifficultyMetrics m2 = compute_metrics(two, BBox::from_pixels(t, {64, 64}), th);
    CHECK(m2.local_contrast == doctest::Approx(100).epsilon(1e-12));
    CHECK(m2.background_complexity == doctest::Approx(0).epsilon(1e-12));

    // Alternating 0/255 ring around a target of mean 90.
    const RasterImage alt =
        gray_image(64, 64, [&](int x, int y) { return t.contains(x, y) ? 90 : ((x + y) % 2 ? 255 : 0); });
    const BBox tb = BBox::from_pixels(t, {64, 64});
    const DifficultyMetrics m3 = compute_metrics(alt, tb, th);
    CHECK(m3.background_pixels == 500);
    CHECK(m3.background_complexity == doctest::Approx(127.5).epsilon(1e-12));
    const double closed = std::sqrt(((0 - 90.0) * (0 - 90.0) + (255 - 90.0) * (255 - 90.0)) / 2);
    CHECK(m3.local_contrast == doctest::Approx(closed).epsilon(1e-12));
    const BackgroundRegion reg = background_region(tb, {64, 64}, 1.5);
    const RingStats ref = ring_stats(alt, reg.outer, reg.inner);
    CHECK(m3.local_contrast == doctest::Approx(ref.m_lc).epsilon(1e-12));
    CHECK(m3.background_complexity == doctest::Approx(ref.m_bc).epsilon(1e-12));
}

TEST_CASE("compute_metrics agrees with per-pixel statistics on random images") {
    std::mt19937_64 gen(7);
    std::uniform_int_distribution<int> px(0, 255);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const DifficultyThresholds th;
    for (int i = 0; i < 100; ++i) {
        const RasterImage g = gray_image(48, 40, [&](int, int) { return px(gen); });
        const BBox b{u(gen), u(gen), 0.05 + 0.4 * u(gen), 0.05 + 0.4 * u(gen)};
        const DifficultyMetrics m = compute_metrics(g, b, th);
        const BackgroundRegion reg = background_region(b, g.size(), th.background_factor);
        const RingStats ref = ring_stats(g, reg.outer, reg.inner);
        CHECK(m.target_size == static_cast<double>(reg.inner.area()));
        CHECK(m.local_contrast == doctest::Approx(ref.m_lc).epsilon(1e-9));
        CHECK(m.background_complexity == doctest::Approx(ref.m_bc).epsilon(1e-9));
        CHECK(m.local_contrast >= 0);
        CHECK(m.background_complexity >= 0);
    }
}

TEST_CASE("compute_metrics is translation invariant for interior boxes") {
    std::mt19937_64 gen(70);
    std::uniform_int_distribution<int> px(0, 255);
    const RasterImage base = gray_image(80, 80, [&](int, int) { return px(gen); });
    const PixelRect t{30, 28, 44, 50};
    const DifficultyThresholds th;
    const DifficultyMetrics m = compute_metrics(base, BBox::from_pixels(t, {80, 80}), th);
    for (int s : {1, 5, 9}) {
        const RasterImage shifted =
            gray_image(80, 80, [&](int x, int y) { return base.at((x - s + 80) % 80, (y - s + 80) % 80); });
        const DifficultyMetrics ms =
            compute_metrics(shifted, BBox::from_pixels({t.x0 + s, t.y0 + s, t.x1 + s, t.y1 + s}, {80, 80}), th);
        CHECK(ms.target_size == m.target_size);
        CHECK(ms.local_contrast == doctest::Approx(m.local_contrast).epsilon(1e-12));
        CHECK(ms.background_complexity == doctest::Approx(m.background_complexity).epsilon(1e-12));
    }
}

TEST_CASE("a box covering the image has no background") {
    const RasterImage g = gray_image(16, 16, [](int x, int) { return x * 10; });
    const DifficultyMetrics m = compute_metrics(g, {0.5, 0.5, 1.0, 1.0}, {});
    CHECK(m.background_pixels == 0);
    CHECK(m.local_contrast == 0);
    CHECK(m.background_complexity == 0);
    CHECK(classify(m, {}) == DifficultyCategory::SmallTarget);
}

TEST_CASE("classify follows the cascade with inclusive boundaries") {
    const DifficultyThresholds t;
    auto cat = [&](double ts, double lc, double bc) {
        DifficultyMetrics m;
        m.target_size = ts;
        m.local_contrast = lc;
        m.background_complexity = bc;
        return classify(m, t);
    };
    CHECK(cat(200, 500, 500) == DifficultyCategory::SmallTarget);
    CHECK(cat(256, 500, 500) == DifficultyCategory::SmallTarget);
    CHECK(cat(400, 5, 500) == DifficultyCategory::LowContrast);
    CHECK(cat(400, 10, 500) == DifficultyCategory::LowContrast);
    CHECK(cat(400, 100, 0) == DifficultyCategory::SimpleExample);
    CHECK(cat(400, 100, 10) == DifficultyCategory::SimpleExample);
    CHECK(cat(400, 100, 127.5) == DifficultyCategory::ComplexBackground);
    CHECK(cat(257, 10.000001, 10.000001) == DifficultyCategory::ComplexBackground);

    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> u(0, 600);
    for (int i = 0; i < 2000; ++i) {
        const double ts = u(gen), lc = u(gen) / 20, bc = u(gen) / 20;
        const int fired = (ts <= 256) + (ts > 256 && lc <= 10) + (ts > 256 && lc > 10 && bc <= 10) +
                          (ts > 256 && lc > 10 && bc > 10);
        CHECK(fired == 1);
        const DifficultyCategory expect = ts <= 256 ? DifficultyCategory::SmallTarget
                                          : lc <= 10 ? DifficultyCategory::LowContrast
                                          : bc <= 10 ? DifficultyCategory::SimpleExample
                                                     : DifficultyCategory::ComplexBackground;
        CHECK(cat(ts, lc, bc) == expect);
    }
}

TEST_CASE("partition_dataset on the four-category fixture") {
    TempDir dir;
    const DatasetManifest m = load_manifest(nsn::testing::write_four_category_fixture(dir.path()));
    PartitionOptions opt;
    const PartitionReport r = partition_dataset(m, opt);
    CHECK(r.errors.empty());
    for (auto c : kAllCategories) CHECK(r.count(c) == 1);
    REQUIRE(r.images.size() == 4);
    CHECK(r.images[0].boxes.at(0).metrics.target_size == 256);
    CHECK(r.images[0].boxes.at(0).category == DifficultyCategory::SmallTarget);
    CHECK(r.images[1].boxes.at(0).metrics.local_contrast == 10.0);
    CHECK(r.images[1].boxes.at(0).category == DifficultyCategory::LowContrast);
    CHECK(r.images[2].boxes.at(0).metrics.background_complexity == 10.0);
    CHECK(r.images[2].boxes.at(0).category == DifficultyCategory::SimpleExample);
    CHECK(r.images[3].boxes.at(0).category == DifficultyCategory::ComplexBackground);

    opt.jobs = 4;
    CHECK(to_json(partition_dataset(m, opt)).dump() == to_json(r).dump());

    const PartitionReport empty = partition_dataset(DatasetManifest{}, opt);
    for (auto c : kAllCategories) CHECK(empty.count(c) == 0);
}

TEST_CASE("partition_dataset collects per-image errors") {
    TempDir dir;
    DatasetManifest m = load_manifest(nsn::testing::write_four_category_fixture(dir.path()));
    std::filesystem::remove(dir / "images/lowcon.png");
    const PartitionReport r = partition_dataset(m, PartitionOptions{});
    CHECK(r.errors.size() == 1);
    CHECK(r.count(DifficultyCategory::SmallTarget) == 1);
    CHECK(r.count(DifficultyCategory::LowContrast) == 0);
}

TEST_CASE("thresholds validation and category names") {
    DifficultyThresholds t;
    CHECK_NOTHROW(t.validate());
    t.background_factor = 1.0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    for (auto c : kAllCategories) CHECK(category_from_string(to_string(c)) == c);
}
