// Acceptance suite: one pass/fail line per criterion, exit status 0 only when all pass.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "nsn/curriculum.hpp"
#include "nsn/difficulty.hpp"
#include "nsn/evaluation.hpp"
#include "nsn/image_io.hpp"
#include "nsn/imaging.hpp"
#include "nsn/json_io.hpp"
#include "nsn/mca.hpp"
#include "nsn/orchestrator.hpp"
#include "nsn/poisson.hpp"
#include "nsn/synth.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace nsn;
using nsn::testing::capture;
using nsn::testing::TempDir;
using nsn::testing::tree;
using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

const std::string kNsn = NSN_CLI_PATH;

/// Collects failed expectations; the first few are shown.
struct Check {
    std::vector<std::string> failures;
    std::size_t total = 0;

    bool expect(bool ok, const std::string& what) {
        ++total;
        if (!ok) failures.push_back(what);
        return ok;
    }
};

struct Criterion {
    std::string id;
    std::string title;
    double budget_s;
    std::function<void(Check&)> run;
};

std::string num(double v) {
    std::ostringstream s;
    s.precision(12);
    s << v;
    return s.str();
}

// ---------------------------------------------------------------------------------------------
// 1. Adaptation gain rows of the three task tables.

void ac1(Check& ck) {
    struct Task {
        double source, oracle;
        std::vector<std::pair<double, double>> rows;  // (mAP, reference rho)
    };
    const std::vector<Task> tasks{
        {39.9, 89.5, {{24.6, -30.9}, {35.4, -9.1}, {21.9, -36.3}, {37.4, -5.0}, {41.1, 2.4}, {38.5, -2.8},
                      {41.2, 2.6}, {46.9, 14.1}, {39.9, 0.0}, {89.5, 100.0}}},
        {28.7, 89.5, {{34.4, 9.3}, {47.9, 31.6}, {30.4, 2.8}, {32.2, 5.8}, {46.8, 29.8}, {39.1, 17.1},
                      {43.1, 23.7}, {50.5, 35.9}, {28.7, 0.0}, {89.5, 100.0}}},
        {31.9, 89.1, {{33.9, 3.5}, {39.8, 13.8}, {35.7, 6.6}, {25.8, -10.7}, {50.2, 32.0}, {36.5, 8.0},
                      {42.6, 18.7}, {61.5, 51.8}, {31.9, 0.0}, {89.1, 100.0}}},
    };
    for (const auto& t : tasks)
        for (auto [map, expected] : t.rows) {
            const double rho = adaptation_gain({map, t.source, t.oracle});
            ck.expect(std::abs(rho - expected) <= 0.1 + 1e-9,
                      "rho(" + num(map) + ", " + num(t.source) + ", " + num(t.oracle) + ") = " + num(rho) +
                          ", expected " + num(expected));
        }
    // The cross-camera gain is 51.748..., shown as 51.7 with half-up rounding.
    ck.expect(round_display(adaptation_gain({61.5, 31.9, 89.1})) == 51.7, "round_display of the cross-camera gain");
    ck.expect(round_display(adaptation_gain({46.9, 39.9, 89.5})) == 14.1, "round_display of the sim-to-real gain");
}

// ---------------------------------------------------------------------------------------------
// 2. Four-category fixture and the cascade boundaries.

void ac2(Check& ck) {
    TempDir dir;
    const DatasetManifest m = load_manifest(nsn::testing::write_four_category_fixture(dir / "data"));
    PartitionOptions opts;
    opts.thresholds = {256, 10, 10, 1.5};
    const PartitionReport r = partition_dataset(m, opts);
    ck.expect(r.errors.empty(), "partition errors");
    const std::map<std::string, DifficultyCategory> expected{{"small", DifficultyCategory::SmallTarget},
                                                             {"lowcon", DifficultyCategory::LowContrast},
                                                             {"simple", DifficultyCategory::SimpleExample},
                                                             {"complex", DifficultyCategory::ComplexBackground}};
    ck.expect(r.images.size() == 4, "four images");
    for (const auto& img : r.images) {
        const std::string stem = fs::path(img.image).stem().string();
        if (!ck.expect(img.boxes.size() == 1, stem + ": one box")) continue;
        const BoxDifficulty& b = img.boxes[0];
        ck.expect(b.category == expected.at(stem),
                  stem + ": got " + std::string(to_string(b.category)) + ", want " +
                      std::string(to_string(expected.at(stem))));
        if (stem == "small") ck.expect(b.metrics.target_size == 256, "small: m_ts = 256");
        if (stem == "lowcon") ck.expect(b.metrics.local_contrast == 10, "lowcon: m_lc = 10");
        if (stem == "simple") ck.expect(b.metrics.background_complexity == 10, "simple: m_bc = 10");
    }
    for (auto c : kAllCategories) ck.expect(r.count(c) == 1, std::string(to_string(c)) + ": count 1");

    const DifficultyThresholds t{256, 10, 10, 1.5};
    auto cat = [&](double ts, double lc, double bc) {
        DifficultyMetrics d;
        d.target_size = ts;
        d.local_contrast = lc;
        d.background_complexity = bc;
        return classify(d, t);
    };
    ck.expect(cat(256, 50, 50) == DifficultyCategory::SmallTarget, "m_ts = 256 is small");
    ck.expect(cat(257, 10, 50) == DifficultyCategory::LowContrast, "m_lc = 10 is low contrast");
    ck.expect(cat(257, 11, 10) == DifficultyCategory::SimpleExample, "m_bc = 10 is simple");
    ck.expect(cat(257, 11, 10.001) == DifficultyCategory::ComplexBackground, "m_bc > 10 is complex");
}

// ---------------------------------------------------------------------------------------------
// 3. Curriculum thresholds against the direct definition.

void ac3(Check& ck) {
    std::mt19937_64 gen(31337);
    std::uniform_int_distribution<int> n(0, 60), cat(0, 3), grid(0, 20);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<ConfidenceRecord> records;
        std::vector<std::pair<int, double>> plain;
        const int count = n(gen);
        // Every tenth set stays below tau_max so the fallback branch is exercised.
        const double cap = trial % 10 == 0 ? 0.75 : 1.0;
        for (int i = 0; i < count; ++i) {
            const double p = u(gen) < 0.3 ? std::min(cap, grid(gen) / 20.0) : u(gen) * cap;
            const int c = cat(gen);
            records.push_back({"img" + std::to_string(i % 7), static_cast<std::size_t>(i),
                               static_cast<DifficultyCategory>(c), p});
            plain.emplace_back(c, p);
        }
        const auto ref = oracle::curriculum(plain, 4, 0.25, 0.75);
        const auto cand = candidate_filter(records, 0.25);
        const CategoryStats s = relative_difficulty(cand, 0.75);
        const AdaptiveThresholds t = adaptive_thresholds(s, 0.75, 0.25);
        const std::string at = "set " + std::to_string(trial);
        bool any_sigma = false;
        for (int c = 0; c < 4; ++c) {
            const auto dc = static_cast<DifficultyCategory>(c);
            any_sigma = any_sigma || s.relative_difficulty(dc) > 0;
            ck.expect(std::abs(s.relative_difficulty(dc) - ref.sigma.at(c)) <= 1e-12, at + ": sigma");
            ck.expect(std::abs(t[dc] - ref.tau.at(c)) <= 1e-12, at + ": tau");
            ck.expect(t[dc] >= 0.25 && t[dc] <= 0.75, at + ": tau in bounds");
            for (int d = 0; d < 4; ++d)
                if (s.sigma[c] >= s.sigma[d]) ck.expect(t.tau[c] >= t.tau[d], at + ": monotone in sigma");
        }
        ck.expect(t.fallback_triggered == !any_sigma, at + ": fallback flag");
        if (!any_sigma)
            for (auto c : kAllCategories) ck.expect(t[c] == 0.75, at + ": fallback gives tau_max");
        // Acceptance is monotone in confidence within a category.
        const auto accepted = apply_thresholds(cand, t).accepted;
        for (const auto& a : accepted)
            for (const auto& r : cand)
                if (r.category == a.category && r.confidence >= a.confidence) {
                    bool found = false;
                    for (const auto& b : accepted) found = found || b.box_index == r.box_index;
                    ck.expect(found, at + ": acceptance monotone in confidence");
                }
    }
}

// ---------------------------------------------------------------------------------------------
// 4. Poisson solver against the dense direct solve.

RasterImage random_image(std::mt19937_64& gen, int w, int h) {
    std::uniform_int_distribution<int> u(0, 255);
    RasterImage img(w, h, 3);
    for (auto& p : img.planes)
        for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = static_cast<std::uint8_t>(u(gen));
    return img;
}

void ac4(Check& ck) {
    std::mt19937_64 gen(4242);
    std::uniform_int_distribution<int> dim(3, 16), off(1, 5), level(0, 255);
    std::uniform_real_distribution<double> density(0.5, 1.0);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::string at = "system " + std::to_string(trial);
        const int w = dim(gen), h = dim(gen);
        const RasterImage target = random_image(gen, w + 6, h + 6);
        const RasterImage source = random_image(gen, w, h);
        BinaryMask mask = BinaryMask::Constant(h, w, false);
        std::bernoulli_distribution keep(density(gen));
        for (int y = 1; y < h - 1; ++y)
            for (int x = 1; x < w - 1; ++x) mask(y, x) = keep(gen);
        const Offset o{off(gen), off(gen)};
        // The default stopping rule bounds the residual relative to ||b||, which allows per-pixel
        // errors near 1e-2 on 0..255 data, so the per-pixel comparison runs at a tight tolerance.
        const PoissonSolveParams params{};
        const PoissonSolveParams tight{0, 1e-10};
        const auto sys = PoissonSystem<double>::build(mask);

        for (int c = 0; c < 3; ++c) {
            const Eigen::ArrayXXd dense = oracle::dense_poisson(target[c].cast<double>(), source[c].cast<double>(),
                                                                Eigen::Array<bool, -1, -1>(mask), o.x, o.y);
            const auto b = sys.rhs(target[c], source[c], o);
            const oracle::DenseSystem ds = oracle::dense_system(target[c].cast<double>(), source[c].cast<double>(),
                                                                Eigen::Array<bool, -1, -1>(mask), o.x, o.y);
            if (ds.b.norm() > 0) {
                const auto loose = conjugate_gradient(sys, b, params);
                const double res = (ds.b - ds.a * loose.x).norm() / ds.b.norm();
                ck.expect(res <= params.tolerance, at + ": default-tolerance residual " + num(res));
            }
            const auto cg = conjugate_gradient(sys, b, tight);
            for (Eigen::Index i = 0; i < sys.unknowns(); ++i) {
                const auto [x, y] = sys.coords()[static_cast<std::size_t>(i)];
                const double err = std::abs(cg.x(i) - dense(y + o.y, x + o.x));
                worst = std::max(worst, err);
                ck.expect(err <= 1e-4, at + ": |cg - dense| = " + num(err));
            }
        }

        // Everything but the unknowns keeps the target value bit for bit.
        const RasterImage out = poisson_blend(target, source, mask, o, params);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < target.height(); ++y)
                for (int x = 0; x < target.width(); ++x) {
                    const int sx = x - o.x, sy = y - o.y;
                    const bool unknown = sx >= 0 && sy >= 0 && sx < w && sy < h && sys.index()(sy, sx) >= 0;
                    if (!unknown) ck.expect(out.at(x, y, c) == target.at(x, y, c), at + ": exterior changed");
                }

        // Constant source inside a constant target reproduces the target within one level.
        const auto bg = static_cast<std::uint8_t>(level(gen)), fg = static_cast<std::uint8_t>(level(gen));
        const RasterImage flat = poisson_blend(RasterImage(w + 6, h + 6, 3, bg), RasterImage(w, h, 3, fg), mask, o,
                                               params);
        for (int c = 0; c < 3; ++c)
            ck.expect((flat[c].cast<int>() - int(bg)).abs().maxCoeff() <= 1, at + ": constant interior");
    }
    if (!ck.failures.empty()) ck.failures.push_back("worst per-pixel error " + num(worst));
}

// ---------------------------------------------------------------------------------------------
// Synthetic domains shared by 5, 7 and 8.

json spec_json(const std::string& background, int level, int amplitude, int size_min, int size_max, int lo, int hi,
               std::uint64_t seed, const std::string& domain, const std::string& split = "train") {
    return {{"background", background},
            {"background_level", level},
            {"background_amplitude", amplitude},
            {"targets_min", 1},
            {"targets_max", 3},
            {"shapes", {"disc", "rounded-rect", "cross"}},
            {"size_min", size_min},
            {"size_max", size_max},
            {"intensity_min", lo},
            {"intensity_max", hi},
            {"seed", seed},
            {"domain", domain},
            {"split", split}};
}

json source_spec() { return spec_json("checker", 150, 40, 10, 28, 20, 80, 1, "source"); }
json target_spec() { return spec_json("noise", 140, 60, 8, 24, 40, 110, 2, "target"); }
json val_spec() { return spec_json("noise", 140, 60, 8, 24, 40, 110, 3, "target", "val"); }
json crop_spec() {
    json j = spec_json("uniform", 190, 0, 20, 36, 20, 60, 4, "source");
    j["width"] = 48;
    j["height"] = 48;
    j["targets_max"] = 1;
    return j;
}

/// Crop images used whole, with their masks from saliency.
fs::path unlabelled_copy(const fs::path& manifest) {
    DatasetManifest m = load_manifest(manifest);
    for (auto& e : m.entries) e.label.reset();
    const fs::path out = manifest.parent_path() / "unlabelled.json";
    save_manifest(m, out);
    return out;
}

// ---------------------------------------------------------------------------------------------
// 5. Masked copy-paste contract on 50 synthetic images.

void ac5(Check& ck) {
    TempDir dir;
    synth::generate_domain(synth::scene_spec_from_json(target_spec()), 50, dir / "target");
    synth::generate_domain(synth::scene_spec_from_json(crop_spec()), 20, dir / "crops");
    const DatasetManifest truth = load_manifest(dir / "target/manifest.json");

    // Pseudo labels equal to the truth, confidence 1.
    synth::stub_detect(truth, synth::Corruption{}, 0, dir / "pseudo");
    DatasetManifest pseudo = truth;
    for (std::size_t i = 0; i < pseudo.size(); ++i)
        pseudo.entries[i] = {pseudo.image_path(i),
                             dir / "pseudo" / pseudo.image_path(i).filename().replace_extension(".txt")};
    pseudo.root = ".";
    save_manifest(pseudo, dir / "pseudo.json");
    pseudo = load_manifest(dir / "pseudo.json");

    const CropLibrary lib = build_crop_library(load_manifest(unlabelled_copy(dir / "crops/manifest.json")), {});
    AugmentConfig cfg;
    cfg.pastes = 3;
    cfg.seed = 99;
    const AugmentDatasetResult r = augment_dataset(pseudo, lib.assets, cfg, dir / "a");
    ck.expect(r.augmented == 50, "augmented " + std::to_string(r.augmented) + " of 50");
    ck.expect(r.failed == 0, "no failures");
    const DatasetManifest augmented = load_manifest(dir / "a/manifest.json");
    if (!ck.expect(augmented.size() == pseudo.size(), "augmented manifest lists every image")) return;

    for (std::size_t i = 0; i < r.records.size(); ++i) {
        const AugmentationRecord& rec = r.records[i];
        const std::string at = rec.source_image;
        ck.expect(rec.placed.size() == 3, at + ": placed " + std::to_string(rec.placed.size()) + ", skipped " +
                                              std::to_string(rec.skipped));
        if (!rec.reference_box) continue;
        const RasterImage in = read_image(pseudo.image_path(i));
        const RasterImage out = read_image(augmented.image_path(i));
        const auto labels = load_labels(*augmented.label_path(i), in.size());
        std::vector<PixelRect> pasted, all;
        for (const auto& b : labels) {
            all.push_back(b.bbox.to_pixels(in.size()));
            if (b.kind == LabelKind::PastedTrue) pasted.push_back(all.back());
        }
        ck.expect(pasted.size() == rec.placed.size(), at + ": PastedTrue lines match the record");
        for (std::size_t k = 0; k < pasted.size(); ++k) {
            const PixelRect& p = pasted[k];
            ck.expect(std::abs(p.width() - rec.reference_box->width()) <= 1 &&
                          std::abs(p.height() - rec.reference_box->height()) <= 1,
                      at + ": pasted dims within 1 px of the reference");
            ck.expect(p.x0 >= 0 && p.y0 >= 0 && p.x1 <= in.width() && p.y1 <= in.height(), at + ": pasted in image");
            for (const auto& q : all)
                if (!(q == p)) ck.expect(iou(p, q) <= 0.3 + 1e-12, at + ": pasted IoU <= 0.3");
        }
        // Pixels away from the pasted boxes are untouched.
        bool untouched = true;
        for (int y = 0; y < in.height(); ++y)
            for (int x = 0; x < in.width(); ++x) {
                bool near = false;
                for (const auto& p : pasted) near = near || (x >= p.x0 - 2 && x < p.x1 + 2 && y >= p.y0 - 2 && y < p.y1 + 2);
                if (!near)
                    for (int c = 0; c < 3; ++c) untouched = untouched && out.at(x, y, c) == in.at(x, y, c);
            }
        ck.expect(untouched, at + ": pixels outside the pasted boxes unchanged");
    }

    augment_dataset(pseudo, lib.assets, cfg, dir / "b");
    ck.expect(tree(dir / "a") == tree(dir / "b"), "same-seed rerun is byte-identical");
    cfg.jobs = 8;
    augment_dataset(pseudo, lib.assets, cfg, dir / "c");
    ck.expect(tree(dir / "a") == tree(dir / "c"), "8 workers give the same bytes");
}

// ---------------------------------------------------------------------------------------------
// 6. AP against brute-force threshold enumeration.

BBox grid_box(std::mt19937_64& gen) {
    std::uniform_int_distribution<int> pos(1, 8), ext(1, 3);
    return {pos(gen) / 10.0, pos(gen) / 10.0, ext(gen) / 10.0, ext(gen) / 10.0};
}

void ac6(Check& ck) {
    std::mt19937_64 gen(2718);
    std::uniform_int_distribution<int> images(1, 8), boxes(0, 5), conf(1, 10), coin(0, 2);
    for (int trial = 0; trial < 200; ++trial) {
        EvaluationSet set;
        std::vector<oracle::Det> dets;
        const int n = images(gen);
        for (int i = 0; i < n; ++i) {
            set.image_keys.push_back("img" + std::to_string((i * 5) % n));
            std::vector<BBox> gt;
            for (int k = boxes(gen); k > 0; --k) gt.push_back(grid_box(gen));
            std::vector<LabeledBox> det;
            const int d = boxes(gen);
            for (int k = 0; k < d; ++k) {
                BBox b = (!gt.empty() && coin(gen)) ? gt[static_cast<std::size_t>(k) % gt.size()] : grid_box(gen);
                if (coin(gen) == 0) b.cx = std::min(0.95, b.cx + 0.03);
                const double p = conf(gen) / 10.0;
                det.push_back(LabeledBox::pseudo(b, p));
                dets.push_back({i, k, p, b});
            }
            set.ground_truth.push_back(std::move(gt));
            set.detections.push_back(std::move(det));
        }
        const double ref = oracle::brute_force_ap(set.ground_truth, dets, set.image_keys);
        const double ap = average_precision(set).ap;
        ck.expect(std::abs(ap - ref) <= 1e-9,
                  "instance " + std::to_string(trial) + ": ap " + num(ap) + " vs oracle " + num(ref));
    }

    TempDir dir;
    synth::generate_domain(synth::scene_spec_from_json(val_spec()), 30, dir / "val");
    const DatasetManifest gt = load_manifest(dir / "val/manifest.json");
    synth::stub_detect(gt, synth::Corruption{}, 0, dir / "pred");
    const double map = map50(gt, dir / "pred").map;
    ck.expect(map == 100.0, "predictions = ground truth gives mAP " + num(map));
}

// ---------------------------------------------------------------------------------------------
// 7 and 8. Desk-scale pipeline through the CLI with the stub adapters.

struct PipelineFixture {
    TempDir dir{"nsn-accept"};
    fs::path config;
    bool ready = false;
};

PipelineFixture& pipeline_fixture() {
    static PipelineFixture f;
    return f;
}

std::string run_cli(Check& ck, const std::vector<std::string>& args, json* out = nullptr) {
    std::vector<std::string> argv{kNsn};
    argv.insert(argv.end(), args.begin(), args.end());
    const auto r = capture(argv);
    std::string line;
    for (const auto& a : args) line += " " + a;
    ck.expect(r.status == 0, "nsn" + line + " exited " + std::to_string(r.status));
    if (out) {
        if (ck.expect(json::accept(r.out), "nsn" + line + " printed one JSON document")) *out = json::parse(r.out);
    }
    return r.out;
}

void prepare_domains(Check& ck) {
    PipelineFixture& f = pipeline_fixture();
    const fs::path& d = f.dir.path();
    const std::vector<std::tuple<std::string, json, int>> domains{{"source", source_spec(), 200},
                                                                 {"target", target_spec(), 100},
                                                                 {"val", val_spec(), 50},
                                                                 {"crops", crop_spec(), 20}};
    for (const auto& [name, spec, count] : domains) {
        write_json(spec, d / (name + ".json"));
        run_cli(ck, {"synth", "--spec", (d / (name + ".json")).string(), "--count", std::to_string(count), "--out",
                     (d / name).string(), "--json"});
    }
    const fs::path crops = unlabelled_copy(d / "crops/manifest.json");
    json cfg = {{"workdir", "work"},
                {"seed", 7},
                {"source_manifest", "source/manifest.json"},
                {"target_manifest", "target/manifest.json"},
                {"val_manifest", "val/manifest.json"},
                {"crop_manifest", fs::relative(crops, d).string()},
                {"detector", {kNsn, "stub-detect"}},
                {"trainer",
                 {kNsn, "stub-train", "--truth", (d / "target/manifest.json").string(), "--truth",
                  (d / "val/manifest.json").string()}},
                {"alpha", 1.0},
                {"beta", 1.0},
                {"jobs", 1}};
    f.config = d / "pipeline.json";
    write_json(cfg, f.config);
    f.ready = ck.failures.empty();
}

void ac7(Check& ck) {
    prepare_domains(ck);
    PipelineFixture& f = pipeline_fixture();
    if (!f.ready) return;
    const fs::path& d = f.dir.path();
    const std::string cfg = f.config.string();

    // Uninterrupted run.
    json full;
    run_cli(ck, {"--config", cfg, "--workdir", (d / "work_a").string(), "--json", "run"}, &full);
    ck.expect(full.value("finished", false), "uninterrupted run finished");
    ck.expect(full["completed"] == json({"S1-large", "S2.1", "S2.2", "S3"}), "stages S1 -> S3 completed");
    ck.expect(full["trainer_calls"] == 4, "four trainer calls");
    const PipelineState state = load_state(d / "work_a/state.json");
    ck.expect(state.snapshots.size() == 3, "three pseudo-label snapshots");
    for (const auto& [name, snap] : state.snapshots) {
        ck.expect(fs::exists(d / "work_a" / snap.bundle), name + ": bundle written");
        std::size_t files = 0;
        if (fs::is_directory(d / "work_a" / snap.pseudo_dir))
            for (const auto& e : fs::directory_iterator(d / "work_a" / snap.pseudo_dir)) files += e.is_regular_file();
        ck.expect(files == 100, name + ": one prediction file per target image");
    }
    for (const char* s : {"S1-large", "S2.1", "S2.2", "S3"})
        ck.expect(fs::exists(d / "work_a/stages" / s / "report.json"), std::string(s) + ": report written");
    if (state.snapshots.size() == 3) {
        ck.expect(state.snapshots.at("S2.1").generated_by == "stages/S1-large/model.json", "S2.1 labels from S1");
        ck.expect(state.snapshots.at("S2.2").generated_by == "stages/S2.1/model.json", "S2.2 labels from S2.1");
        ck.expect(state.snapshots.at("S3").generated_by == "stages/S2.2/model.json", "S3 labels from S2.2");
    }
    const std::vector<std::pair<std::string, std::string>> freeze{
        {"S2.1", "except-norm"}, {"S2.2", "none"}, {"S3", "except-norm"}};
    std::vector<std::size_t> accepted;
    for (const auto& [s, directive] : freeze) {
        if (!fs::exists(d / "work_a/stages" / s / "bundle.json")) continue;
        const json b = read_json(d / "work_a/stages" / s / "bundle.json");
        ck.expect(b["freeze"] == directive, s + ": freeze " + directive);
        accepted.push_back(b["counts"]["accepted"].get<std::size_t>());
    }
    std::string counts;
    for (auto a : accepted) counts += " " + std::to_string(a);
    ck.expect(accepted.size() == 3 && std::is_sorted(accepted.begin(), accepted.end()),
              "accepted pseudo labels non-decreasing across periods:" + counts);

    // Stop after S2.1, leave a half-written S2.2 behind, then resume.
    json first, second;
    const std::string work_b = (d / "work_b").string();
    run_cli(ck, {"--config", cfg, "--workdir", work_b, "--json", "run", "--stop-after", "S2.1"}, &first);
    ck.expect(!first.value("finished", true), "stopped run is not finished");
    ck.expect(first["completed"] == json({"S1-large", "S2.1"}), "stopped after S2.1");
    json st = read_json(d / "work_b/state.json");
    st["current"] = "S2.2";
    write_json(st, d / "work_b/state.json");
    nsn::testing::spit(d / "work_b/stages/S2.2/pseudo.partial/0000.txt", "0 0.5 0.5 0.1");
    run_cli(ck, {"--config", cfg, "--workdir", work_b, "--json", "run"}, &second);
    ck.expect(second.value("finished", false), "resumed run finished");
    ck.expect(first["trainer_calls"].get<int>() + second["trainer_calls"].get<int>() == 4,
              "no stage trained twice across the resume");
    ck.expect(tree(d / "work_a") == tree(d / "work_b"), "resumed workdir byte-identical to the uninterrupted one");
}

void ac8(Check& ck) {
    PipelineFixture& f = pipeline_fixture();
    if (!ck.expect(f.ready, "pipeline fixture available")) return;
    const fs::path& d = f.dir.path();
    const std::string target = (d / "target/manifest.json").string();

    // Domain rendering: rerun and 8 workers.
    for (const auto& [name, jobs] : std::vector<std::pair<std::string, std::string>>{{"t1", "1"}, {"t8", "8"}})
        run_cli(ck, {"--jobs", jobs, "synth", "--spec", (d / "target.json").string(), "--count", "100", "--out",
                     (d / "det" / name).string()});
    ck.expect(tree(d / "target") == tree(d / "det/t1"), "synth rerun identical");
    ck.expect(tree(d / "det/t1") == tree(d / "det/t8"), "synth 1 vs 8 workers identical");

    // Stub detector.
    for (const char* jobs : {"1", "8"})
        run_cli(ck, {"--jobs", jobs, "--seed", "3", "stub-detect", "--manifest", target, "--out",
                     (d / "det/pred" / jobs).string(), "--conf-lo", "0.2", "--conf-hi", "0.9", "--drop", "0.2",
                     "--jitter", "2", "--fp-rate", "0.3"});
    run_cli(ck, {"--jobs", "1", "--seed", "3", "stub-detect", "--manifest", target, "--out",
                 (d / "det/pred/again").string(), "--conf-lo", "0.2", "--conf-hi", "0.9", "--drop", "0.2", "--jitter",
                 "2", "--fp-rate", "0.3"});
    ck.expect(tree(d / "det/pred/1") == tree(d / "det/pred/8"), "stub-detect 1 vs 8 workers identical");
    ck.expect(tree(d / "det/pred/1") == tree(d / "det/pred/again"), "stub-detect rerun identical");
    const std::string pred = (d / "det/pred/1").string();

    // Reports on stdout.
    for (const auto& args : std::vector<std::vector<std::string>>{
             {"difficulty", "--manifest", target, "--json"},
             {"difficulty", "--manifest", target, "--pred-dir", pred, "--json"},
             {"thresholds", "--manifest", target, "--pred-dir", pred, "--json"},
             {"eval", "--manifest", target, "--pred-dir", pred, "--json"}}) {
        std::vector<std::string> one{"--jobs", "1"}, eight{"--jobs", "8"};
        one.insert(one.end(), args.begin(), args.end());
        eight.insert(eight.end(), args.begin(), args.end());
        const std::string a = run_cli(ck, one), b = run_cli(ck, eight), c = run_cli(ck, one);
        ck.expect(a == b && a == c, args[0] + ": identical across runs and worker counts");
    }

    // Filter, crop library and augmentation outputs. Augmentation reads the predictions as labels.
    const std::string crops = (d / "crops/unlabelled.json").string();
    DatasetManifest predicted = load_manifest(target);
    for (std::size_t i = 0; i < predicted.size(); ++i)
        predicted.entries[i] = {predicted.image_path(i),
                                fs::path(pred) / predicted.image_path(i).filename().replace_extension(".txt")};
    predicted.root = ".";
    save_manifest(predicted, d / "det/predicted.json");
    const std::string predicted_manifest = (d / "det/predicted.json").string();
    for (const char* jobs : {"1", "8"}) {
        const std::string tag = jobs;
        run_cli(ck, {"--jobs", jobs, "filter", "--manifest", target, "--pred-dir", pred, "--out",
                     (d / "det/filter" / tag).string()});
        run_cli(ck, {"--jobs", jobs, "crops", "--manifest", crops, "--out", (d / "det/crops" / tag).string()});
        run_cli(ck, {"--jobs", jobs, "--seed", "11", "augment", "--manifest", predicted_manifest, "--crops", crops, "--out",
                     (d / "det/aug" / tag).string()});
    }
    run_cli(ck, {"--jobs", "1", "--seed", "11", "augment", "--manifest", predicted_manifest, "--crops", crops, "--out",
                 (d / "det/aug/again").string()});
    ck.expect(tree(d / "det/filter/1") == tree(d / "det/filter/8"), "filter 1 vs 8 workers identical");
    ck.expect(tree(d / "det/crops/1") == tree(d / "det/crops/8"), "crops 1 vs 8 workers identical");
    ck.expect(tree(d / "det/aug/1") == tree(d / "det/aug/8"), "augment 1 vs 8 workers identical");
    ck.expect(tree(d / "det/aug/1") == tree(d / "det/aug/again"), "augment rerun identical");

    // Whole pipeline with 8 workers, compared with the single-worker run of criterion 7.
    json r;
    run_cli(ck, {"--config", f.config.string(), "--workdir", (d / "work_c").string(), "--jobs", "8", "--json", "run"},
            &r);
    ck.expect(tree(d / "work_a") == tree(d / "work_c"), "pipeline 1 vs 8 workers identical");
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {"AC1", "adaptation gain reproduces the reference gain tables", 1, ac1},
        {"AC2", "difficulty categories on the four-category fixture", 1, ac2},
        {"AC3", "curriculum thresholds match the direct definition on 1000 sets", 5, ac3},
        {"AC4", "Poisson CG matches the dense solve on 100 systems", 30, ac4},
        {"AC5", "masked copy-paste contract on 50 images, J = 3", 60, ac5},
        {"AC6", "all-point AP matches brute force on 200 instances", 30, ac6},
        {"AC7", "staged pipeline S1 -> S3 with kill-and-resume", 600, ac7},
        {"AC8", "determinism across reruns and 1 vs 8 workers", 600, ac8},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        Check ck;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            c.run(ck);
        } catch (const std::exception& e) {
            ck.failures.push_back(std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (secs > c.budget_s) ck.failures.push_back("runtime " + num(secs) + " s over budget " + num(c.budget_s) + " s");
        const bool pass = ck.failures.empty();
        failed += !pass;
        std::printf("[%s] %s %s (%zu checks, %.2f s)\n", pass ? "PASS" : "FAIL", c.id.c_str(), c.title.c_str(),
                    ck.total, secs);
        for (std::size_t i = 0; i < ck.failures.size() && i < 5; ++i) std::printf("       %s\n", ck.failures[i].c_str());
        if (ck.failures.size() > 5) std::printf("       ... %zu more\n", ck.failures.size() - 5);
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed ? 1 : 0;
}
