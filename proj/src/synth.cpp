#include "nsn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "nsn/annotations.hpp"
#include "nsn/error.hpp"
#include "nsn/image_io.hpp"
#include "nsn/imaging.hpp"
#include "nsn/json_io.hpp"
#include "nsn/parallel.hpp"
#include "nsn/random.hpp"

namespace nsn::synth {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

const char* background_name(Background b) {
    switch (b) {
        case Background::Uniform: return "uniform";
        case Background::Gradient: return "gradient";
        case Background::Checker: return "checker";
        case Background::NoiseTexture: return "noise";
    }
    return "uniform";
}

Background background_from(const std::string& s) {
    for (auto b : {Background::Uniform, Background::Gradient, Background::Checker, Background::NoiseTexture})
        if (s == background_name(b)) return b;
    throw InputError("unknown background style '" + s + "'");
}

const char* shape_name(Shape s) {
    switch (s) {
        case Shape::Disc: return "disc";
        case Shape::RoundedRect: return "rounded-rect";
        case Shape::Cross: return "cross";
    }
    return "disc";
}

Shape shape_from(const std::string& s) {
    for (auto sh : {Shape::Disc, Shape::RoundedRect, Shape::Cross})
        if (s == shape_name(sh)) return sh;
    throw InputError("unknown shape '" + s + "'");
}

Plane<double> render_background(const SceneSpec& spec, Rng& rng) {
    const int w = spec.size.width, h = spec.size.height;
    const double level = spec.background_level, amp = spec.background_amplitude;
    Plane<double> bg(h, w);
    switch (spec.background) {
        case Background::Uniform:
            bg.setConstant(level);
            break;
        case Background::Gradient: {
            const double angle = rng.uniform(0, 2 * M_PI);
            const double ca = std::cos(angle), sa = std::sin(angle);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    bg(y, x) = level + amp * 0.5 * (ca * (2.0 * x / std::max(1, w - 1) - 1) +
                                                    sa * (2.0 * y / std::max(1, h - 1) - 1)) / std::sqrt(2.0);
            break;
        }
        case Background::Checker: {
            const int cell = std::max(1, spec.checker_cell);
            const int phase_x = static_cast<int>(rng.uniform_int(0, cell - 1));
            const int phase_y = static_cast<int>(rng.uniform_int(0, cell - 1));
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    bg(y, x) = level + ((((x + phase_x) / cell + (y + phase_y) / cell) % 2) ? amp : -amp) / 2;
            break;
        }
        case Background::NoiseTexture: {
            const int gw = std::max(2, w / 8 + 1), gh = std::max(2, h / 8 + 1);
            Plane<double> grid(gh, gw);
            for (Eigen::Index i = 0; i < grid.size(); ++i) grid(i) = rng.uniform(-0.5, 0.5) * amp;
            bg = resize_plane(grid, {w, h}) + level;
            for (Eigen::Index i = 0; i < bg.size(); ++i) bg(i) += rng.uniform(-0.5, 0.5) * amp * 0.3;
            break;
        }
    }
    return bg;
}

}  // namespace

void SceneSpec::validate() const {
    if (size.width < 8 || size.height < 8) throw ConfigError("scene size must be at least 8x8");
    if (targets_min < 0 || targets_max < targets_min) throw ConfigError("invalid target count range");
    if (size_min < 2 || size_max < size_min) throw ConfigError("invalid target size range");
    if (size_max + 4 > std::min(size.width, size.height)) throw ConfigError("targets do not fit the scene");
    if (shapes.empty()) throw ConfigError("scene needs at least one shape");
    if (checker_cell < 1) throw ConfigError("checker cell must be positive");
}

json to_json(const SceneSpec& s) {
    json shapes = json::array();
    for (auto sh : s.shapes) shapes.push_back(shape_name(sh));
    return {{"width", s.size.width},
            {"height", s.size.height},
            {"background", background_name(s.background)},
            {"background_level", s.background_level},
            {"background_amplitude", s.background_amplitude},
            {"checker_cell", s.checker_cell},
            {"targets_min", s.targets_min},
            {"targets_max", s.targets_max},
            {"shapes", shapes},
            {"size_min", s.size_min},
            {"size_max", s.size_max},
            {"intensity_min", s.intensity_min},
            {"intensity_max", s.intensity_max},
            {"seed", s.seed},
            {"domain", to_string(s.domain)},
            {"split", to_string(s.split)}};
}

SceneSpec scene_spec_from_json(const json& j) {
    SceneSpec s;
    try {
        s.size.width = j.value("width", s.size.width);
        s.size.height = j.value("height", s.size.height);
        if (j.contains("background")) s.background = background_from(j["background"].get<std::string>());
        s.background_level = j.value("background_level", s.background_level);
        s.background_amplitude = j.value("background_amplitude", s.background_amplitude);
        s.checker_cell = j.value("checker_cell", s.checker_cell);
        s.targets_min = j.value("targets_min", s.targets_min);
        s.targets_max = j.value("targets_max", s.targets_max);
        if (j.contains("shapes")) {
            s.shapes.clear();
            for (const auto& v : j["shapes"]) s.shapes.push_back(shape_from(v.get<std::string>()));
        }
        s.size_min = j.value("size_min", s.size_min);
        s.size_max = j.value("size_max", s.size_max);
        s.intensity_min = j.value("intensity_min", s.intensity_min);
        s.intensity_max = j.value("intensity_max", s.intensity_max);
        s.seed = j.value("seed", s.seed);
        const std::string domain = j.value("domain", std::string("source"));
        s.domain = domain == "target" ? Domain::Target : Domain::Source;
        const std::string split = j.value("split", std::string("train"));
        s.split = split == "val" ? Split::Val : split == "test" ? Split::Test : Split::Train;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed scene spec: ") + e.what());
    }
    s.validate();
    return s;
}

void draw_shape(BinaryMask& canvas, Shape shape, int x, int y, int extent) {
    const double e = extent;
    auto set = [&](int px, int py) {
        if (px >= 0 && py >= 0 && px < canvas.cols() && py < canvas.rows()) canvas(py, px) = true;
    };
    for (int dy = 0; dy < extent; ++dy)
        for (int dx = 0; dx < extent; ++dx) {
            // Pixel centres relative to the shape centre.
            const double u = dx + 0.5 - e / 2, v = dy + 0.5 - e / 2;
            bool in = false;
            switch (shape) {
                case Shape::Disc:
                    in = u * u + v * v <= (e / 2) * (e / 2);
                    break;
                case Shape::RoundedRect: {
                    const double hw = e / 2, hh = e * 0.35, r = e / 5;
                    const double qx = std::max(std::abs(u) - (hw - r), 0.0);
                    const double qy = std::max(std::abs(v) - (hh - r), 0.0);
                    in = std::abs(u) <= hw && std::abs(v) <= hh && qx * qx + qy * qy <= r * r;
                    break;
                }
                case Shape::Cross: {
                    const double arm = e / 6;
                    in = std::abs(u) <= arm || std::abs(v) <= arm;
                    break;
                }
            }
            if (in) set(x + dx, y + dy);
        }
}

RenderedScene render_scene(const SceneSpec& spec, std::size_t index) {
    Rng rng(derive_seed(spec.seed, "scene:" + std::to_string(index)));
    Plane<double> gray = render_background(spec, rng);
    const int w = spec.size.width, h = spec.size.height;

    RenderedScene scene;
    scene.targets = BinaryMask::Constant(h, w, false);
    const int count = static_cast<int>(rng.uniform_int(spec.targets_min, spec.targets_max));
    for (int t = 0; t < count; ++t) {
        const Shape shape = spec.shapes[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(spec.shapes.size()) - 1))];
        const int extent = static_cast<int>(rng.uniform_int(spec.size_min, spec.size_max));
        const double level = rng.uniform(spec.intensity_min, spec.intensity_max);
        // Targets keep a 2 px margin from the border and from each other, so each box is exact.
        for (int attempt = 0; attempt < 50; ++attempt) {
            const int x = static_cast<int>(rng.uniform_int(2, w - extent - 2));
            const int y = static_cast<int>(rng.uniform_int(2, h - extent - 2));
            BinaryMask shape_mask = BinaryMask::Constant(h, w, false);
            draw_shape(shape_mask, shape, x, y, extent);
            const PixelRect box = tight_box(shape_mask);
            const PixelRect grown{box.x0 - 2, box.y0 - 2, box.x1 + 2, box.y1 + 2};
            const bool clear = std::none_of(scene.boxes.begin(), scene.boxes.end(),
                                            [&](const PixelRect& b) { return !intersect(b, grown).empty(); });
            if (!clear || box.empty()) continue;
            gray = shape_mask.select(level, gray);
            scene.targets = scene.targets || shape_mask;
            scene.boxes.push_back(box);
            break;
        }
    }
    const Plane<std::uint8_t> q = quantize(gray);
    scene.image.planes = {q, q, q};
    return scene;
}

DatasetManifest generate_domain(const SceneSpec& spec, std::size_t count, const fs::path& out, unsigned jobs) {
    spec.validate();
    std::error_code ec;
    fs::create_directories(out / "images", ec);
    fs::create_directories(out / "labels", ec);
    if (!fs::is_directory(out / "labels")) throw IoError("cannot create " + out.string());

    DatasetManifest m;
    m.root = ".";
    m.split = spec.split;
    m.domain = spec.domain;
    m.entries.resize(count);
    parallel_for(count, jobs, [&](std::size_t i) {
        char name[32];
        std::snprintf(name, sizeof name, "%04zu", i);
        const RenderedScene scene = render_scene(spec, i);
        const fs::path image = fs::path("images") / (std::string(name) + ".png");
        const fs::path label = fs::path("labels") / (std::string(name) + ".txt");
        write_png(scene.image, out / image);
        std::vector<LabeledBox> boxes;
        for (const auto& b : scene.boxes) boxes.push_back(LabeledBox::ground_truth(BBox::from_pixels(b, spec.size)));
        save_labels(boxes, out / label);
        m.entries[i] = {image, label};
    });
    save_manifest(m, out / "manifest.json");
    m.root = out;
    return m;
}

json to_json(const Corruption& c) {
    return {{"confidence", {c.confidence.lo, c.confidence.hi}},
            {"drop_rate", c.drop_rate},
            {"jitter_px", c.jitter_px},
            {"false_positive_rate", c.false_positive_rate},
            {"false_positive_confidence", {c.false_positive_confidence.lo, c.false_positive_confidence.hi}},
            {"small_target_penalty", c.small_target_penalty},
            {"small_target_area", c.small_target_area}};
}

Corruption corruption_from_json(const json& j) {
    Corruption c;
    try {
        if (j.contains("confidence")) c.confidence = {j["confidence"].at(0).get<double>(), j["confidence"].at(1).get<double>()};
        c.drop_rate = j.value("drop_rate", c.drop_rate);
        c.jitter_px = j.value("jitter_px", c.jitter_px);
        c.false_positive_rate = j.value("false_positive_rate", c.false_positive_rate);
        if (j.contains("false_positive_confidence"))
            c.false_positive_confidence = {j["false_positive_confidence"].at(0).get<double>(),
                                           j["false_positive_confidence"].at(1).get<double>()};
        c.small_target_penalty = j.value("small_target_penalty", c.small_target_penalty);
        c.small_target_area = j.value("small_target_area", c.small_target_area);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed corruption spec: ") + e.what());
    }
    if (c.drop_rate < 0 || c.drop_rate > 1 || c.jitter_px < 0 || c.false_positive_rate < 0 ||
        c.false_positive_rate > 4)
        throw ConfigError("corruption values out of range");
    return c;
}

namespace {

constexpr int kMaxFalsePositives = 4;

double clamp_unit(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

std::vector<LabeledBox> stub_predictions(const std::vector<LabeledBox>& truth, ImageSize size, const Corruption& c,
                                         std::uint64_t seed, const std::string& image_key) {
    std::vector<LabeledBox> out;
    for (std::size_t k = 0; k < truth.size(); ++k) {
        // Fixed draw order per box: drop, confidence, dx, dy.
        Rng rng(derive_seed(seed, image_key + "#" + std::to_string(k)));
        const double u_drop = rng.uniform(), u_conf = rng.uniform(), u_dx = rng.uniform(), u_dy = rng.uniform();
        if (u_drop < c.drop_rate) continue;
        PixelRect r = truth[k].bbox.to_pixels(size);
        const int dx = static_cast<int>(std::lround((2 * u_dx - 1) * c.jitter_px));
        const int dy = static_cast<int>(std::lround((2 * u_dy - 1) * c.jitter_px));
        const int w = r.width(), h = r.height();
        r.x0 = std::clamp(r.x0 + dx, 0, std::max(0, size.width - w));
        r.y0 = std::clamp(r.y0 + dy, 0, std::max(0, size.height - h));
        r.x1 = r.x0 + w;
        r.y1 = r.y0 + h;
        double p = c.confidence.lo + (c.confidence.hi - c.confidence.lo) * u_conf;
        if (static_cast<double>(w) * h <= c.small_target_area) p -= c.small_target_penalty;
        const BBox box = (dx == 0 && dy == 0) ? truth[k].bbox : BBox::from_pixels(r, size);
        out.push_back(LabeledBox::pseudo(box, clamp_unit(p)));
    }
    for (int m = 0; m < kMaxFalsePositives; ++m) {
        Rng rng(derive_seed(seed, image_key + "#fp" + std::to_string(m)));
        const double u_keep = rng.uniform(), u_conf = rng.uniform();
        const int extent = static_cast<int>(rng.uniform_int(8, 24));
        if (extent >= size.width || extent >= size.height) continue;
        const int x = static_cast<int>(rng.uniform_int(0, size.width - extent));
        const int y = static_cast<int>(rng.uniform_int(0, size.height - extent));
        if (u_keep >= c.false_positive_rate / kMaxFalsePositives) continue;
        const auto& law = c.false_positive_confidence;
        out.push_back(LabeledBox::pseudo(BBox::from_pixels({x, y, x + extent, y + extent}, size),
                                         clamp_unit(law.lo + (law.hi - law.lo) * u_conf)));
    }
    return out;
}

void stub_detect(const DatasetManifest& truth, const Corruption& c, std::uint64_t seed, const fs::path& out,
                 unsigned jobs) {
    std::error_code ec;
    fs::create_directories(out, ec);
    parallel_for(truth.size(), jobs, [&](std::size_t i) {
        const ImageSize size = read_image(truth.image_path(i)).size();
        std::vector<LabeledBox> gt;
        if (const auto label = truth.label_path(i)) gt = load_labels(*label);
        const std::string key = truth.entries[i].image.generic_string();
        save_labels(stub_predictions(gt, size, c, seed, key),
                    out / truth.entries[i].image.filename().replace_extension(".txt"));
    });
}

Corruption StubModel::corruption() const {
    // Every knob improves monotonically with quality; small targets lag behind the rest.
    const double q = clamp_unit(quality);
    Corruption c;
    c.confidence = {0.45 + 0.5 * q, 0.75 + 0.25 * q};
    c.drop_rate = 0.7 * (1 - q);
    c.jitter_px = static_cast<int>(std::lround(3 * (1 - q)));
    c.false_positive_rate = 0.6 * (1 - q);
    c.false_positive_confidence = {0.26, 0.5};
    c.small_target_penalty = 0.3 * (1 - q);
    return c;
}

json to_json(const StubModel& m) {
    return {{"role", m.role}, {"quality", m.quality}, {"seed", m.seed}, {"generation", m.generation}, {"truth", m.truth}};
}

StubModel stub_model_from_json(const json& j) {
    StubModel m;
    try {
        m.role = j.value("role", m.role);
        m.quality = j.value("quality", m.quality);
        m.seed = j.value("seed", m.seed);
        m.generation = j.value("generation", m.generation);
        if (j.contains("truth")) m.truth = j["truth"].get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed stub model: ") + e.what());
    }
    return m;
}

namespace {

/// Normalized absolute image path -> label path, over every truth manifest.
std::map<std::string, fs::path> truth_index(const std::vector<std::string>& manifests) {
    std::map<std::string, fs::path> index;
    for (const auto& file : manifests) {
        const DatasetManifest m = load_manifest(file);
        for (std::size_t i = 0; i < m.size(); ++i)
            if (const auto label = m.label_path(i))
                index[fs::weakly_canonical(m.image_path(i)).generic_string()] = *label;
    }
    return index;
}

/// Manifest-relative image path -> label path for one truth manifest.
std::map<std::string, fs::path> relative_index(const std::string& manifest) {
    std::map<std::string, fs::path> index;
    const DatasetManifest m = load_manifest(manifest);
    for (std::size_t i = 0; i < m.size(); ++i)
        if (const auto label = m.label_path(i)) index[m.entries[i].image.lexically_normal().generic_string()] = *label;
    return index;
}

/// Finds the truth label of an image whose path ends with a truth-relative path (augmented
/// copies mirror the target tree).
std::optional<fs::path> find_by_suffix(const std::map<std::string, fs::path>& index, const fs::path& image) {
    std::vector<std::string> parts;
    for (const auto& part : image.lexically_normal()) parts.push_back(part.generic_string());
    std::string key;
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
        key = key.empty() ? *it : *it + "/" + key;
        if (auto hit = index.find(key); hit != index.end()) return hit->second;
    }
    return std::nullopt;
}

}  // namespace

void stub_infer(const fs::path& request, unsigned jobs) {
    const json req = read_json(request);
    StubModel model;
    std::vector<std::string> images;
    fs::path out_dir;
    try {
        model = stub_model_from_json(read_json(req.at("model").get<std::string>()));
        images = req.at("images").get<std::vector<std::string>>();
        out_dir = req.at("output_dir").get<std::string>();
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed infer request: ") + e.what());
    }
    const auto index = truth_index(model.truth);
    const Corruption c = model.corruption();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    parallel_for(images.size(), jobs, [&](std::size_t i) {
        const fs::path image = images[i];
        const ImageSize size = read_image(image).size();
        std::vector<LabeledBox> gt;
        if (auto it = index.find(fs::weakly_canonical(image).generic_string()); it != index.end())
            gt = load_labels(it->second);
        // Keyed by file name so predictions do not depend on where the workdir lives.
        save_labels(stub_predictions(gt, size, c, model.seed, image.filename().generic_string()),
                    out_dir / image.filename().replace_extension(".txt"));
    });
}

void stub_train(const fs::path& request, const std::vector<std::string>& truth) {
    const json req = read_json(request);
    std::string output;
    StubModel model;
    try {
        output = req.at("output_model").get<std::string>();
        const bool from_scratch = !req.contains("base_model") || req["base_model"].is_null();
        if (from_scratch) {
            model.role = req.value("role", std::string("large"));
            model.quality = model.role == "large" ? 0.45 : 0.35;
            model.seed = req.value("seed", std::uint64_t{0});
            model.truth = truth;
        } else {
            model = stub_model_from_json(read_json(req["base_model"].get<std::string>()));
            if (!truth.empty()) model.truth = truth;
        }
        // Source-only training sees no pseudo or pasted labels, so it earns no credit below.
        if (!model.truth.empty() && req.contains("train_manifest") && !req["train_manifest"].is_null()) {
            const DatasetManifest train = load_manifest(req.at("train_manifest").get<std::string>());
            const auto index = relative_index(model.truth.front());
            // Reward pasted-true labels and correct pseudo labels; penalize wrong pseudo labels.
            double credit = 0;
            for (std::size_t i = 0; i < train.size(); ++i) {
                const auto label = train.label_path(i);
                if (!label || !fs::exists(*label)) continue;
                const auto boxes = load_labels(*label);
                std::vector<LabeledBox> gt;
                if (const auto t = find_by_suffix(index, train.image_path(i))) gt = load_labels(*t);
                for (const auto& b : boxes) {
                    if (b.kind == LabelKind::PastedTrue) {
                        credit += 2;
                    } else if (b.kind == LabelKind::Pseudo) {
                        const bool correct = std::any_of(gt.begin(), gt.end(),
                                                         [&](const LabeledBox& g) { return iou(g.bbox, b.bbox) >= 0.5; });
                        credit += correct ? 1.0 : -0.5;
                    }
                }
            }
            credit = std::max(0.0, credit);
            const double freeze = req.value("freeze", std::string("none")) == "none" ? 1.0 : 0.6;
            const double epochs = std::min(1.0, req.value("epochs", 30) / 30.0);
            const double gain = 0.5 * credit / (credit + 200.0) * freeze * epochs;
            model.quality = model.quality + (1 - model.quality) * gain;
            model.generation += 1;
        }
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed train request: ") + e.what());
    }
    write_json(to_json(model), output);
    write_json({{"model", output}}, fs::path(request.string() + ".result.json"));
}

}  // namespace nsn::synth
