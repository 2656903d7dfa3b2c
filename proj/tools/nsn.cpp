// nsn: command-line front end for the noise-suppression pipeline.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nsn/curriculum.hpp"
#include "nsn/difficulty.hpp"
#include "nsn/error.hpp"
#include "nsn/evaluation.hpp"
#include "nsn/image_io.hpp"
#include "nsn/json_io.hpp"
#include "nsn/manifest.hpp"
#include "nsn/mca.hpp"
#include "nsn/orchestrator.hpp"
#include "nsn/synth.hpp"

using namespace nsn;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> jobs;
    std::string workdir;
    bool json_out = false;
    bool verbose = false;

    json config_json;  // loaded lazily from --config

    std::uint64_t resolved_seed() const {
        if (seed) return *seed;
        if (config_json.contains("seed")) return config_json["seed"].get<std::uint64_t>();
        if (const char* env = std::getenv("NSN_SEED")) return std::strtoull(env, nullptr, 10);
        return 0;
    }
    unsigned resolved_jobs() const {
        if (jobs) return std::max(1u, *jobs);
        if (config_json.contains("jobs")) return std::max(1u, config_json["jobs"].get<unsigned>());
        if (const char* env = std::getenv("NSN_JOBS")) return std::max(1u, static_cast<unsigned>(std::atoi(env)));
        return 1;
    }
    std::optional<fs::path> resolved_workdir() const {
        if (!workdir.empty()) return fs::path(workdir);
        if (config_json.contains("workdir")) return fs::path(config_json["workdir"].get<std::string>());
        if (const char* env = std::getenv("NSN_WORKDIR")) return fs::path(env);
        return std::nullopt;
    }
};

Globals g;

void emit(const json& j, const std::string& human) {
    if (g.json_out)
        std::cout << j.dump(2) << '\n';
    else
        std::cout << human;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

DifficultyThresholds thresholds_from(double ts, double lc, double bc, double factor) {
    DifficultyThresholds t{ts, lc, bc, factor};
    t.validate();
    return t;
}

std::optional<ImageSize> parse_size(const std::string& s) {
    if (s.empty()) return std::nullopt;
    int w = 0, h = 0;
    if (std::sscanf(s.c_str(), "%dx%d", &w, &h) != 2 || w < 1 || h < 1)
        throw nsn::InputError("size must look like WxH, got '" + s + "'");
    return ImageSize{w, h};
}

/// Loads `<pred_dir>/<stem>.txt` for every manifest entry (missing file: no boxes).
std::vector<std::vector<LabeledBox>> load_predictions(const DatasetManifest& m, const fs::path& pred_dir) {
    std::vector<std::vector<LabeledBox>> out(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        const fs::path p = pred_dir / m.entries[i].image.filename().replace_extension(".txt");
        if (fs::exists(p)) out[i] = load_labels(p, std::nullopt, LabelKind::Pseudo);
    }
    return out;
}

struct PclOutcome {
    PartitionReport partition;
    std::vector<ConfidenceRecord> candidates;
    CategoryStats stats;
    AdaptiveThresholds tau;
    ThresholdDecision decision;
};

PclOutcome run_pcl(const DatasetManifest& m, const std::vector<std::vector<LabeledBox>>& preds,
                   const DifficultyThresholds& dt, const CurriculumConfig& cc) {
    cc.validate();
    PclOutcome o;
    std::vector<std::vector<LabeledBox>> cand(m.size());
    std::vector<std::vector<std::size_t>> idx(m.size());
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t b = 0; b < preds[i].size(); ++b)
            if (*preds[i][b].confidence > cc.tau_min) {
                cand[i].push_back(preds[i][b]);
                idx[i].push_back(b);
            }
    PartitionOptions po;
    po.thresholds = dt;
    po.jobs = g.resolved_jobs();
    o.partition = partition_dataset(m, cand, po);
    for (std::size_t i = 0; i < m.size(); ++i)
        for (const auto& d : o.partition.images[i].boxes)
            o.candidates.push_back({m.entries[i].image.generic_string(), idx[i][d.box_index], d.category,
                                    *cand[i][d.box_index].confidence});
    o.candidates = candidate_filter(o.candidates, cc.tau_min);
    o.stats = relative_difficulty(o.candidates, cc.tau_max);
    o.tau = adaptive_thresholds(o.stats, cc.tau_max, cc.tau_min);
    o.decision = apply_thresholds(o.candidates, o.tau);
    return o;
}

std::string threshold_table(const PclOutcome& o) {
    std::string s = "category  N_c      sigma    tau\n";
    for (auto c : nsn::kAllCategories) {
        char line[96];
        std::snprintf(line, sizeof line, "%-9s %-8zu %-8.4f %.4f\n", std::string(to_string(c)).c_str(),
                      o.stats.count(c), o.stats.relative_difficulty(c), o.tau[c]);
        s += line;
    }
    if (o.tau.fallback_triggered) s += "(no candidate above tau_max: every threshold set to tau_max)\n";
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"nsn: curriculum pseudo-label correction, masked copy-paste and staged self-training "
                 "for cross-domain small-object detection"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand
    app.add_option("--config", g.config, "JSON config file (global defaults; the pipeline config for `run`)");
    app.add_option("--seed", g.seed, "random seed (env NSN_SEED)");
    app.add_option("--jobs", g.jobs, "worker threads (env NSN_JOBS)");
    app.add_option("--workdir", g.workdir, "working directory (env NSN_WORKDIR)");
    app.add_flag("--json", g.json_out, "print one JSON document on stdout");
    app.add_flag("-v,--verbose", g.verbose, "extra diagnostics on stderr");

    // validate
    std::string manifest;
    auto* validate = app.add_subcommand("validate", "check a dataset manifest (missing/undecodable files, labels)");
    validate->add_option("--manifest", manifest, "dataset manifest")->required();

    // difficulty
    std::string pred_dir, resize;
    double ts = 256, lc = 10, bc = 10, factor = 1.5;
    auto* difficulty = app.add_subcommand("difficulty", "difficulty metrics (size, local contrast, background "
                                                        "complexity) and four-way categories per box");
    difficulty->add_option("--manifest", manifest, "dataset manifest")->required();
    difficulty->add_option("--pred-dir", pred_dir, "classify predictions from this directory instead of labels");
    difficulty->add_option("--resize", resize, "measure on images resampled to WxH");
    for (auto* sc : {difficulty}) {
        sc->add_option("--tau-ts", ts, "target size threshold, px^2")->capture_default_str();
        sc->add_option("--tau-lc", lc, "local contrast threshold")->capture_default_str();
        sc->add_option("--tau-bc", bc, "background complexity threshold")->capture_default_str();
        sc->add_option("--factor", factor, "background window factor")->capture_default_str();
    }

    // thresholds / filter
    double tau_min = 0.25, tau_max = 0.75;
    std::string out_dir;
    auto* thresholds = app.add_subcommand("thresholds", "per-category relative difficulty and adaptive thresholds");
    auto* filter = app.add_subcommand("filter", "curriculum-filter pseudo labels with adaptive thresholds");
    for (auto* sc : {thresholds, filter}) {
        sc->add_option("--manifest", manifest, "target manifest (images)")->required();
        sc->add_option("--pred-dir", pred_dir, "prediction files <stem>.txt")->required();
        sc->add_option("--tau-min", tau_min, "candidate threshold")->capture_default_str();
        sc->add_option("--tau-max", tau_max, "confident threshold")->capture_default_str();
        sc->add_option("--tau-ts", ts)->capture_default_str();
        sc->add_option("--tau-lc", lc)->capture_default_str();
        sc->add_option("--tau-bc", bc)->capture_default_str();
        sc->add_option("--factor", factor)->capture_default_str();
    }
    filter->add_option("--out", out_dir, "output directory for accepted labels and reports")->required();

    // crops
    std::string masks_dir;
    bool allow_degraded = false;
    auto* crops = app.add_subcommand("crops", "build the masked crop library (saliency masks or external masks)");
    crops->add_option("--manifest", manifest, "crop manifest")->required();
    crops->add_option("--masks", masks_dir, "directory of <stem>.mask.png overrides");
    crops->add_flag("--allow-degraded", allow_degraded, "keep crops whose mask fell back to the central rectangle");
    crops->add_option("--out", out_dir, "write each asset mask as <stem>.mask.png here");

    // augment
    std::string crop_manifest;
    nsn::AugmentConfig aug;
    auto* augment = app.add_subcommand("augment", "masked copy-paste with Poisson blending onto pseudo-labelled images");
    augment->add_option("--manifest", manifest, "target manifest whose labels are pseudo predictions")->required();
    augment->add_option("--crops", crop_manifest, "crop manifest")->required();
    augment->add_option("--masks", masks_dir, "external mask directory");
    augment->add_option("--out", out_dir, "output directory")->required();
    augment->add_option("--pastes", aug.pastes, "pastes per image (J)")->capture_default_str();
    augment->add_option("--max-retries", aug.max_retries)->capture_default_str();
    augment->add_option("--overlap-iou", aug.overlap_iou)->capture_default_str();
    augment->add_flag("--allow-overlap", aug.allow_overlap, "place without the overlap check");
    augment->add_flag("--allow-degraded", aug.allow_degraded_masks);
    augment->add_flag("--fallback-sizing", aug.fallback_sizing, "size images without pseudo labels from the pool");
    augment->add_option("--tolerance", aug.solver.tolerance, "Poisson relative residual")->capture_default_str();

    // eval
    std::string mode = "all-point";
    double iou_threshold = 0.5;
    auto* eval = app.add_subcommand("eval", "single-category AP at IoU 0.5 (mAP)");
    eval->add_option("--manifest", manifest, "ground-truth manifest")->required();
    eval->add_option("--pred-dir", pred_dir, "prediction files <stem>.txt")->required();
    eval->add_option("--mode", mode, "all-point | 11-point")->capture_default_str();
    eval->add_option("--iou", iou_threshold)->capture_default_str();

    // gain
    double adapted = 0, source_only = 0, oracle = 0;
    auto* gain = app.add_subcommand("gain", "adaptation gain rho = (adapted - source) / (oracle - source) x 100");
    gain->add_option("--adapted", adapted, "mAP of the adapted model")->required();
    gain->add_option("--source", source_only, "mAP of the source-only model")->required();
    gain->add_option("--oracle", oracle, "mAP of the target-trained model")->required();

    // synth
    std::string spec_file;
    std::size_t count = 10;
    auto* synth_cmd = app.add_subcommand("synth", "render a synthetic domain with exact labels");
    synth_cmd->add_option("--spec", spec_file, "scene spec JSON");
    synth_cmd->add_option("--count", count, "number of images")->capture_default_str();
    synth_cmd->add_option("--out", out_dir, "output directory")->required();

    // stub-detect (direct use, or as the detector adapter via `infer --request`)
    std::string request;
    nsn::synth::Corruption corruption;
    auto* stub_detect = app.add_subcommand("stub-detect", "controllable stand-in detector");
    stub_detect->require_subcommand(0, 1);
    stub_detect->add_option("--manifest", manifest, "ground-truth manifest");
    stub_detect->add_option("--out", out_dir, "prediction directory");
    stub_detect->add_option("--conf-lo", corruption.confidence.lo)->capture_default_str();
    stub_detect->add_option("--conf-hi", corruption.confidence.hi)->capture_default_str();
    stub_detect->add_option("--drop", corruption.drop_rate)->capture_default_str();
    stub_detect->add_option("--jitter", corruption.jitter_px)->capture_default_str();
    stub_detect->add_option("--fp-rate", corruption.false_positive_rate)->capture_default_str();
    auto* infer = stub_detect->add_subcommand("infer", "detector adapter protocol");
    infer->add_option("--request", request, "request JSON")->required();

    std::vector<std::string> truth;
    auto* stub_train = app.add_subcommand("stub-train", "stand-in trainer adapter");
    stub_train->require_subcommand(1);
    stub_train->add_option("--truth", truth, "truth manifests the stub model may consult (target first)");
    auto* train = stub_train->add_subcommand("train", "trainer adapter protocol");
    train->add_option("--request", request, "request JSON")->required();

    // run
    std::string stop_after;
    auto* run = app.add_subcommand("run", "execute the staged pipeline S1 -> S2.1 -> S2.2 -> S3 (resumable)");
    run->add_option("--stop-after", stop_after, "checkpoint and exit after this stage");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (!g.config.empty() && !run->parsed()) g.config_json = nsn::read_json(g.config);
        const unsigned jobs = g.resolved_jobs();

        if (validate->parsed()) {
            const auto report = nsn::validate_dataset(nsn::load_manifest(manifest), jobs);
            std::string human = "images " + std::to_string(report.images) + ", boxes " + std::to_string(report.boxes) +
                                ", errors " + std::to_string(report.errors.size()) + "\n";
            for (const auto& e : report.errors) human += "  " + e.kind + ": " + e.path + " (" + e.message + ")\n";
            emit(to_json(report), human);
            return report.errors.empty() ? 0 : 1;
        }

        if (difficulty->parsed()) {
            const auto m = nsn::load_manifest(manifest);
            PartitionOptions po;
            po.thresholds = thresholds_from(ts, lc, bc, factor);
            po.resize_to = parse_size(resize);
            po.jobs = jobs;
            const auto report = pred_dir.empty() ? partition_dataset(m, po)
                                                 : partition_dataset(m, load_predictions(m, pred_dir), po);
            std::string human = "st " + std::to_string(report.count(nsn::DifficultyCategory::SmallTarget)) + "  lc " +
                                std::to_string(report.count(nsn::DifficultyCategory::LowContrast)) + "  cb " +
                                std::to_string(report.count(nsn::DifficultyCategory::ComplexBackground)) + "  se " +
                                std::to_string(report.count(nsn::DifficultyCategory::SimpleExample)) + "\n";
            for (const auto& e : report.errors) human += "  error: " + e + "\n";
            emit(to_json(report), human);
            return 0;
        }

        if (thresholds->parsed() || filter->parsed()) {
            const auto m = nsn::load_manifest(manifest);
            const auto preds = load_predictions(m, pred_dir);
            const auto o = run_pcl(m, preds, thresholds_from(ts, lc, bc, factor), {tau_min, tau_max});
            json report = threshold_report(o.stats, o.tau);
            if (filter->parsed()) {
                fs::create_directories(out_dir);
                std::map<std::string, std::vector<std::size_t>> keep;
                for (const auto& r : o.decision.accepted) keep[r.image].push_back(r.box_index);
                for (std::size_t i = 0; i < m.size(); ++i) {
                    std::vector<LabeledBox> boxes;
                    auto& idx = keep[m.entries[i].image.generic_string()];
                    std::sort(idx.begin(), idx.end());
                    for (auto b : idx) boxes.push_back(preds[i][b]);
                    save_labels(boxes, fs::path(out_dir) / m.entries[i].image.filename().replace_extension(".txt"));
                }
                std::ofstream lines(fs::path(out_dir) / "decisions.jsonl", std::ios::binary | std::ios::trunc);
                for (const auto& l : decision_lines(o.decision)) lines << l.dump() << '\n';
                nsn::write_json(report, fs::path(out_dir) / "thresholds.json");
                report["accepted"] = o.decision.accepted.size();
                report["rejected"] = o.decision.rejected.size();
            }
            std::string human = threshold_table(o);
            if (filter->parsed())
                human += "accepted " + std::to_string(o.decision.accepted.size()) + ", rejected " +
                         std::to_string(o.decision.rejected.size()) + "\n";
            emit(report, human);
            return 0;
        }

        if (crops->parsed()) {
            nsn::CropLibraryOptions co;
            if (!masks_dir.empty()) co.external_masks = fs::path(masks_dir);
            co.allow_degraded = allow_degraded;
            co.jobs = jobs;
            const auto lib = build_crop_library(nsn::load_manifest(manifest), co);
            if (!out_dir.empty())
                for (const auto& a : lib.assets)
                    nsn::write_mask(a.mask, fs::path(out_dir) / (fs::path(a.id).stem().string() + ".mask.png"));
            json assets = json::array();
            for (const auto& a : lib.assets)
                assets.push_back({{"id", a.id},
                                  {"width", a.image.width()},
                                  {"height", a.image.height()},
                                  {"tight", {a.tight.x0, a.tight.y0, a.tight.x1, a.tight.y1}},
                                  {"degraded", a.degraded}});
            const json j = {{"inputs", lib.report.inputs},
                            {"kept", lib.report.kept},
                            {"degraded", lib.report.degraded},
                            {"external_masks", lib.report.external_masks},
                            {"errors", lib.report.errors},
                            {"assets", assets}};
            emit(j, "kept " + std::to_string(lib.report.kept) + " of " + std::to_string(lib.report.inputs) +
                        " crops, " + std::to_string(lib.report.degraded.size()) + " degraded\n");
            return 0;
        }

        if (augment->parsed()) {
            nsn::CropLibraryOptions co;
            if (!masks_dir.empty()) co.external_masks = fs::path(masks_dir);
            co.allow_degraded = aug.allow_degraded_masks;
            co.jobs = jobs;
            const auto lib = build_crop_library(nsn::load_manifest(crop_manifest), co);
            aug.seed = g.resolved_seed();
            aug.jobs = jobs;
            const auto r = augment_dataset(nsn::load_manifest(manifest), lib.assets, aug, out_dir);
            const json j = {{"augmented", r.augmented},
                            {"passthrough", r.passthrough},
                            {"failed", r.failed},
                            {"pasted", r.pasted},
                            {"manifest", (fs::path(out_dir) / "manifest.json").string()}};
            emit(j, "augmented " + std::to_string(r.augmented) + ", passthrough " + std::to_string(r.passthrough) +
                        ", failed " + std::to_string(r.failed) + ", pasted " + std::to_string(r.pasted) + "\n");
            return r.failed ? 1 : 0;
        }

        if (eval->parsed()) {
            const auto r = map50(nsn::load_manifest(manifest), pred_dir, nsn::interpolation_from_string(mode),
                                 iou_threshold);
            emit(to_json(r), "mAP@" + fmt("%.2f", iou_threshold) + " (" + mode + "): " +
                                 fmt("%.1f", nsn::round_display(r.map)) + "  tp " + std::to_string(r.ap.tp) + " fp " +
                                 std::to_string(r.ap.fp) + " fn " + std::to_string(r.ap.fn) + "\n");
            return 0;
        }

        if (gain->parsed()) {
            const double rho = nsn::adaptation_gain({adapted, source_only, oracle});
            emit({{"theta_a", adapted}, {"theta_s", source_only}, {"theta_o", oracle}, {"rho", rho},
                  {"rho_display", nsn::round_display(rho)}},
                 "rho = " + fmt("%.1f", nsn::round_display(rho)) + "%\n");
            return 0;
        }

        if (synth_cmd->parsed()) {
            nsn::synth::SceneSpec spec;
            if (!spec_file.empty()) spec = nsn::synth::scene_spec_from_json(nsn::read_json(spec_file));
            if (g.seed || g.config_json.contains("seed") || std::getenv("NSN_SEED")) spec.seed = g.resolved_seed();
            const auto m = nsn::synth::generate_domain(spec, count, out_dir, jobs);
            std::size_t boxes = 0;
            for (std::size_t i = 0; i < m.size(); ++i) boxes += load_labels(*m.label_path(i)).size();
            emit({{"images", m.size()}, {"boxes", boxes}, {"manifest", (fs::path(out_dir) / "manifest.json").string()}},
                 "wrote " + std::to_string(m.size()) + " images, " + std::to_string(boxes) + " boxes to " + out_dir +
                     "\n");
            return 0;
        }

        if (stub_detect->parsed()) {
            if (infer->parsed()) {
                nsn::synth::stub_infer(request, jobs);
                return 0;
            }
            if (manifest.empty() || out_dir.empty()) throw CLI::RequiredError("--manifest and --out");
            nsn::synth::stub_detect(nsn::load_manifest(manifest), corruption, g.resolved_seed(), out_dir, jobs);
            emit({{"predictions", out_dir}}, "predictions written to " + out_dir + "\n");
            return 0;
        }

        if (stub_train->parsed()) {
            nsn::synth::stub_train(request, truth);
            return 0;
        }

        if (run->parsed()) {
            if (g.config.empty()) throw CLI::RequiredError("--config");
            const json cfg_json = nsn::read_json(g.config);
            auto cfg = nsn::pipeline_config_from_json(cfg_json, fs::absolute(g.config).parent_path());
            g.config_json = cfg_json;
            if (const auto wd = g.resolved_workdir(); wd && (!g.workdir.empty() || std::getenv("NSN_WORKDIR")))
                cfg.workdir = fs::absolute(*wd);
            if (g.seed) cfg.seed = *g.seed;
            if (g.jobs) cfg.jobs = std::max(1u, *g.jobs);
            nsn::RunOptions ro;
            if (!stop_after.empty()) ro.stop_after = nsn::stage_from_string(stop_after);
            const auto r = nsn::run_pipeline(cfg, ro);
            json reports = json::array();
            for (const auto& rep : r.reports) reports.push_back(rep);
            const json j = {{"finished", r.finished},
                            {"completed", r.state.completed},
                            {"final_model", r.final_model ? json(*r.final_model) : json()},
                            {"trainer_calls", r.trainer_calls},
                            {"detector_calls", r.detector_calls},
                            {"reports", reports}};
            std::string human;
            for (const auto& rep : r.reports) {
                human += rep.value("stage", std::string("?"));
                if (rep.contains("counts"))
                    human += "  raw " + std::to_string(rep["counts"]["raw"].get<std::size_t>()) + "  candidates " +
                             std::to_string(rep["counts"]["candidates"].get<std::size_t>()) + "  accepted " +
                             std::to_string(rep["counts"]["accepted"].get<std::size_t>()) + "  pasted " +
                             std::to_string(rep["counts"]["pasted"].get<std::size_t>());
                if (rep.contains("eval") && !rep["eval"].is_null())
                    human += "  mAP50 " + fmt("%.1f", rep["eval"]["map50_display"].get<double>());
                human += "\n";
            }
            human += r.finished ? "pipeline finished\n" : "pipeline stopped after checkpoint\n";
            emit(j, human);
            return 0;
        }
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const nsn::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const nlohmann::ordered_json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
