#include "nsn/orchestrator.hpp"

#include <cmath>
#include <fcntl.h>
#include <fstream>
#include <sys/wait.h>
#include <unistd.h>

#include "nsn/error.hpp"
#include "nsn/evaluation.hpp"
#include "nsn/json_io.hpp"
#include "nsn/random.hpp"

namespace nsn {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string to_string(StageId s) {
    switch (s) {
        case StageId::S1Large: return "S1-large";
        case StageId::S1Small: return "S1-small";
        case StageId::S2_1: return "S2.1";
        case StageId::S2_2: return "S2.2";
        case StageId::S3: return "S3";
    }
    return "S1-large";
}

StageId stage_from_string(const std::string& s) {
    for (auto id : {StageId::S1Large, StageId::S1Small, StageId::S2_1, StageId::S2_2, StageId::S3})
        if (to_string(id) == s) return id;
    throw InputError("unknown stage '" + s + "'");
}

std::string to_string(ModelRole r) { return r == ModelRole::Large ? "large" : "small"; }
std::string to_string(FreezeDirective f) { return f == FreezeDirective::ExceptNorm ? "except-norm" : "none"; }

double compose_loss(double supervised, double pseudo, double pasted_true, const LossWeights& w) {
    for (double v : {supervised, pseudo, pasted_true, w.alpha, w.beta})
        if (!std::isfinite(v) || v < 0) throw InputError("loss terms and weights must be finite and non-negative");
    return supervised + w.alpha * pseudo + w.beta * pasted_true;
}

void StageConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (!std::isfinite(weights.alpha) || !std::isfinite(weights.beta) || weights.alpha < 0 || weights.beta < 0)
        throw ConfigError("loss weights must be finite and non-negative");
    if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
    const bool ok = (id == StageId::S2_1 && role == ModelRole::Large && freeze == FreezeDirective::ExceptNorm) ||
                    (id == StageId::S2_2 && role == ModelRole::Large && freeze == FreezeDirective::None) ||
                    (id == StageId::S3 && role == ModelRole::Small && freeze == FreezeDirective::ExceptNorm) ||
                    ((id == StageId::S1Large || id == StageId::S1Small) && freeze == FreezeDirective::None);
    if (!ok) throw ConfigError("stage " + to_string(id) + " has the wrong model role or freeze directive");
}

std::vector<StageConfig> adaptive_stages(int epochs, const LossWeights& w, double learning_rate) {
    return {{StageId::S2_1, ModelRole::Large, FreezeDirective::ExceptNorm, epochs, w, learning_rate},
            {StageId::S2_2, ModelRole::Large, FreezeDirective::None, epochs, w, learning_rate},
            {StageId::S3, ModelRole::Small, FreezeDirective::ExceptNorm, epochs, w, learning_rate}};
}

void PipelineConfig::validate() const {
    if (workdir.empty()) throw ConfigError("workdir is required");
    if (source_manifest.empty() || target_manifest.empty() || crop_manifest.empty())
        throw ConfigError("source, target and crop manifests are required");
    if (detector.empty()) throw ConfigError("detector adapter command is required");
    if (trainer.empty()) throw ConfigError("trainer adapter command is required");
    if (epochs < 1 || source_epochs < 1) throw ConfigError("epochs must be at least 1");
    if (!(lr_source > 0) || !(lr_adapt > 0)) throw ConfigError("learning rates must be positive");
    if (weights.alpha < 0 || weights.beta < 0 || !std::isfinite(weights.alpha) || !std::isfinite(weights.beta))
        throw ConfigError("alpha and beta must be finite and non-negative");
    curriculum.validate();
    difficulty.validate();
    augment.validate();
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base.empty() ? path : (base / path).lexically_normal();
}

}  // namespace

PipelineConfig pipeline_config_from_json(const json& j, const fs::path& base_dir) {
    PipelineConfig c;
    try {
        if (!j.contains("alpha") || !j.contains("beta"))
            throw ConfigError("config must state alpha and beta explicitly");
        c.weights = {j.at("alpha").get<double>(), j.at("beta").get<double>()};
        c.workdir = resolve(base_dir, j.value("workdir", std::string("nsn-work")));
        c.seed = j.value("seed", std::uint64_t{0});
        c.source_manifest = resolve(base_dir, j.at("source_manifest").get<std::string>());
        c.target_manifest = resolve(base_dir, j.at("target_manifest").get<std::string>());
        if (j.contains("val_manifest") && !j["val_manifest"].is_null())
            c.val_manifest = resolve(base_dir, j["val_manifest"].get<std::string>());
        c.crop_manifest = resolve(base_dir, j.at("crop_manifest").get<std::string>());
        if (j.contains("external_masks") && !j["external_masks"].is_null())
            c.external_masks = resolve(base_dir, j["external_masks"].get<std::string>());
        c.detector = j.at("detector").get<AdapterCommand>();
        c.trainer = j.at("trainer").get<AdapterCommand>();
        if (j.contains("large_source_model") && !j["large_source_model"].is_null())
            c.large_source_model = resolve(base_dir, j["large_source_model"].get<std::string>()).string();
        if (j.contains("small_source_model") && !j["small_source_model"].is_null())
            c.small_source_model = resolve(base_dir, j["small_source_model"].get<std::string>()).string();
        c.train_small_source = j.value("train_small_source", false);
        c.epochs = j.value("epochs", c.epochs);
        c.source_epochs = j.value("source_epochs", c.source_epochs);
        c.lr_source = j.value("lr_source", c.lr_source);
        c.lr_adapt = j.value("lr_adapt", c.lr_adapt);
        if (j.contains("curriculum")) {
            const auto& k = j["curriculum"];
            c.curriculum.tau_min = k.value("tau_min", c.curriculum.tau_min);
            c.curriculum.tau_max = k.value("tau_max", c.curriculum.tau_max);
        }
        if (j.contains("difficulty")) {
            const auto& k = j["difficulty"];
            c.difficulty.target_size = k.value("target_size", c.difficulty.target_size);
            c.difficulty.local_contrast = k.value("local_contrast", c.difficulty.local_contrast);
            c.difficulty.background_complexity = k.value("background_complexity", c.difficulty.background_complexity);
            c.difficulty.background_factor = k.value("background_factor", c.difficulty.background_factor);
        }
        if (j.contains("augment")) {
            const auto& k = j["augment"];
            c.augment.pastes = k.value("pastes", c.augment.pastes);
            c.augment.max_retries = k.value("max_retries", c.augment.max_retries);
            c.augment.overlap_iou = k.value("overlap_iou", c.augment.overlap_iou);
            c.augment.allow_overlap = k.value("allow_overlap", c.augment.allow_overlap);
            c.augment.allow_degraded_masks = k.value("allow_degraded_masks", c.augment.allow_degraded_masks);
            c.augment.fallback_sizing = k.value("fallback_sizing", c.augment.fallback_sizing);
            c.augment.solver.tolerance = k.value("tolerance", c.augment.solver.tolerance);
        }
        c.jobs = j.value("jobs", c.jobs);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed pipeline config: ") + e.what());
    }
    c.validate();
    return c;
}

json to_json(const PipelineConfig& c) {
    auto opt = [](const auto& o) { return o ? json(fs::path(*o).string()) : json(); };
    return {{"workdir", c.workdir.string()},
            {"seed", c.seed},
            {"source_manifest", c.source_manifest.string()},
            {"target_manifest", c.target_manifest.string()},
            {"val_manifest", opt(c.val_manifest)},
            {"crop_manifest", c.crop_manifest.string()},
            {"external_masks", opt(c.external_masks)},
            {"detector", c.detector},
            {"trainer", c.trainer},
            {"large_source_model", opt(c.large_source_model)},
            {"small_source_model", opt(c.small_source_model)},
            {"train_small_source", c.train_small_source},
            {"epochs", c.epochs},
            {"source_epochs", c.source_epochs},
            {"alpha", c.weights.alpha},
            {"beta", c.weights.beta},
            {"lr_source", c.lr_source},
            {"lr_adapt", c.lr_adapt},
            {"curriculum", {{"tau_min", c.curriculum.tau_min}, {"tau_max", c.curriculum.tau_max}}},
            {"difficulty",
             {{"target_size", c.difficulty.target_size},
              {"local_contrast", c.difficulty.local_contrast},
              {"background_complexity", c.difficulty.background_complexity},
              {"background_factor", c.difficulty.background_factor}}},
            {"augment",
             {{"pastes", c.augment.pastes},
              {"max_retries", c.augment.max_retries},
              {"overlap_iou", c.augment.overlap_iou},
              {"allow_overlap", c.augment.allow_overlap},
              {"allow_degraded_masks", c.augment.allow_degraded_masks},
              {"fallback_sizing", c.augment.fallback_sizing},
              {"tolerance", c.augment.solver.tolerance}}},
            {"jobs", c.jobs}};
}

bool PipelineState::is_completed(StageId s) const {
    return std::find(completed.begin(), completed.end(), to_string(s)) != completed.end();
}

json to_json(const PipelineState& s) {
    json snaps = json::object();
    for (const auto& [id, snap] : s.snapshots)
        snaps[id] = {{"pseudo_dir", snap.pseudo_dir},
                     {"generated_by", snap.generated_by},
                     {"augmented_dir", snap.augmented_dir},
                     {"bundle", snap.bundle}};
    auto opt = [](const std::optional<std::string>& o) { return o ? json(*o) : json(); };
    return {{"seed", s.seed},
            {"completed", s.completed},
            {"current", opt(s.current)},
            {"large_model", opt(s.large_model)},
            {"small_model", opt(s.small_model)},
            {"snapshots", snaps}};
}

PipelineState pipeline_state_from_json(const json& j) {
    PipelineState s;
    try {
        auto opt = [&](const char* key) -> std::optional<std::string> {
            if (!j.contains(key) || j[key].is_null()) return std::nullopt;
            return j[key].get<std::string>();
        };
        s.seed = j.at("seed").get<std::uint64_t>();
        s.completed = j.at("completed").get<std::vector<std::string>>();
        s.current = opt("current");
        s.large_model = opt("large_model");
        s.small_model = opt("small_model");
        for (const auto& [id, v] : j.at("snapshots").items())
            s.snapshots[id] = {v.at("pseudo_dir").get<std::string>(), v.at("generated_by").get<std::string>(),
                               v.at("augmented_dir").get<std::string>(), v.at("bundle").get<std::string>()};
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed pipeline state: ") + e.what());
    }
    return s;
}

void save_state(const PipelineState& s, const fs::path& path) {
    // Write then rename so a crash never leaves a truncated checkpoint.
    const fs::path tmp = path.string() + ".tmp";
    write_json(to_json(s), tmp);
    fs::rename(tmp, path);
}

PipelineState load_state(const fs::path& path) { return pipeline_state_from_json(read_json(path)); }

int run_adapter(const AdapterCommand& argv, const std::string& verb, const fs::path& request, const fs::path& workdir,
                const fs::path& log) {
    if (argv.empty()) throw ConfigError("empty adapter command");
    std::vector<std::string> args = argv;
    args.push_back(verb);
    args.push_back("--request");
    args.push_back(request.string());
    std::vector<char*> cargs;
    for (auto& a : args) cargs.push_back(a.data());
    cargs.push_back(nullptr);

    const fs::path log_path = log.is_absolute() ? log : workdir / log;
    std::error_code ec;
    fs::create_directories(log_path.parent_path(), ec);
    const int fd = ::open(log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd < 0) throw IoError("cannot open adapter log " + log_path.string());

    const pid_t pid = ::fork();
    if (pid < 0) {
        ::close(fd);
        throw IoError("fork failed");
    }
    if (pid == 0) {
        if (::chdir(workdir.c_str()) != 0) ::_exit(126);
        ::dup2(fd, STDOUT_FILENO);
        ::dup2(fd, STDERR_FILENO);
        ::close(fd);
        ::execvp(cargs[0], cargs.data());
        ::_exit(127);
    }
    ::close(fd);
    int status = 0;
    while (::waitpid(pid, &status, 0) < 0)
        if (errno != EINTR) throw IoError("waitpid failed");
    if (WIFEXITED(status)) return WEXITSTATUS(status);
    return 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
}

void generate_pseudo_labels(const std::string& model, const DatasetManifest& target, const AdapterCommand& detector,
                            const fs::path& workdir, const fs::path& out_dir) {
    const fs::path tmp = out_dir.string() + ".partial";
    const fs::path request = out_dir.string() + ".request.json";
    const fs::path log = out_dir.string() + ".log";
    std::error_code ec;
    fs::remove_all(workdir / tmp, ec);
    fs::remove_all(workdir / out_dir, ec);

    json images = json::array();
    for (std::size_t i = 0; i < target.size(); ++i) images.push_back(target.image_path(i).string());
    write_json({{"model", model}, {"images", images}, {"output_dir", tmp.generic_string()}}, workdir / request);

    auto fail = [&](const std::string& why) {
        fs::remove_all(workdir / tmp, ec);
        throw StageError("detector adapter failed: " + why + " (log: " + (workdir / log).string() + ")");
    };
    const int status = run_adapter(detector, "infer", request, workdir, log);
    if (status != 0) fail("exit status " + std::to_string(status));
    for (std::size_t i = 0; i < target.size(); ++i) {
        const fs::path pred = workdir / tmp / target.entries[i].image.filename().replace_extension(".txt");
        if (!fs::exists(pred)) fail("no prediction file for " + target.entries[i].image.generic_string());
        try {
            load_labels(pred, std::nullopt, LabelKind::Pseudo);
        } catch (const Error& e) {
            fail(e.what());
        }
    }
    fs::rename(workdir / tmp, workdir / out_dir);
}

json to_json(const StageBundle& b) {
    return {{"stage", to_string(b.stage.id)},
            {"role", to_string(b.stage.role)},
            {"freeze", to_string(b.stage.freeze)},
            {"epochs", b.stage.epochs},
            {"alpha", b.stage.weights.alpha},
            {"beta", b.stage.weights.beta},
            {"lr", b.stage.learning_rate},
            {"seed", b.seed},
            {"train_manifest", b.train_manifest.generic_string()},
            {"label_provenance_dir", b.provenance_dir.generic_string()},
            {"counts",
             {{"raw", b.counts.raw},
              {"candidates", b.counts.candidates},
              {"accepted", b.counts.accepted},
              {"pasted", b.counts.pasted}}},
            {"thresholds", b.thresholds},
            {"loss", "L = L_s + alpha * L_u + beta * L_t (pseudo lines: L_u, pasted lines: L_t)"}};
}

StageBundle prepare_stage(const PipelineConfig& config, const PipelineState& state, const StageConfig& stage,
                          const CropLibrary& library, const fs::path& pseudo_dir, const fs::path& stage_dir) {
    stage.validate();
    const fs::path& work = config.workdir;
    const fs::path dir = work / stage_dir;
    const DatasetManifest target = load_manifest(config.target_manifest);
    const std::string stage_name = to_string(stage.id);

    StageBundle bundle;
    bundle.stage = stage;
    bundle.seed = derive_seed(state.seed, stage_name);

    // Raw predictions and the candidate cut.
    const std::size_t n = target.size();
    std::vector<std::vector<LabeledBox>> raw(n), candidates(n);
    std::vector<std::vector<std::size_t>> raw_index(n);
    for (std::size_t i = 0; i < n; ++i) {
        raw[i] = load_labels(work / pseudo_dir / target.entries[i].image.filename().replace_extension(".txt"),
                             std::nullopt, LabelKind::Pseudo);
        bundle.counts.raw += raw[i].size();
        for (std::size_t b = 0; b < raw[i].size(); ++b)
            if (*raw[i][b].confidence > config.curriculum.tau_min) {
                candidates[i].push_back(raw[i][b]);
                raw_index[i].push_back(b);
            }
    }

    // Difficulty of the candidate boxes themselves.
    PartitionOptions popts;
    popts.thresholds = config.difficulty;
    popts.jobs = config.jobs;
    const PartitionReport partition = partition_dataset(target, candidates, popts);
    if (!partition.errors.empty()) throw StageError("difficulty partition failed: " + partition.errors.front());

    std::vector<ConfidenceRecord> records;
    for (std::size_t i = 0; i < n; ++i)
        for (const auto& d : partition.images[i].boxes)
            records.push_back({target.entries[i].image.generic_string(), raw_index[i][d.box_index], d.category,
                               *candidates[i][d.box_index].confidence});
    const auto filtered = candidate_filter(records, config.curriculum.tau_min);
    bundle.counts.candidates = filtered.size();
    const CategoryStats stats = relative_difficulty(filtered, config.curriculum.tau_max);
    const AdaptiveThresholds tau = adaptive_thresholds(stats, config.curriculum.tau_max, config.curriculum.tau_min);
    const ThresholdDecision decision = apply_thresholds(filtered, tau);
    bundle.counts.accepted = decision.accepted.size();
    bundle.thresholds = threshold_report(stats, tau);

    write_json(bundle.thresholds, dir / "pcl" / "thresholds.json");
    write_json(to_json(partition), dir / "pcl" / "difficulty.json");
    {
        std::ofstream lines(dir / "pcl" / "decisions.jsonl", std::ios::binary | std::ios::trunc);
        for (const auto& l : decision_lines(decision)) lines << l.dump() << '\n';
    }

    // Corrected pseudo labels, one file per target image, then MCA on top of them.
    std::map<std::string, std::vector<std::size_t>> accepted_by_image;
    for (const auto& r : decision.accepted) accepted_by_image[r.image].push_back(r.box_index);
    DatasetManifest corrected;
    corrected.root = target.root;
    corrected.split = target.split;
    corrected.domain = Domain::Target;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string key = target.entries[i].image.generic_string();
        std::vector<LabeledBox> keep;
        if (auto it = accepted_by_image.find(key); it != accepted_by_image.end()) {
            std::sort(it->second.begin(), it->second.end());
            for (auto b : it->second) keep.push_back(raw[i][b]);
        }
        const fs::path label = dir / "pcl" / "labels" / target.entries[i].image.filename().replace_extension(".txt");
        save_labels(keep, label);
        corrected.entries.push_back({target.entries[i].image, fs::absolute(label)});
    }

    AugmentConfig aug = config.augment;
    aug.seed = bundle.seed;
    aug.jobs = config.jobs;
    const AugmentDatasetResult augmented = augment_dataset(corrected, library.assets, aug, dir / "augmented");
    bundle.counts.pasted = augmented.pasted;

    // Merged training manifest: labelled source plus the augmented target, paths relative to
    // the stage directory for augmented files.
    const DatasetManifest source = load_manifest(config.source_manifest);
    DatasetManifest merged;
    merged.root = ".";
    merged.split = Split::Train;
    merged.domain = Domain::TargetAugmented;
    for (std::size_t i = 0; i < source.size(); ++i) merged.entries.push_back({source.image_path(i), source.label_path(i)});
    for (const auto& e : augmented.manifest.entries)
        merged.entries.push_back({fs::path("augmented") / e.image, e.label ? std::optional(fs::path("augmented") / *e.label)
                                                                        : std::nullopt});
    bundle.train_manifest = stage_dir / "train_manifest.json";
    bundle.provenance_dir = stage_dir / "augmented";
    save_manifest(merged, work / bundle.train_manifest);

    json out = to_json(bundle);
    out["mca"] = {{"augmented", augmented.augmented},
                  {"passthrough", augmented.passthrough},
                  {"failed", augmented.failed},
                  {"pasted", augmented.pasted},
                  {"records", (stage_dir / "augmented" / "records.mca.jsonl").generic_string()}};
    out["crop_library"] = {{"inputs", library.report.inputs},
                           {"kept", library.report.kept},
                           {"degraded", library.report.degraded}};
    out["warnings"] = json::array();
    if (decision.accepted.empty())
        out["warnings"].push_back("no pseudo label accepted; training on pasted-true labels only");
    write_json(out, dir / "bundle.json");
    return bundle;
}

namespace {

struct Runner {
    const PipelineConfig& config;
    const RunOptions& options;
    PipelineResult result;
    std::optional<CropLibrary> library;

    fs::path state_path() const { return config.workdir / "state.json"; }

    void checkpoint() { save_state(result.state, state_path()); }

    const CropLibrary& crops() {
        if (!library) {
            CropLibraryOptions o;
            o.external_masks = config.external_masks;
            o.allow_degraded = config.augment.allow_degraded_masks;
            o.jobs = config.jobs;
            library = build_crop_library(load_manifest(config.crop_manifest), o);
        }
        return *library;
    }

    std::string train(const StageConfig& stage, const std::optional<std::string>& base, const json& manifest,
                      const json& provenance) {
        const std::string name = to_string(stage.id);
        const fs::path dir = fs::path("stages") / name;
        const fs::path request = dir / "train_request.json";
        const std::string output = (dir / "model.json").generic_string();
        write_json({{"base_model", base ? json(*base) : json()},
                    {"train_manifest", manifest},
                    {"label_provenance_dir", provenance},
                    {"freeze", to_string(stage.freeze)},
                    {"epochs", stage.epochs},
                    {"alpha", stage.weights.alpha},
                    {"beta", stage.weights.beta},
                    {"lr", stage.learning_rate},
                    {"seed", derive_seed(result.state.seed, name)},
                    {"output_model", output},
                    {"role", to_string(stage.role)},
                    {"stage", name}},
                   config.workdir / request);
        ++result.trainer_calls;
        const int status = run_adapter(config.trainer, "train", request, config.workdir, dir / "train.log");
        const fs::path result_file = config.workdir / (request.string() + ".result.json");
        if (status != 0 || !fs::exists(result_file))
            throw StageError("trainer adapter failed for " + name + " (log: " +
                             (config.workdir / dir / "train.log").string() + ")");
        const std::string model = read_json(result_file).at("model").get<std::string>();
        if (!fs::exists(fs::path(model).is_absolute() ? fs::path(model) : config.workdir / model))
            throw StageError("trainer for " + name + " reported a missing model " + model);
        return model;
    }

    json evaluate(const std::string& model, const fs::path& dir) {
        if (!config.val_manifest) return json();
        const DatasetManifest val = load_manifest(*config.val_manifest);
        ++result.detector_calls;
        generate_pseudo_labels(model, val, config.detector, config.workdir, dir / "eval");
        const MapReport r = map50(val, config.workdir / dir / "eval");
        return {{"map50", r.map}, {"map50_display", round_display(r.map)}, {"tp", r.ap.tp}, {"fp", r.ap.fp},
                {"fn", r.ap.fn}};
    }

    void begin(StageId id) {
        const fs::path dir = config.workdir / "stages" / to_string(id);
        std::error_code ec;
        fs::remove_all(dir, ec);  // leftovers of an interrupted attempt
        fs::create_directories(dir, ec);
        result.state.current = to_string(id);
        checkpoint();
    }

    void finish(StageId id, json report) {
        const fs::path dir = fs::path("stages") / to_string(id);
        write_json(report, config.workdir / dir / "report.json");
        result.reports.push_back(std::move(report));
        result.state.completed.push_back(to_string(id));
        result.state.current.reset();
        checkpoint();
    }

    void source_stage(StageId id, ModelRole role, const std::optional<std::string>& supplied) {
        begin(id);
        const fs::path dir = fs::path("stages") / to_string(id);
        std::string model;
        json report = {{"stage", to_string(id)}, {"role", to_string(role)}};
        if (supplied) {
            model = *supplied;
            report["trained"] = false;
        } else {
            StageConfig s{id, role, FreezeDirective::None, config.source_epochs, config.weights, config.lr_source};
            model = train(s, std::nullopt, config.source_manifest.string(), json());
            report["trained"] = true;
        }
        (role == ModelRole::Large ? result.state.large_model : result.state.small_model) = model;
        report["model"] = model;
        report["eval"] = evaluate(model, dir);
        finish(id, std::move(report));
    }

    void adaptive_stage(const StageConfig& stage) {
        begin(stage.id);
        const std::string name = to_string(stage.id);
        const fs::path dir = fs::path("stages") / name;
        if (!result.state.large_model) throw StageError(name + " needs a large model");

        // Pseudo labels always come from the latest large model.
        const DatasetManifest target = load_manifest(config.target_manifest);
        ++result.detector_calls;
        generate_pseudo_labels(*result.state.large_model, target, config.detector, config.workdir, dir / "pseudo");
        result.state.snapshots[name] = {(dir / "pseudo").generic_string(), *result.state.large_model,
                                        (dir / "augmented").generic_string(), (dir / "bundle.json").generic_string()};
        checkpoint();

        const StageBundle bundle = prepare_stage(config, result.state, stage, crops(), dir / "pseudo", dir);
        const auto& base = stage.role == ModelRole::Large ? result.state.large_model : result.state.small_model;
        const std::string model = train(stage, base, bundle.train_manifest.generic_string(),
                                        bundle.provenance_dir.generic_string());
        (stage.role == ModelRole::Large ? result.state.large_model : result.state.small_model) = model;

        json report = read_json(config.workdir / dir / "bundle.json");
        report["pseudo_generated_by"] = result.state.snapshots[name].generated_by;
        report["model"] = model;
        report["eval"] = evaluate(model, dir);
        finish(stage.id, std::move(report));
    }

    bool stop_here(StageId id) const { return options.stop_after && *options.stop_after == id; }

    PipelineResult run() {
        std::error_code ec;
        fs::create_directories(config.workdir, ec);
        if (fs::exists(state_path())) {
            result.state = load_state(state_path());
            if (result.state.seed != config.seed) throw StageError("workdir state was created with another seed");
        } else {
            result.state.seed = config.seed;
        }

        std::vector<StageId> order{StageId::S1Large};
        if (config.train_small_source || config.small_source_model) order.push_back(StageId::S1Small);
        const auto adaptive = adaptive_stages(config.epochs, config.weights, config.lr_adapt);
        for (const auto& s : adaptive) order.push_back(s.id);

        for (StageId id : order) {
            if (result.state.is_completed(id)) continue;
            try {
                if (id == StageId::S1Large) {
                    source_stage(id, ModelRole::Large, config.large_source_model);
                } else if (id == StageId::S1Small) {
                    source_stage(id, ModelRole::Small, config.train_small_source ? std::nullopt : config.small_source_model);
                } else {
                    adaptive_stage(*std::find_if(adaptive.begin(), adaptive.end(),
                                                 [&](const StageConfig& s) { return s.id == id; }));
                }
            } catch (const StageError&) {
                throw;
            } catch (const Error& e) {
                throw StageError("stage " + to_string(id) + " failed: " + e.what());
            }
            if (stop_here(id)) return std::move(result);
        }
        result.finished = true;
        result.final_model = result.state.small_model;
        return std::move(result);
    }
};

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config, const RunOptions& options) {
    config.validate();
    Runner runner{config, options, {}, std::nullopt};
    return runner.run();
}

}  // namespace nsn
