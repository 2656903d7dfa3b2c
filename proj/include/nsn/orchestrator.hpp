#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsn/curriculum.hpp"
#include "nsn/difficulty.hpp"
#include "nsn/manifest.hpp"
#include "nsn/mca.hpp"

namespace nsn {

enum class StageId { S1Large, S1Small, S2_1, S2_2, S3 };
enum class ModelRole { Large, Small };
enum class FreezeDirective { ExceptNorm, None };

std::string to_string(StageId s);
StageId stage_from_string(const std::string& s);
std::string to_string(ModelRole r);
std::string to_string(FreezeDirective f);  // "except-norm" | "none"

struct LossWeights {
    double alpha = 1.0;
    double beta = 1.0;
};

/// L = L_s + alpha L_u + beta L_t. Throws InputError on non-finite or negative input.
double compose_loss(double supervised, double pseudo, double pasted_true, const LossWeights& w);

struct StageConfig {
    StageId id = StageId::S2_1;
    ModelRole role = ModelRole::Large;
    FreezeDirective freeze = FreezeDirective::ExceptNorm;
    int epochs = 30;
    LossWeights weights;
    double learning_rate = 0.002;

    void validate() const;
};

/// The adaptive periods S2.1 (frozen but norm), S2.2 (unfrozen), S3 (small, frozen but norm).
std::vector<StageConfig> adaptive_stages(int epochs, const LossWeights& w, double learning_rate);

using AdapterCommand = std::vector<std::string>;

struct PipelineConfig {
    std::filesystem::path workdir;
    std::uint64_t seed = 0;
    std::filesystem::path source_manifest;
    std::filesystem::path target_manifest;
    std::optional<std::filesystem::path> val_manifest;
    std::filesystem::path crop_manifest;
    std::optional<std::filesystem::path> external_masks;
    AdapterCommand detector;
    AdapterCommand trainer;
    std::optional<std::string> large_source_model;
    std::optional<std::string> small_source_model;
    bool train_small_source = false;
    int epochs = 30;
    int source_epochs = 50;
    LossWeights weights;
    double lr_source = 0.01;
    double lr_adapt = 0.002;
    CurriculumConfig curriculum;
    DifficultyThresholds difficulty;
    AugmentConfig augment;
    unsigned jobs = 1;

    void validate() const;
};

/// Relative paths in the JSON resolve against `base_dir`. `alpha` and `beta` are mandatory.
PipelineConfig pipeline_config_from_json(const nlohmann::ordered_json& j, const std::filesystem::path& base_dir = {});
nlohmann::ordered_json to_json(const PipelineConfig& c);

struct Snapshot {
    std::string pseudo_dir;    // workdir-relative
    std::string generated_by;  // model artifact used for inference
    std::string augmented_dir;
    std::string bundle;
};

/// Resumable progress. Paths are workdir-relative so a workdir can be moved or compared.
struct PipelineState {
    std::uint64_t seed = 0;
    std::vector<std::string> completed;
    std::optional<std::string> current;
    std::optional<std::string> large_model;
    std::optional<std::string> small_model;
    std::map<std::string, Snapshot> snapshots;

    bool is_completed(StageId s) const;
};

nlohmann::ordered_json to_json(const PipelineState& s);
PipelineState pipeline_state_from_json(const nlohmann::ordered_json& j);
void save_state(const PipelineState& s, const std::filesystem::path& path);
PipelineState load_state(const std::filesystem::path& path);

/// Runs `<argv...> <verb> --request <request>` with cwd `workdir`, stdout/stderr to `log`.
/// Returns the exit status.
int run_adapter(const AdapterCommand& argv, const std::string& verb, const std::filesystem::path& request,
                const std::filesystem::path& workdir, const std::filesystem::path& log);

/// Invokes the detector adapter once and validates its output. On success the predictions sit
/// in `out_dir` (one `<stem>.txt` per image); on failure nothing is left there and StageError
/// names the log.
void generate_pseudo_labels(const std::string& model, const DatasetManifest& target, const AdapterCommand& detector,
                            const std::filesystem::path& workdir, const std::filesystem::path& out_dir);

struct StageCounts {
    std::size_t raw = 0;
    std::size_t candidates = 0;
    std::size_t accepted = 0;
    std::size_t pasted = 0;
};

struct StageBundle {
    StageConfig stage;
    std::filesystem::path train_manifest;  // workdir-relative
    std::filesystem::path provenance_dir;  // workdir-relative
    StageCounts counts;
    nlohmann::ordered_json thresholds;
    std::uint64_t seed = 0;
};

nlohmann::ordered_json to_json(const StageBundle& b);

/// PCL correction then MCA on the snapshot in `pseudo_dir`, writing everything under
/// `stage_dir` (workdir-relative) and a `bundle.json` there. No trainer is called.
StageBundle prepare_stage(const PipelineConfig& config, const PipelineState& state, const StageConfig& stage,
                          const CropLibrary& library, const std::filesystem::path& pseudo_dir,
                          const std::filesystem::path& stage_dir);

struct RunOptions {
    std::optional<StageId> stop_after;  // checkpoint and return after this stage
};

struct PipelineResult {
    PipelineState state;
    std::vector<nlohmann::ordered_json> reports;  // stages executed in this invocation
    bool finished = false;
    std::optional<std::string> final_model;
    std::size_t trainer_calls = 0;
    std::size_t detector_calls = 0;
};

/// Executes S1 -> S2.1 -> S2.2 -> S3, resuming from `<workdir>/state.json` when present.
PipelineResult run_pipeline(const PipelineConfig& config, const RunOptions& options = {});

}  // namespace nsn
