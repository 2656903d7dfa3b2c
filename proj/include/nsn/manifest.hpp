#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace nsn {

enum class Split { Train, Val, Test };
enum class Domain { Source, Target, TargetAugmented };

struct ManifestEntry {
    std::filesystem::path image;
    std::optional<std::filesystem::path> label;  // nullopt: explicitly unlabeled

    bool operator==(const ManifestEntry&) const = default;
};

/// A dataset listing. Relative entry paths resolve against `root`; a relative root resolves
/// against the directory holding the manifest file.
struct DatasetManifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;
    Split split = Split::Train;
    Domain domain = Domain::Source;

    std::filesystem::path image_path(std::size_t i) const;
    std::optional<std::filesystem::path> label_path(std::size_t i) const;
    std::size_t size() const { return entries.size(); }
};

std::string to_string(Split s);
std::string to_string(Domain d);

nlohmann::ordered_json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::ordered_json& j, const std::filesystem::path& base_dir = {});

/// Loads a manifest file; a relative root becomes absolute against the file's directory.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

struct ValidationIssue {
    std::size_t entry = 0;
    std::string path;
    std::string kind;  // missing-image, undecodable-image, missing-label, malformed-label, duplicate-entry
    std::string message;
};

struct ValidationReport {
    std::size_t images = 0;
    std::size_t boxes = 0;
    std::map<std::string, std::size_t> boxes_per_kind;
    std::vector<ValidationIssue> errors;

    bool ok() const { return errors.empty(); }
};

ValidationReport validate_dataset(const DatasetManifest& manifest, unsigned jobs = 1);
nlohmann::ordered_json to_json(const ValidationReport& r);

}  // namespace nsn
