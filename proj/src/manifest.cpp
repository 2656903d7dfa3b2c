#include "nsn/manifest.hpp"

#include <fstream>
#include <set>

#include "nsn/annotations.hpp"
#include "nsn/error.hpp"
#include "nsn/image_io.hpp"
#include "nsn/parallel.hpp"

namespace nsn {

namespace fs = std::filesystem;

fs::path DatasetManifest::image_path(std::size_t i) const {
    const auto& p = entries.at(i).image;
    return p.is_absolute() ? p : root / p;
}

std::optional<fs::path> DatasetManifest::label_path(std::size_t i) const {
    const auto& l = entries.at(i).label;
    if (!l) return std::nullopt;
    return l->is_absolute() ? *l : root / *l;
}

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

std::string to_string(Domain d) {
    switch (d) {
        case Domain::Source: return "source";
        case Domain::Target: return "target";
        case Domain::TargetAugmented: return "target-augmented";
    }
    return "source";
}

namespace {

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw InputError("unknown split '" + s + "'");
}

Domain domain_from_string(const std::string& s) {
    if (s == "source") return Domain::Source;
    if (s == "target") return Domain::Target;
    if (s == "target-augmented") return Domain::TargetAugmented;
    throw InputError("unknown domain '" + s + "'");
}

}  // namespace

nlohmann::ordered_json to_json(const DatasetManifest& m) {
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    for (const auto& e : m.entries) {
        nlohmann::ordered_json je;
        je["image"] = e.image.generic_string();
        if (e.label)
            je["label"] = e.label->generic_string();
        else
            je["label"] = nullptr;
        entries.push_back(std::move(je));
    }
    nlohmann::ordered_json j;
    j["root"] = m.root.generic_string();
    j["split"] = to_string(m.split);
    j["domain"] = to_string(m.domain);
    j["entries"] = std::move(entries);
    return j;
}

DatasetManifest manifest_from_json(const nlohmann::ordered_json& j, const fs::path& base_dir) {
    DatasetManifest m;
    try {
        m.root = j.value("root", std::string{});
        if (m.root.is_relative() && !base_dir.empty()) m.root = (base_dir / m.root).lexically_normal();
        m.split = split_from_string(j.value("split", std::string("train")));
        m.domain = domain_from_string(j.value("domain", std::string("source")));
        for (const auto& je : j.at("entries")) {
            ManifestEntry e;
            e.image = je.at("image").get<std::string>();
            if (je.contains("label") && !je["label"].is_null()) e.label = fs::path(je["label"].get<std::string>());
            m.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::ordered_json::exception& e) {
        throw InputError(std::string("malformed manifest: ") + e.what());
    }
    return m;
}

DatasetManifest load_manifest(const fs::path& path) {
    if (!fs::exists(path)) throw NotFoundError(path);
    std::ifstream in(path);
    nlohmann::ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::ordered_json::exception& e) {
        throw ParseError(path, 1, e.what());
    }
    return manifest_from_json(j, fs::absolute(path).parent_path());
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << to_json(m).dump(2) << '\n';
}

ValidationReport validate_dataset(const DatasetManifest& manifest, unsigned jobs) {
    struct EntryResult {
        std::vector<ValidationIssue> issues;
        std::vector<LabeledBox> boxes;
    };
    std::vector<EntryResult> results(manifest.size());

    parallel_for(manifest.size(), jobs, [&](std::size_t i) {
        auto& r = results[i];
        const fs::path img = manifest.image_path(i);
        std::optional<ImageSize> size;
        if (!fs::exists(img)) {
            r.issues.push_back({i, img.string(), "missing-image", "image file does not exist"});
        } else {
            try {
                size = read_image(img).size();
            } catch (const Error& e) {
                r.issues.push_back({i, img.string(), "undecodable-image", e.what()});
            }
        }
        const auto label = manifest.label_path(i);
        if (!label) return;
        if (!fs::exists(*label)) {
            r.issues.push_back({i, label->string(), "missing-label", "label file does not exist"});
            return;
        }
        try {
            r.boxes = load_labels(*label, size);
        } catch (const Error& e) {
            r.issues.push_back({i, label->string(), "malformed-label", e.what()});
        }
    });

    ValidationReport report;
    report.images = manifest.size();
    for (auto k : {LabelKind::GroundTruth, LabelKind::Pseudo, LabelKind::PastedTrue})
        report.boxes_per_kind[std::string(to_string(k))] = 0;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        const std::string key = manifest.image_path(i).lexically_normal().generic_string();
        if (!seen.insert(key).second)
            report.errors.push_back({i, key, "duplicate-entry", "image listed more than once"});
        for (auto& issue : results[i].issues) report.errors.push_back(std::move(issue));
        report.boxes += results[i].boxes.size();
        for (const auto& b : results[i].boxes) ++report.boxes_per_kind[std::string(to_string(b.kind))];
    }
    return report;
}

nlohmann::ordered_json to_json(const ValidationReport& r) {
    nlohmann::ordered_json errors = nlohmann::ordered_json::array();
    for (const auto& e : r.errors)
        errors.push_back({{"entry", e.entry}, {"path", e.path}, {"kind", e.kind}, {"message", e.message}});
    nlohmann::ordered_json kinds(r.boxes_per_kind);
    return nlohmann::ordered_json{{"images", r.images},
                                  {"boxes", r.boxes},
                                  {"boxes_per_kind", kinds},
                                  {"errors", r.errors.size()},
                                  {"issues", errors}};
}

}  // namespace nsn
