#include "nsn/json_io.hpp"

#include <fstream>

#include "nsn/error.hpp"

namespace nsn {

namespace fs = std::filesystem;

nlohmann::ordered_json read_json(const fs::path& path) {
    if (!fs::exists(path)) throw NotFoundError(path);
    std::ifstream in(path);
    try {
        return nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::ordered_json::exception& e) {
        throw ParseError(path, 1, e.what());
    }
}

void write_json(const nlohmann::ordered_json& j, const fs::path& path) {
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace nsn
