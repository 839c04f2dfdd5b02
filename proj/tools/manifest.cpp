#include "manifest.hpp"

#include "mia/digest.hpp"
#include "mia/error.hpp"

#include <fstream>
#include <sstream>

#ifndef MIA_VERSION
#define MIA_VERSION "0.0.0"
#endif

namespace mia::cli {

namespace {

nlohmann::ordered_json refs_json(const std::vector<ArtifactRef>& refs) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : refs) arr.push_back({{"name", r.name}, {"sha256", r.sha256}});
    return arr;
}

std::vector<ArtifactRef> refs_from(const nlohmann::json& j) {
    std::vector<ArtifactRef> out;
    for (const auto& r : j) out.push_back({r.at("name").get<std::string>(), r.at("sha256").get<std::string>()});
    return out;
}

}  // namespace

std::string tool_version() { return MIA_VERSION; }

nlohmann::ordered_json to_json(const Manifest& m) {
    return {{"stage", m.stage},
            {"tool_version", m.tool_version},
            {"config", m.config},
            {"inputs", refs_json(m.inputs)},
            {"upstream", refs_json(m.upstream)},
            {"outputs", refs_json(m.outputs)},
            {"stats", m.stats}};
}

Manifest manifest_from_json(const nlohmann::json& j) {
    Manifest m;
    m.stage = j.at("stage").get<std::string>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.config = j.at("config");
    m.inputs = refs_from(j.at("inputs"));
    m.upstream = refs_from(j.at("upstream"));
    m.outputs = refs_from(j.at("outputs"));
    m.stats = j.value("stats", nlohmann::ordered_json::object());
    return m;
}

std::filesystem::path stage_dir(const std::filesystem::path& work_dir, const std::string& stage) {
    return work_dir / stage;
}

std::filesystem::path manifest_path(const std::filesystem::path& work_dir, const std::string& stage) {
    return stage_dir(work_dir, stage) / "manifest.json";
}

std::string write_manifest(const std::filesystem::path& work_dir, Manifest m, const std::vector<std::string>& outputs) {
    m.tool_version = tool_version();
    m.outputs.clear();
    for (const auto& rel : outputs) m.outputs.push_back({rel, sha256_file(work_dir / rel)});
    const auto text = to_json(m).dump(2) + "\n";
    const auto path = manifest_path(work_dir, m.stage);
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io_error, "cannot write " + path.string());
    out << text;
    if (!out) fail(ErrorCode::io_error, "short write to " + path.string());
    return sha256_hex(text);
}

ArtifactRef require_stage(const std::filesystem::path& work_dir, const std::string& stage, const std::string& artifact) {
    const auto path = manifest_path(work_dir, stage);
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::upstream_missing, artifact + " artifact missing: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    const auto text = ss.str();
    Manifest m;
    try {
        m = manifest_from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::schema_mismatch, path.string() + ": " + e.what());
    }
    for (const auto& o : m.outputs) {
        const auto p = work_dir / o.name;
        if (!std::filesystem::exists(p)) fail(ErrorCode::upstream_missing, artifact + " artifact missing: " + p.string());
        if (sha256_file(p) != o.sha256) {
            fail(ErrorCode::invariant_violation, p.string() + " no longer matches its " + stage + " manifest digest");
        }
    }
    return {stage + "/manifest.json", sha256_hex(text)};
}

}  // namespace mia::cli
