#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mia::cli {

struct ArtifactRef {
    std::string name;  // path relative to the work dir, or a bare input file name
    std::string sha256;
};

// Per-stage record. Holds no timestamps and no absolute paths, so identical
// inputs and settings give byte-identical manifests.
struct Manifest {
    std::string stage;
    std::string tool_version;
    nlohmann::ordered_json config;
    std::vector<ArtifactRef> inputs;    // raw files from outside the work dir
    std::vector<ArtifactRef> upstream;  // manifests of earlier stages
    std::vector<ArtifactRef> outputs;
    nlohmann::ordered_json stats = nlohmann::ordered_json::object();
};

std::string tool_version();

nlohmann::ordered_json to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j);

// Stage directory names inside the work dir.
std::filesystem::path stage_dir(const std::filesystem::path& work_dir, const std::string& stage);
std::filesystem::path manifest_path(const std::filesystem::path& work_dir, const std::string& stage);

// Digests each output (relative to work_dir), writes <stage>/manifest.json,
// and returns the manifest's own digest.
std::string write_manifest(const std::filesystem::path& work_dir, Manifest m, const std::vector<std::string>& outputs);

// Loads an upstream manifest and checks that every listed output still has the
// recorded digest. Missing manifest: upstream_missing "<artifact> artifact
// missing". Changed output: invariant_violation.
ArtifactRef require_stage(const std::filesystem::path& work_dir, const std::string& stage, const std::string& artifact);

}  // namespace mia::cli
