#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace rainfield {

struct ManifestError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// SHA-256 of a file's contents, lowercase hex.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_bytes(const void* data, std::size_t len);

/// Reproducibility record for one harness run: the resolved configuration,
/// seeds, per-method timing, and a hash inventory of every written file.
struct RunManifest {
    nlohmann::json config;
    std::uint64_t seed = 0;
    std::string version = "rainfield 1.0";
    std::map<std::string, double> method_seconds;
    std::map<std::string, std::string> file_hashes;  ///< path relative to out dir
    std::vector<std::string> notes;                  ///< audits, reductions, failures

    /// Hashes `relative` under `root` and records it.
    void record_file(const std::filesystem::path& root, const std::string& relative);

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);

    void save(const std::filesystem::path& path) const;
    static RunManifest load(const std::filesystem::path& path);
};

}  // namespace rainfield
