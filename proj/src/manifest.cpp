#include "rainfield/manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>

namespace rainfield {

namespace {

std::string to_hex(const unsigned char* digest, unsigned len) {
    static const char* hex = "0123456789abcdef";
    std::string out(2 * len, '0');
    for (unsigned i = 0; i < len; ++i) {
        out[2 * i] = hex[digest[i] >> 4];
        out[2 * i + 1] = hex[digest[i] & 0xf];
    }
    return out;
}

struct EvpCtx {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    ~EvpCtx() { EVP_MD_CTX_free(ctx); }
};

}  // namespace

std::string sha256_bytes(const void* data, std::size_t len) {
    EvpCtx c;
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned digest_len = 0;
    if (!c.ctx || EVP_DigestInit_ex(c.ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(c.ctx, data, len) != 1 ||
        EVP_DigestFinal_ex(c.ctx, digest, &digest_len) != 1)
        throw ManifestError("sha256 digest failed");
    return to_hex(digest, digest_len);
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ManifestError("cannot open for hashing: " + path.string());
    EvpCtx c;
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned digest_len = 0;
    if (!c.ctx || EVP_DigestInit_ex(c.ctx, EVP_sha256(), nullptr) != 1)
        throw ManifestError("sha256 init failed");
    std::array<char, 1 << 16> buf;
    while (f) {
        f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        const std::streamsize got = f.gcount();
        if (got > 0 && EVP_DigestUpdate(c.ctx, buf.data(), static_cast<std::size_t>(got)) != 1)
            throw ManifestError("sha256 update failed");
    }
    if (EVP_DigestFinal_ex(c.ctx, digest, &digest_len) != 1)
        throw ManifestError("sha256 final failed");
    return to_hex(digest, digest_len);
}

void RunManifest::record_file(const std::filesystem::path& root, const std::string& relative) {
    file_hashes[relative] = sha256_file(root / relative);
}

nlohmann::json RunManifest::to_json() const {
    return nlohmann::json{{"config", config},
                          {"seed", seed},
                          {"version", version},
                          {"method_seconds", method_seconds},
                          {"files", file_hashes},
                          {"notes", notes}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
    RunManifest m;
    m.config = j.value("config", nlohmann::json::object());
    m.seed = j.value("seed", std::uint64_t{0});
    m.version = j.value("version", std::string{});
    if (j.contains("method_seconds"))
        m.method_seconds = j.at("method_seconds").get<std::map<std::string, double>>();
    if (j.contains("files"))
        m.file_hashes = j.at("files").get<std::map<std::string, std::string>>();
    if (j.contains("notes")) m.notes = j.at("notes").get<std::vector<std::string>>();
    return m;
}

void RunManifest::save(const std::filesystem::path& path) const {
    std::ofstream f(path);
    if (!f) throw ManifestError("cannot write manifest: " + path.string());
    f << to_json().dump(2) << "\n";
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ManifestError("cannot read manifest: " + path.string());
    nlohmann::json j;
    f >> j;
    return from_json(j);
}

}  // namespace rainfield
