#include "registerscope/run_metadata.hpp"

#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <memory>

#include "registerscope/errors.hpp"

#ifndef REGISTERSCOPE_VERSION
#define REGISTERSCOPE_VERSION "0.0.0"
#endif

namespace regscope {

namespace {

struct DigestContext {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx{EVP_MD_CTX_new(), &EVP_MD_CTX_free};

    DigestContext() {
        if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
            throw ComputeError("cannot initialise SHA-256");
        }
    }
    void update(const void* data, std::size_t size) {
        if (EVP_DigestUpdate(ctx.get(), data, size) != 1) throw ComputeError("SHA-256 update failed");
    }
    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
        unsigned int length = 0;
        if (EVP_DigestFinal_ex(ctx.get(), digest.data(), &length) != 1) throw ComputeError("SHA-256 final failed");
        static constexpr char kHex[] = "0123456789abcdef";
        std::string out;
        out.reserve(length * 2);
        for (unsigned int i = 0; i < length; ++i) {
            out += kHex[digest[i] >> 4];
            out += kHex[digest[i] & 0xF];
        }
        return out;
    }
};

}  // namespace

std::string_view tool_version() noexcept { return REGISTERSCOPE_VERSION; }

void RunMetadata::add_input(std::string role, const std::filesystem::path& path) {
    inputs.push_back(InputDigest{std::move(role), path.string(), sha256_file(path)});
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    DigestContext digest;
    std::array<char, 1 << 16> buffer{};
    while (in) {
        in.read(buffer.data(), buffer.size());
        if (in.gcount() > 0) digest.update(buffer.data(), static_cast<std::size_t>(in.gcount()));
    }
    if (in.bad()) throw DataError("read failed for " + path.string());
    return digest.hex();
}

std::string sha256_hex(std::string_view bytes) {
    DigestContext digest;
    digest.update(bytes.data(), bytes.size());
    return digest.hex();
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::array<char, 32> buffer{};
    std::strftime(buffer.data(), buffer.size(), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buffer.data();
}

nlohmann::ordered_json to_json(const RunMetadata& metadata) {
    nlohmann::ordered_json out;
    out["tool"] = "registerscope";
    out["version"] = metadata.version;
    out["command_line"] = metadata.command_line;
    out["seeds"] = nlohmann::ordered_json::object();
    for (const auto& [name, seed] : metadata.seeds) out["seeds"][name] = seed;
    out["inputs"] = nlohmann::ordered_json::array();
    for (const auto& input : metadata.inputs) {
        out["inputs"].push_back({{"role", input.role}, {"path", input.path}, {"sha256", input.sha256}});
    }
    if (metadata.started_at) out["started_at"] = *metadata.started_at;
    if (metadata.finished_at) out["finished_at"] = *metadata.finished_at;
    return out;
}

}  // namespace regscope
