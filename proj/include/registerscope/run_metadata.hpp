#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace regscope {

std::string_view tool_version() noexcept;

struct InputDigest {
    std::string role;  // flag that named the file
    std::string path;
    std::string sha256;
};

/// Provenance block attached to every output file.
struct RunMetadata {
    std::string version{tool_version()};
    std::vector<std::string> command_line;
    std::map<std::string, std::uint64_t> seeds;
    std::vector<InputDigest> inputs;
    std::optional<std::string> started_at;  // UTC, ISO 8601
    std::optional<std::string> finished_at;

    void add_input(std::string role, const std::filesystem::path& path);
};

/// Lowercase hex SHA-256 of a file's bytes. Throws DataError if unreadable.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(std::string_view bytes);

std::string utc_timestamp();

nlohmann::ordered_json to_json(const RunMetadata& metadata);

}  // namespace regscope
