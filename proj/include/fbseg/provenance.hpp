#ifndef FBSEG_PROVENANCE_HPP
#define FBSEG_PROVENANCE_HPP

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace fbseg {

/// SHA-1 over "blob <size>\0<content>", as git hash-object computes it.
std::string git_blob_hash(const std::string& content);
std::string git_blob_hash_file(const std::filesystem::path& path);

/// {command, config, inputs: [{path, blob}]}. No timestamps, so identical
/// runs write identical records.
nlohmann::json provenance_record(const std::string& command, const nlohmann::json& effective_config,
                                 const std::vector<std::filesystem::path>& inputs,
                                 const std::filesystem::path& relative_to);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace fbseg

#endif  // FBSEG_PROVENANCE_HPP
