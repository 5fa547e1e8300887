#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace mdpo {

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace mdpo
