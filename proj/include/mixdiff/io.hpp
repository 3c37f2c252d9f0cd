#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace mixdiff {

std::string read_file(const std::filesystem::path& path);

// Writes to `<path>.tmp` and renames over `path`, so readers never observe a
// partially written file. Parent directories are created.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace mixdiff
