#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace fader::io {

// Whole-file read; transparently gunzips paths ending in ".gz".
std::string read_file(const std::filesystem::path& path);

// Atomic replace via a temporary sibling; gzips when the path ends in ".gz".
void write_file(const std::filesystem::path& path, std::string_view content);

// Calls fn(line, 1-based line number) for each line; a trailing '\r' is dropped.
void for_each_line(std::string_view content,
                   const std::function<void(std::string_view, std::size_t)>& fn);

std::string file_sha256(const std::filesystem::path& path);

}  // namespace fader::io
