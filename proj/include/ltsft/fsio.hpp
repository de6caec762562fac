// Filesystem helpers with the project's error taxonomy.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ltsft {

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);
std::string read_file_text(const std::string& path);
void write_file_text(const std::string& path, const std::string& text);
void ensure_dir(const std::string& path);
bool file_exists(const std::string& path);

}  // namespace ltsft
