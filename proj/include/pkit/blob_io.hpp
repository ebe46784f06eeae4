#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace pkit {

// Little-endian float32 blobs shared by the model and checkpoint formats.
void write_f32_blob(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_f32_blob(const std::filesystem::path& path);

// Whole-file helpers; errors carry the path.
std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const uint8_t> bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace pkit
