#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace vispe::binio {

// Little-endian IEEE-754 blobs, independent of host byte order.
void write_f32(const std::filesystem::path& path, std::span<const float> values);
void write_f64(const std::filesystem::path& path, std::span<const double> values);

std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected_count);
std::vector<double> read_f64(const std::filesystem::path& path, std::size_t expected_count);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace vispe::binio
