#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ilm {

struct NamedArray {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> data;
};

// Flat binary container: 8 magic bytes, u32 version, u32 array count, then
// per array a u32 name length, the name, u32 ndim, u64 dims, and the values
// as 64-bit floats. All integers and floats little-endian.
void save_checkpoint(const std::filesystem::path& path, std::span<const NamedArray> arrays);
std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path);

} // namespace ilm
