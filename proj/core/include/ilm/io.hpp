#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace ilm {

// Reads a CSV file into rows of string fields. Validates that the header
// matches `expected_header` exactly (after trimming) and that every row has
// the same arity. Throws InputError on missing file, ConfigError on shape.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path,
                                               const std::string& expected_header);

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

// Ensures the directory exists, creating parents as needed.
void ensure_dir(const std::filesystem::path& dir);

double parse_double(const std::string& s, const std::string& context);
long long parse_int(const std::string& s, const std::string& context);

std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& line, char sep);

// Canonical float formatting for CSV output: shortest round-trip form.
std::string format_double(double x);

// FNV-1a 64-bit hash, used to fingerprint configuration blobs in manifests.
std::uint64_t fnv1a64(const std::string& bytes);

} // namespace ilm
