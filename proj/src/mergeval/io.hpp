#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mergeval {

std::vector<std::byte> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::byte> data);
void write_file(const std::filesystem::path& path, const std::string& data);

// Shared numeric formatting for CSV and SVG output so both carry identical
// text for the same value.
std::string fmt_num(double v);

std::string csv_field(const std::string& s);

std::string iso8601_utc_now();

// Lowercase, non-alnum runs collapsed to '-'; used for chart filenames.
std::string slugify(const std::string& s);

std::vector<std::string> read_lines(const std::filesystem::path& path);

std::string file_sha256(const std::filesystem::path& path);

}  // namespace mergeval
