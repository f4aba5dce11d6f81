#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace poisonbench::csv {

// Comma-separated, LF line endings. Fields containing a comma, quote or
// newline are quoted with embedded quotes doubled.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::string format(const Table& table);
Table parse(std::string_view content);

// Writes through a temporary file in the same directory, then renames.
void write_file(const std::filesystem::path& path, const Table& table);
Table read_file(const std::filesystem::path& path);

// Fixed-point rendering with `places` decimals; never emits "-0.0000".
std::string fixed(double value, int places = 4);

// Atomic text write shared by every emitter.
void write_text_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_text(const std::filesystem::path& path);

}  // namespace poisonbench::csv
