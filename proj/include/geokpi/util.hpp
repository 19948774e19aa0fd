#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace geokpi::util {

/// One parsed row of a delimited text file.
using CsvRow = std::vector<std::string>;

/// Reads a comma-delimited file with a header row. Double-quoted fields may
/// contain commas; blank lines are skipped.
struct CsvTable {
  CsvRow header;
  std::vector<CsvRow> rows;

  /// Index of a header column; throws ingestion error when missing.
  std::size_t column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);
CsvRow split_csv_line(std::string_view line);
std::string csv_escape(std::string_view field);

std::string trim(std::string_view s);
double parse_double(std::string_view s, std::string_view what);

/// Parses "YYYY-MM-DDTHH:MM[:SS][Z|+hh:mm]" (also accepts a space separator)
/// into seconds since the Unix epoch, UTC.
std::int64_t parse_iso8601(std::string_view s);
std::string format_iso8601(std::int64_t epoch_seconds);

std::string read_text(const std::filesystem::path& path);
/// Writes via a sibling temporary file and rename, so readers never see a
/// partially written file.
void write_text_atomic(const std::filesystem::path& path, std::string_view content);

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view s) noexcept;

/// Derives an independent child seed from a master seed and a label.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label) noexcept;

}  // namespace geokpi::util
