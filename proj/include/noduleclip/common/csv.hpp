#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace noduleclip {

// Minimal RFC-4180 reader: quoted fields, doubled quotes, CRLF tolerated.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column, or throws ValidationError naming it.
  std::size_t column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(std::string_view text);

std::string csv_field(std::string_view value);

}  // namespace noduleclip
