#include "noduleclip/common/csv.hpp"

#include <fstream>
#include <sstream>

#include "noduleclip/common/error.hpp"

namespace noduleclip {

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw ValidationError("CSV is missing column '" + std::string(name) + "'");
}

CsvTable parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
    record.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      end_record();
    } else if (c == '\r') {
      // swallowed; the following '\n' ends the record
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (in_quotes) throw ValidationError("CSV ends inside a quoted field");
  if (!field.empty() || !record.empty()) end_record();

  CsvTable table;
  if (records.empty()) throw ValidationError("CSV has no header");
  table.header = std::move(records.front());
  if (!table.header.empty() && table.header[0].starts_with("\xEF\xBB\xBF")) table.header[0].erase(0, 3);
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != table.header.size()) {
      throw ValidationError("CSV row " + std::to_string(r - 1) + " has " + std::to_string(records[r].size()) +
                            " fields, header has " + std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(records[r]));
  }
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open CSV file: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_csv(ss.str());
}

std::string csv_field(std::string_view value) {
  if (value.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(value);
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace noduleclip
