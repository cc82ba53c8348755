#pragma once

#include <string>
#include <vector>

#include "qlayout/objective.hpp"

namespace qlayout {

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

// {"n": n, "N": N, "assign": [...]}
std::string layout_to_json(const Layout& layout);
Layout layout_from_json(const std::string& text);
void save_layout(const std::string& path, const Layout& layout);
Layout load_layout(const std::string& path);

/// Minimal CSV reader: comma separated, no quoting. Blank lines are skipped;
/// every row must have as many fields as the header.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> row_lines;  // 1-based source line of each row

  int column(const std::string& name) const;  // -1 when absent
};

CsvTable parse_csv(const std::string& text);

// Shortest representation that round-trips integers exactly.
std::string format_number(double v);

}  // namespace qlayout
