#include "qlayout/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "qlayout/error.hpp"

namespace qlayout {

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write '" + path + "'");
  out << text;
}

std::string layout_to_json(const Layout& layout) {
  nlohmann::json j;
  j["n"] = layout.num_logical();
  j["N"] = layout.num_physical;
  j["assign"] = layout.assign;
  return j.dump();
}

Layout layout_from_json(const std::string& text) {
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    Layout layout(j.at("N").get<int>(), j.at("assign").get<std::vector<PhysicalQubit>>());
    if (j.contains("n") && j.at("n").get<int>() != layout.num_logical()) {
      throw ParseError("layout field n disagrees with the assign array length");
    }
    return layout;
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("layout JSON: ") + ex.what());
  }
}

void save_layout(const std::string& path, const Layout& layout) {
  write_text_file(path, layout_to_json(layout) + "\n");
}

Layout load_layout(const std::string& path) { return layout_from_json(read_text_file(path)); }

int CsvTable::column(const std::string& name) const {
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == name) return static_cast<int>(c);
  }
  return -1;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

CsvTable parse_csv(const std::string& text) {
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<std::string> fields = split_fields(trim(line));
    if (table.header.empty()) {
      table.header = std::move(fields);
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw ParseError("CSV row has " + std::to_string(fields.size()) + " fields, header has " +
                           std::to_string(table.header.size()),
                       lineno);
    }
    table.rows.push_back(std::move(fields));
    table.row_lines.push_back(lineno);
  }
  return table;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "";
  if (v == std::floor(v) && std::abs(v) < 1e15) {
    std::ostringstream ss;
    ss << static_cast<long long>(v);
    return ss.str();
  }
  std::ostringstream ss;
  ss.precision(10);
  ss << v;
  return ss.str();
}

}  // namespace qlayout
