#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "leal/data.hpp"

namespace leal {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

// Splits one record. Double quotes group a field; "" inside quotes is a literal quote.
std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        current += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        current += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(current));
      current.clear();
    } else {
      current += c;
    }
  }
  fields.push_back(trim(current));
  return fields;
}

std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  const char* begin = s.data();
  if (*begin == '+') ++begin;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

}  // namespace

std::string Column::cell(std::size_t row) const {
  if (kind == ColumnKind::categorical) return categories.at(codes.at(row));
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, numbers.at(row));
  return std::string(buf, ptr);
}

const Column& Table::column(const std::string& col_name) const {
  for (const auto& c : columns)
    if (c.name == col_name) return c;
  throw std::out_of_range("table '" + name + "' has no column '" + col_name + "'");
}

Table Table::select_rows(const std::vector<std::size_t>& rows) const {
  Table out{name, {}, rows.size()};
  for (const auto& c : columns) {
    Column sel{c.name, c.kind, c.categories, {}, {}};
    for (auto r : rows) {
      if (r >= n) throw std::out_of_range("row " + std::to_string(r) + " out of range for " + name);
      if (c.kind == ColumnKind::numeric)
        sel.numbers.push_back(c.numbers[r]);
      else
        sel.codes.push_back(c.codes[r]);
    }
    out.columns.push_back(std::move(sel));
  }
  return out;
}

Table parse_csv(std::istream& in, const std::string& name, const CsvOptions& options) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_fields(line);
      break;
    }
  }
  if (header.empty()) throw std::invalid_argument(name + ": empty CSV, expected a header row");

  if (!options.schema.empty()) {
    std::vector<std::string> expected;
    for (const auto& s : options.schema) expected.push_back(s.name);
    if (expected != header)
      throw std::invalid_argument(name + ": header on line " + std::to_string(line_no) +
                                  " does not match the schema");
  }

  const std::size_t m = header.size();
  std::vector<std::vector<std::string>> cells(m);
  std::vector<std::size_t> line_of_row;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    if (fields.size() != m)
      throw std::invalid_argument(name + ": line " + std::to_string(line_no) + " has " +
                                  std::to_string(fields.size()) + " fields, expected " +
                                  std::to_string(m));
    for (std::size_t j = 0; j < m; ++j) cells[j].push_back(std::move(fields[j]));
    line_of_row.push_back(line_no);
  }

  Table table{name, {}, line_of_row.size()};
  for (std::size_t j = 0; j < m; ++j) {
    Column col{header[j], ColumnKind::numeric, {}, {}, {}};
    bool force_categorical = options.categorical.count(header[j]) > 0;
    bool declared_numeric = false;
    if (!options.schema.empty()) {
      force_categorical = force_categorical || options.schema[j].kind == ColumnKind::categorical;
      declared_numeric = !force_categorical;
    }

    std::vector<double> numbers;
    bool all_numeric = !force_categorical;
    for (std::size_t i = 0; i < cells[j].size() && all_numeric; ++i) {
      if (auto v = parse_number(cells[j][i])) {
        numbers.push_back(*v);
      } else if (declared_numeric) {
        throw std::invalid_argument(name + ": column '" + header[j] + "' line " +
                                    std::to_string(line_of_row[i]) + ": cannot parse '" +
                                    cells[j][i] + "' as a number");
      } else {
        all_numeric = false;
      }
    }

    if (all_numeric) {
      col.numbers = std::move(numbers);
    } else {
      col.kind = ColumnKind::categorical;
      std::unordered_map<std::string, std::size_t> index;
      for (auto& v : cells[j]) {
        auto [it, inserted] = index.emplace(v, col.categories.size());
        if (inserted) col.categories.push_back(v);
        col.codes.push_back(it->second);
      }
    }
    table.columns.push_back(std::move(col));
  }
  return table;
}

Table load_csv(const std::string& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open CSV file '" + path + "'");
  auto name = path;
  if (auto slash = name.find_last_of('/'); slash != std::string::npos) name = name.substr(slash + 1);
  if (auto dot = name.rfind('.'); dot != std::string::npos && dot > 0) name = name.substr(0, dot);
  return parse_csv(in, name, options);
}

namespace {

std::string quote_field(const std::string& v) {
  if (v.find_first_of(",\"\n\r") == std::string::npos) return v;
  std::string out = "\"";
  for (char c : v) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

void write_csv(std::ostream& out, const Table& table) {
  for (std::size_t j = 0; j < table.m(); ++j) out << (j ? "," : "") << quote_field(table.columns[j].name);
  out << '\n';
  for (std::size_t i = 0; i < table.n; ++i) {
    for (std::size_t j = 0; j < table.m(); ++j) out << (j ? "," : "") << quote_field(table.columns[j].cell(i));
    out << '\n';
  }
}

}  // namespace leal
