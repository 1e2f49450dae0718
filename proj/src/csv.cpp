#include "autofed/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "autofed/errors.hpp"

namespace autofed::csv {

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw IoError("cannot format number");
  return std::string(buf, end);
}

Writer::Writer(std::vector<std::string> header) : columns_(header.size()) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) buf_ += ',';
    buf_ += header[i];
  }
  buf_ += '\n';
}

Writer& Writer::cell(std::string_view s) {
  if (s.find_first_of(",\n\"") != std::string_view::npos) {
    throw IoError("csv cell contains a separator: " + std::string(s));
  }
  if (in_row_++) buf_ += ',';
  buf_ += s;
  return *this;
}

Writer& Writer::cell(double v) { return cell(format_double(v)); }

Writer& Writer::cell(std::size_t v) { return cell(std::to_string(v)); }

void Writer::end_row() {
  if (in_row_ != columns_) {
    throw IoError("csv row has " + std::to_string(in_row_) + " cells, header has " +
                  std::to_string(columns_));
  }
  buf_ += '\n';
  in_row_ = 0;
}

void Writer::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f << buf_;
  if (!f) throw IoError("cannot write " + path.string());
}

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw IoError("csv column '" + std::string(name) + "' not found");
}

Table parse(std::string_view text) {
  Table t;
  bool first = true;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      cells.emplace_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size()) throw IoError("csv row width differs from header");
      t.rows.push_back(std::move(cells));
    }
  }
  return t;
}

Table load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

double to_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw IoError("not a number: '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace autofed::csv
