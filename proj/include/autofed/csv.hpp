#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

// Comma-separated, header row, '.' decimal point, LF line endings. Numbers
// are written in shortest round-trip form so re-reading is exact.
namespace autofed::csv {

std::string format_double(double v);

class Writer {
public:
  explicit Writer(std::vector<std::string> header);

  Writer& cell(std::string_view s);
  Writer& cell(double v);
  Writer& cell(std::size_t v);
  void end_row();

  const std::string& str() const { return buf_; }
  void save(const std::filesystem::path& path) const;

private:
  std::size_t columns_;
  std::size_t in_row_ = 0;
  std::string buf_;
};

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column; throws IoError when absent.
  std::size_t column(std::string_view name) const;
};

Table parse(std::string_view text);
Table load(const std::filesystem::path& path);
double to_double(std::string_view s);

}  // namespace autofed::csv
