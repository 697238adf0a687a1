#include "lrnet/csv.hpp"

#include <charconv>

#include "lrnet/errors.hpp"

namespace lrnet {

std::string format_real(Real value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : out_(path), columns_(header.size()), path_(path) {
  if (!out_) throw Error("cannot write " + path.string());
  row(header);
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != columns_) {
    throw Error("csv row for " + path_.string() + " has " + std::to_string(cells.size()) + " cells, expected " +
                std::to_string(columns_));
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    out_ << cells[i];
  }
  out_ << '\n';
  if (!out_) throw Error("short write to " + path_.string());
}

}  // namespace lrnet
