#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lrnet/tensor.hpp"

namespace lrnet {

/// Shortest decimal text that parses back to the same value.
std::string format_real(Real value);

/// Header-first CSV output; throws Error when the file cannot be written.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);

  void row(const std::vector<std::string>& cells);
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
  std::size_t columns_;
  std::filesystem::path path_;
};

}  // namespace lrnet
