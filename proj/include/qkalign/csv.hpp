#pragma once

#include <fstream>
#include <string>
#include <vector>

namespace qkalign {

// 17 significant digits, general notation; non-finite values as nan/inf/-inf.
std::string format_double(double value);

class CsvWriter {
 public:
  // Truncates the file and writes the header.
  CsvWriter(const std::string& path, const std::vector<std::string>& header);

  void row(const std::vector<std::string>& cells);
  std::size_t columns() const { return columns_; }

 private:
  std::ofstream out_;
  std::string path_;
  std::size_t columns_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::string& path);

}  // namespace qkalign
