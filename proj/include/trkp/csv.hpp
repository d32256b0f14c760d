#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "trkp/error.hpp"

namespace trkp {

// Shortest-round-trip style formatting with a fixed precision so that
// equal bit patterns always print identically.
inline std::string fmt_g(double v, int digits = 10) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : os_(path) {
    if (!os_) throw ArgError("CsvWriter: cannot open " + path);
  }

  // '#'-prefixed metadata line (config hash, seed, ...)
  void comment(const std::string& text) { os_ << "# " << text << "\n"; }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os_ << ",";
      os_ << cells[i];
    }
    os_ << "\n";
  }

 private:
  std::ofstream os_;
};

}  // namespace trkp
