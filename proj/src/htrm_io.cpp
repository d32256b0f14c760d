#include "trkp/htrm_io.hpp"

#include <sstream>

namespace trkp {

void write_weights_manifest(const std::string& path, const RelevanceWeights& weights,
                            const std::vector<std::string>& comments) {
  CsvWriter csv(path);
  for (const std::string& c : comments) csv.comment(c);
  csv.row({"domain_id", "image_index", "w", "alpha"});
  for (const auto& [key, e] : weights.entries)
    csv.row({key.first, std::to_string(key.second), std::to_string(e.w), fmt_g(e.alpha, 12)});
}

RelevanceWeights read_weights_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("read_weights_manifest: cannot open " + path);
  RelevanceWeights out;
  std::string line;
  bool saw_header = false;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!saw_header) {
      if (cells.size() != 4 || cells[0] != "domain_id")
        throw ParseError("weights manifest " + path + ": bad header at line " +
                         std::to_string(lineno));
      saw_header = true;
      continue;
    }
    if (cells.size() != 4)
      throw ParseError("weights manifest " + path + ": expected 4 columns at line " +
                       std::to_string(lineno));
    try {
      RelevanceEntry e;
      e.w = std::stoi(cells[2]);
      e.alpha = std::stod(cells[3]);
      out.entries[{cells[0], std::stoi(cells[1])}] = e;
    } catch (const std::exception&) {
      throw ParseError("weights manifest " + path + ": malformed number at line " +
                       std::to_string(lineno));
    }
  }
  if (!saw_header) throw ParseError("weights manifest " + path + ": missing header row");
  return out;
}

}  // namespace trkp
