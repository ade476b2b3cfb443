#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace emo::app {

using Json = nlohmann::ordered_json;

// Flat table written as CSV; every row has one cell per column.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
  std::string to_csv() const;
};

std::string format_double(double v);

// SHA-1 of "blob <size>\0<content>", as git computes object ids.
std::string content_hash(std::string_view content);

struct Report {
  std::string command;
  Json doc = Json::object();
  std::map<std::string, Table> tables;

  // Writes <dir>/report.json and <dir>/<name>.csv per table. The JSON carries
  // the command name, the hash of `inputs` and the per-table row counts.
  void write(const std::filesystem::path& dir, std::string_view inputs) const;
};

}  // namespace emo::app
