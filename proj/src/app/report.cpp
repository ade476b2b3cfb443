#include "emo/app/report.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <fstream>
#include <memory>

#include "emo/error.hpp"

namespace emo::app {

void Table::add_row(std::vector<std::string> row) {
  EMO_CHECK(row.size() == columns.size(), ShapeError,
            "table row has " + std::to_string(row.size()) + " cells, expected " + std::to_string(columns.size()));
  rows.push_back(std::move(row));
}

std::string Table::to_csv() const {
  std::string out;
  const auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(columns);
  for (const auto& r : rows) line(r);
  return out;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string content_hash(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EMO_CHECK(ctx && EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) == 1 &&
                EVP_DigestUpdate(ctx.get(), header.data(), header.size()) == 1 &&
                EVP_DigestUpdate(ctx.get(), content.data(), content.size()) == 1 &&
                EVP_DigestFinal_ex(ctx.get(), digest, &len) == 1,
            IoError, "SHA-1 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 15];
  }
  return hex;
}

void Report::write(const std::filesystem::path& dir, std::string_view inputs) const {
  std::filesystem::create_directories(dir);
  Json out = Json::object();
  out["command"] = command;
  out["input_hash"] = content_hash(inputs);
  for (const auto& [k, v] : doc.items()) out[k] = v;
  Json files = Json::object();
  for (const auto& [name, table] : tables) {
    const auto path = dir / (name + ".csv");
    std::ofstream f(path);
    f << table.to_csv();
    EMO_CHECK(f.good(), IoError, "cannot write " + path.string());
    files[name + ".csv"] = table.rows.size();
  }
  out["tables"] = files;
  std::ofstream f(dir / "report.json");
  f << out.dump(2) << '\n';
  EMO_CHECK(f.good(), IoError, "cannot write " + (dir / "report.json").string());
}

}  // namespace emo::app
