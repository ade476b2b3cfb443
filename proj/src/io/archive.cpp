#include "emo/io/archive.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "emo/error.hpp"

namespace emo::io {

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

std::string dims_str(const num::Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out.empty() ? "scalar" : out;
}

num::Shape parse_dims(const std::string& text) {
  num::Shape s;
  if (text == "scalar") return s;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      s.push_back(std::stoull(part));
    } catch (const std::exception&) {
      throw IoError("archive: bad shape '" + text + "'");
    }
  }
  return s;
}

}  // namespace

void Archive::add(std::string name, num::Tensor t) {
  EMO_CHECK(!name.empty() && name.find_first_of(" \t\n") == std::string::npos, IoError,
            "archive: tensor names must be non-empty and contain no whitespace: '" + name + "'");
  EMO_CHECK(!contains(name), IoError, "archive: duplicate tensor '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(t));
}

bool Archive::contains(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return true;
  return false;
}

const num::Tensor& Archive::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw IoError("archive: no tensor named '" + name + "'");
}

void Archive::save(const std::filesystem::path& stem) const {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  std::ofstream bin(with_suffix(stem, ".bin"), std::ios::binary);
  std::ofstream man(with_suffix(stem, ".manifest"));
  EMO_CHECK(bin && man, IoError, "archive: cannot write " + stem.string());
  man << "count " << entries_.size() << "\n";
  std::size_t offset = 0;
  for (const auto& [name, t] : entries_) {
    man << name << " " << dims_str(t.shape()) << " " << offset << "\n";
    for (double v : t.data()) {
      const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(v));
      bin.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
    offset += t.size();
  }
  EMO_CHECK(bin.good() && man.good(), IoError, "archive: write failed for " + stem.string());
}

Archive Archive::load(const std::filesystem::path& stem) {
  std::ifstream man(with_suffix(stem, ".manifest"));
  std::ifstream bin(with_suffix(stem, ".bin"), std::ios::binary);
  EMO_CHECK(man && bin, IoError, "archive: cannot open " + stem.string() + ".{manifest,bin}");
  std::vector<double> values;
  for (std::uint64_t bits; bin.read(reinterpret_cast<char*>(&bits), sizeof bits);)
    values.push_back(std::bit_cast<double>(to_le(bits)));
  std::string key;
  std::size_t count = 0;
  EMO_CHECK(man >> key >> count && key == "count", IoError, "archive: manifest lacks a count header");
  Archive a;
  for (std::size_t i = 0; i < count; ++i) {
    std::string name, dims;
    std::size_t offset = 0;
    EMO_CHECK(static_cast<bool>(man >> name >> dims >> offset), IoError,
              "archive: manifest truncated at entry " + std::to_string(i));
    const num::Shape shape = parse_dims(dims);
    const std::size_t n = num::shape_numel(shape);
    EMO_CHECK(offset + n <= values.size(), IoError, "archive: tensor '" + name + "' extends past the data file");
    a.add(name, num::Tensor(shape, std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(offset),
                                                       values.begin() + static_cast<std::ptrdiff_t>(offset + n))));
  }
  return a;
}

}  // namespace emo::io
