#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "emo/numerics/tensor.hpp"

namespace emo::io {

// Named tensors stored as two files next to each other:
//   <stem>.bin       concatenated little-endian IEEE doubles
//   <stem>.manifest  one line per tensor: `name dim0xdim1... offset` (offset
//                    in doubles), preceded by a `count N` header line
class Archive {
 public:
  void add(std::string name, num::Tensor t);
  const num::Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<std::pair<std::string, num::Tensor>>& entries() const { return entries_; }

  void save(const std::filesystem::path& stem) const;
  static Archive load(const std::filesystem::path& stem);

 private:
  std::vector<std::pair<std::string, num::Tensor>> entries_;
};

}  // namespace emo::io
