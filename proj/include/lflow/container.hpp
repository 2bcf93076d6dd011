#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lflow/tensor.hpp"

namespace lflow {

// Self-describing binary store: the magic string "LFLOW1", a little-endian
// uint64 header length, a JSON header naming every array's shape and offset,
// then the raw float64 payload. Used for checkpoints and sample stores.
inline constexpr char kContainerMagic[6] = {'L', 'F', 'L', 'O', 'W', '1'};

struct ArrayEntry {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;
};

struct Container {
  nlohmann::json meta;
  std::vector<ArrayEntry> arrays;

  const ArrayEntry& at(const std::string& name) const {
    for (const auto& a : arrays) {
      if (a.name == name) return a;
    }
    throw ValidationError("container has no array named: " + name);
  }
  bool has(const std::string& name) const {
    for (const auto& a : arrays) {
      if (a.name == name) return true;
    }
    return false;
  }
};

void write_container(const std::filesystem::path& path,
                     const nlohmann::json& meta,
                     const std::vector<ArrayEntry>& arrays);

Container read_container(const std::filesystem::path& path);

}  // namespace lflow
