#include "lflow/container.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace lflow {

namespace {

// The payload is raw float64; this store targets little-endian hosts.
static_assert(sizeof(double) == 8, "container expects 64-bit doubles");

void put_u64(std::ofstream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t get_u64(std::ifstream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_container(const std::filesystem::path& path,
                     const nlohmann::json& meta,
                     const std::vector<ArrayEntry>& arrays) {
  nlohmann::json header;
  header["meta"] = meta;
  header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : arrays) {
    std::size_t n = 1;
    for (int d : a.shape) n *= static_cast<std::size_t>(d);
    if (n != a.data.size()) {
      throw ValidationError("array shape does not match data: " + a.name);
    }
    header["arrays"].push_back({{"name", a.name},
                                {"shape", a.shape},
                                {"offset", offset},
                                {"count", a.data.size()}});
    offset += a.data.size();
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out.write(kContainerMagic, sizeof(kContainerMagic));
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : arrays) {
    out.write(reinterpret_cast<const char*>(a.data.data()),
              static_cast<std::streamsize>(a.data.size() * sizeof(double)));
  }
  if (!out) throw Error("write failed: " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open: " + path.string());
  char magic[sizeof(kContainerMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kContainerMagic, sizeof(magic)) != 0) {
    throw ValidationError("not a container file: " + path.string());
  }
  const std::uint64_t header_len = get_u64(in);
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw ValidationError("truncated container header: " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad container header: ") + e.what());
  }

  Container c;
  c.meta = header.value("meta", nlohmann::json::object());
  for (const auto& item : header.at("arrays")) {
    ArrayEntry a;
    a.name = item.at("name").get<std::string>();
    a.shape = item.at("shape").get<std::vector<int>>();
    a.data.resize(item.at("count").get<std::size_t>());
    in.read(reinterpret_cast<char*>(a.data.data()),
            static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    if (!in) throw ValidationError("truncated container payload: " + a.name);
    c.arrays.push_back(std::move(a));
  }
  return c;
}

}  // namespace lflow
