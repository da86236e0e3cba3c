#include "nightlift/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "nightlift/errors.hpp"
#include "nightlift/version.hpp"

namespace nightlift {

namespace {

constexpr char kMagic[8] = {'N', 'L', 'C', 'K', 'P', 'T', '1', '\n'};

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : arrays) {
    if (n == name) return &t;
  }
  return nullptr;
}

Tensor Checkpoint::require(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw DataError("checkpoint: missing array '" + name + "'");
  return *t;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nlohmann::json header;
  header["version"] = kVersionString;
  header["kind"] = ckpt.kind;
  header["meta"] = ckpt.meta;
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& [name, tensor] : ckpt.arrays) {
    manifest.push_back({{"name", name}, {"shape", tensor.shape}});
  }
  header["arrays"] = manifest;
  const std::string header_str = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp + " for writing");
    os.write(kMagic, sizeof(kMagic));
    write_u64(os, header_str.size());
    os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, tensor] : ckpt.arrays) {
      // Doubles are stored as IEEE-754 little-endian.
      os.write(reinterpret_cast<const char*>(tensor.data.data()),
               static_cast<std::streamsize>(tensor.data.size() * sizeof(double)));
    }
    if (!os) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp + " -> " + path + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw DataError("not a nightlift checkpoint: " + path);
  }
  const std::uint64_t header_len = read_u64(is);
  std::string header_str(header_len, '\0');
  is.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw DataError("truncated checkpoint header in " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint header in " + path + ": " + e.what());
  }

  Checkpoint ckpt;
  ckpt.kind = header.value("kind", "");
  ckpt.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("arrays")) {
    const std::string name = entry.at("name").get<std::string>();
    Tensor t(entry.at("shape").get<std::vector<int>>());
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!is) throw DataError("truncated array '" + name + "' in " + path);
    ckpt.arrays.emplace_back(name, std::move(t));
  }
  return ckpt;
}

}  // namespace nightlift
