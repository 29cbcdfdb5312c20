#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "hetsyn/autograd.hpp"
#include "hetsyn/error.hpp"
#include "json.hpp"

namespace hetsyn {

// Container layout:
//   8 bytes  magic "HSYNCKPT"
//   u32      format version
//   u32      header length L
//   L bytes  JSON header: caller metadata plus "scalar" and the ordered
//            parameter table [{name, rows, cols}]
//   payload  every parameter's values, row-major, little-endian, in table order
inline constexpr char kCheckpointMagic[8] = {'H', 'S', 'Y', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written in host order and assume little-endian");

template <typename S>
constexpr const char* scalar_name() {
  return std::is_same_v<S, float> ? "f32" : "f64";
}

using Json = nlohmann::ordered_json;

template <typename S>
void save_checkpoint(const std::string& path, Json meta, const nn::ParameterList<S>& params) {
  meta["scalar"] = scalar_name<S>();
  Json table = Json::array();
  for (const auto* p : params) {
    table.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  }
  meta["parameters"] = table;
  const std::string header = meta.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "checkpoint", "cannot write " + path);
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint32_t version = kCheckpointVersion;
  const auto len = static_cast<std::uint32_t>(header.size());
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto* p : params) {
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->size() * sizeof(S)));
  }
  if (!out) throw Error(ErrorCode::IoError, "checkpoint", "short write to " + path);
}

struct CheckpointFile {
  Json meta;
  std::vector<char> payload;
};

inline CheckpointFile read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "checkpoint", "cannot open " + path);
  char magic[8];
  std::uint32_t version = 0, len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw Error(ErrorCode::FormatError, "checkpoint", path + " is not a checkpoint");
  }
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::FormatError, "checkpoint",
                "unsupported checkpoint version " + std::to_string(version));
  }
  std::string header(len, '\0');
  in.read(header.data(), len);
  CheckpointFile file;
  try {
    file.meta = Json::parse(header);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::FormatError, "checkpoint", std::string("bad header: ") + e.what());
  }
  file.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return file;
}

/// Copies the payload into `params`, which must match the stored table in
/// order, names and shapes.
template <typename S>
void restore_parameters(const CheckpointFile& file, const nn::ParameterList<S>& params) {
  if (file.meta.value("scalar", "") != scalar_name<S>()) {
    throw Error(ErrorCode::FormatError, "checkpoint",
                "checkpoint scalar type is " + file.meta.value("scalar", std::string("?")));
  }
  const auto& table = file.meta.at("parameters");
  if (table.size() != params.size()) {
    throw Error(ErrorCode::FormatError, "checkpoint", "parameter count mismatch");
  }
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    if (table[i].at("name") != p.name || table[i].at("rows") != p.value.rows() ||
        table[i].at("cols") != p.value.cols()) {
      throw Error(ErrorCode::FormatError, "checkpoint",
                  "parameter " + std::to_string(i) + " ('" + p.name + "') does not match");
    }
    const std::size_t bytes = p.size() * sizeof(S);
    if (offset + bytes > file.payload.size()) {
      throw Error(ErrorCode::FormatError, "checkpoint", "payload truncated");
    }
    std::memcpy(p.value.data(), file.payload.data() + offset, bytes);
    offset += bytes;
  }
  if (offset != file.payload.size()) {
    throw Error(ErrorCode::FormatError, "checkpoint", "trailing bytes in payload");
  }
}

}  // namespace hetsyn
