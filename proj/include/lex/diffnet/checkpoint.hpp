#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "lex/diffnet/params.hpp"

namespace lex::diffnet {

// Layout: "LEXCKPT1" | u64 LE index length | JSON index | float32 LE blobs.
// The index lists {name, shape, offset, count}; offsets count floats from the
// start of the blob section.
inline constexpr char kCheckpointMagic[] = "LEXCKPT1";

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

namespace detail {

inline void write_u32le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32le(const unsigned char* b) {
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

}  // namespace detail

inline void save_tensors(const std::string& path, const NamedTensors& tensors) {
  nlohmann::json index;
  index["format"] = "LEXCKPT1";
  index["version"] = 1;
  index["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    index["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.size()}});
    offset += t.size();
  }
  const std::string js = index.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, 8);
  std::uint64_t len = js.size();
  detail::write_u32le(os, static_cast<std::uint32_t>(len));
  detail::write_u32le(os, static_cast<std::uint32_t>(len >> 32));
  os.write(js.data(), static_cast<std::streamsize>(js.size()));
  for (const auto& [name, t] : tensors)
    for (float v : t.storage()) detail::write_u32le(os, std::bit_cast<std::uint32_t>(v));
  if (!os) throw IoError("failed writing checkpoint " + path);
}

inline NamedTensors load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 16 || std::memcmp(buf.data(), kCheckpointMagic, 8) != 0)
    throw ParseError("not a LEXCKPT1 checkpoint: " + path);
  std::uint64_t len = detail::read_u32le(buf.data() + 8) | (std::uint64_t(detail::read_u32le(buf.data() + 12)) << 32);
  if (16 + len > buf.size()) throw ParseError("truncated checkpoint index: " + path);
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(buf.begin() + 16, buf.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad checkpoint index: ") + e.what());
  }
  const std::size_t blob = 16 + len;
  NamedTensors out;
  for (const auto& e : index.at("tensors")) {
    Shape shape = e.at("shape").get<Shape>();
    std::uint64_t off = e.at("offset").get<std::uint64_t>();
    std::uint64_t count = e.at("count").get<std::uint64_t>();
    if (count != shape_size(shape) || blob + (off + count) * 4 > buf.size())
      throw ParseError("checkpoint entry out of range", 0, e.at("name").get<std::string>());
    std::vector<float> data(count);
    for (std::uint64_t i = 0; i < count; ++i)
      data[i] = std::bit_cast<float>(detail::read_u32le(buf.data() + blob + (off + i) * 4));
    out.emplace_back(e.at("name").get<std::string>(), Tensor<float>(shape, std::move(data)));
  }
  return out;
}

/// Appends the store's values under `prefix` (e.g. "predictor/").
template <typename T>
void append_store(NamedTensors& out, const std::string& prefix, const ParamStore<T>& store) {
  for (const auto& e : store.entries()) out.emplace_back(prefix + e.name, e.var.value().template cast<float>());
}

/// Overwrites values of `store` from entries named `prefix + name`.
template <typename T>
void restore_store(const NamedTensors& in, const std::string& prefix, ParamStore<T>& store) {
  for (auto& e : store.entries()) {
    bool found = false;
    for (const auto& [name, t] : in) {
      if (name != prefix + e.name) continue;
      if (t.shape() != e.var.shape()) throw ParseError("checkpoint shape mismatch", 0, name);
      e.var.mutable_value() = t.template cast<T>();
      found = true;
      break;
    }
    if (!found) throw ParseError("checkpoint lacks parameter", 0, prefix + e.name);
  }
}

}  // namespace lex::diffnet
