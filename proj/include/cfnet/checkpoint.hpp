#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cfnet/autodiff.hpp"
#include "cfnet/channel.hpp"  // FormatError

namespace cfnet {

// Parameter checkpoint: magic "CFTH", version u32, tensor count u32, then per
// tensor: name length u32 + UTF-8 name, rank u32 + dims u32, f64 entries LE.
namespace detail {
constexpr char kCheckpointMagic[4] = {'C', 'F', 'T', 'H'};
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace detail

inline void save_checkpoint(const std::map<std::string, ad::Tensor>& tensors,
                            const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("checkpoint: cannot open for write: " + path);
  os.write(detail::kCheckpointMagic, 4);
  detail::write_u32(os, detail::kCheckpointVersion);
  detail::write_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape)
      detail::write_u32(os, static_cast<std::uint32_t>(d));
    for (double v : t.data) detail::write_f64(os, v);
  }
  if (!os) throw FormatError("checkpoint: write failure: " + path);
}

inline std::map<std::string, ad::Tensor> load_checkpoint(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4) ||
      std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic at byte 0");
  if (detail::read_u32(is, "version") != detail::kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version");
  const std::uint32_t count = detail::read_u32(is, "tensor count");
  std::map<std::string, ad::Tensor> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t name_len = detail::read_u32(is, "name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len))
      throw FormatError("checkpoint: truncated name at byte " +
                        std::to_string(is.tellg()));
    const std::uint32_t rank = detail::read_u32(is, "rank");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = detail::read_u32(is, "dim");
    ad::Tensor t(shape);
    std::streamoff offset = is.tellg();
    for (auto& v : t.data) {
      v = detail::read_f64(is, offset);
      offset += 8;
    }
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace cfnet
