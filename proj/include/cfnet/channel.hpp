#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfnet/rng.hpp"

namespace cfnet {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Position {
  double x = 0.0, y = 0.0, z = 0.0;
};

struct Topology {
  std::vector<Position> sbs_positions;
  std::vector<Position> user_positions;
  double area_side = 0.0;
};

// Substitute statistical channel model: log-distance path loss + log-normal
// shadowing + i.i.d. Rayleigh fading. Defaults follow the simulation setup
// (2.1 GHz carrier, 25 m SBS / 1.5 m user antenna heights).
struct ChannelGenConfig {
  double carrier_freq_hz = 2.1e9;
  double pathloss_exponent = 3.0;
  double pathloss_intercept_db = 32.4 + 20.0 * 0.32221929473391986;  // log10(2.1)
  double shadowing_sigma_db = 8.0;
  std::uint64_t seed = 0;
};

struct ChannelDims {
  std::uint32_t b = 0, n = 0, i = 0, mt = 0, mr = 0;
  std::size_t entries() const {
    return std::size_t(b) * n * i * mt * mr;
  }
  bool operator==(const ChannelDims&) const = default;
};

// Complex channel coefficients for one realization, index order
// [b][n][i][tx][rx].
struct ChannelSample {
  ChannelDims dims;
  std::vector<std::complex<double>> coefficients;

  std::size_t index(std::size_t b, std::size_t n, std::size_t i,
                    std::size_t tx, std::size_t rx) const {
    return (((b * dims.n + n) * dims.i + i) * dims.mt + tx) * dims.mr + rx;
  }
  std::complex<double> at(std::size_t b, std::size_t n, std::size_t i,
                          std::size_t tx, std::size_t rx) const {
    return coefficients[index(b, n, i, tx, rx)];
  }
  std::complex<double>& at(std::size_t b, std::size_t n, std::size_t i,
                           std::size_t tx, std::size_t rx) {
    return coefficients[index(b, n, i, tx, rx)];
  }
};

struct ChannelDataset {
  ChannelDims dims;
  std::uint64_t config_fingerprint = 0;
  std::vector<ChannelSample> samples;
};

constexpr double kDefaultSbsHeightM = 25.0;
constexpr double kDefaultUserHeightM = 1.5;

inline Topology place_nodes(std::size_t b, std::size_t i, double area_side,
                            std::uint64_t seed) {
  if (b < 1 || i < 1 || !(area_side > 0.0))
    throw std::invalid_argument("place_nodes: b,i >= 1 and area_side > 0");
  Rng rng(Rng::derive(seed, 0xA11CEULL));
  Topology topo;
  topo.area_side = area_side;
  topo.sbs_positions.reserve(b);
  for (std::size_t k = 0; k < b; ++k)
    topo.sbs_positions.push_back(
        {rng.uniform(0.0, area_side), rng.uniform(0.0, area_side),
         kDefaultSbsHeightM});
  topo.user_positions.reserve(i);
  for (std::size_t k = 0; k < i; ++k)
    topo.user_positions.push_back(
        {rng.uniform(0.0, area_side), rng.uniform(0.0, area_side),
         kDefaultUserHeightM});
  return topo;
}

// Linear power gain 10^(-PL/10), PL = intercept + 10 * exponent * log10(d).
// Distances below the 1 m reference are clamped.
inline double pathloss_linear(double d3d, const ChannelGenConfig& cfg) {
  if (d3d < 1.0) d3d = 1.0;
  const double pl_db = cfg.pathloss_intercept_db +
                       10.0 * cfg.pathloss_exponent * std::log10(d3d);
  return std::pow(10.0, -pl_db / 10.0);
}

inline double distance_3d(const Position& a, const Position& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// One channel realization. Large-scale gain (path loss x log-normal
// shadowing) is shared across subcarriers and antennas per (b,i) link;
// fading is i.i.d. CN(0,1) per entry.
inline ChannelSample generate_sample(const Topology& topo,
                                     const ChannelGenConfig& cfg,
                                     const ChannelDims& dims,
                                     std::uint64_t sample_index) {
  if (dims.b != topo.sbs_positions.size() ||
      dims.i != topo.user_positions.size())
    throw std::invalid_argument("generate_sample: dims/topology mismatch");
  ChannelSample s;
  s.dims = dims;
  s.coefficients.resize(dims.entries());
  // Per-sample derived stream: results independent of generation order.
  Rng rng(Rng::derive(cfg.seed, sample_index));
  const double ln10_over_10 = std::log(10.0) / 10.0;
  for (std::uint32_t b = 0; b < dims.b; ++b) {
    for (std::uint32_t i = 0; i < dims.i; ++i) {
      const double d =
          distance_3d(topo.sbs_positions[b], topo.user_positions[i]);
      const double pl = pathloss_linear(d, cfg);
      const double shadow_db = cfg.shadowing_sigma_db * rng.normal();
      const double gain = pl * std::exp(shadow_db * ln10_over_10);
      const double amp = std::sqrt(gain);
      for (std::uint32_t n = 0; n < dims.n; ++n)
        for (std::uint32_t tx = 0; tx < dims.mt; ++tx)
          for (std::uint32_t rx = 0; rx < dims.mr; ++rx) {
            const double re = rng.normal() * 0.7071067811865475244;
            const double im = rng.normal() * 0.7071067811865475244;
            s.at(b, n, i, tx, rx) = amp * std::complex<double>(re, im);
          }
    }
  }
  return s;
}

inline std::uint64_t config_fingerprint(const ChannelGenConfig& cfg,
                                        const ChannelDims& dims) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  auto mix = [&h](std::uint64_t v) {
    for (int k = 0; k < 8; ++k) {
      h ^= (v >> (8 * k)) & 0xff;
      h *= 1099511628211ULL;
    }
  };
  auto mixd = [&](double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    mix(v);
  };
  mixd(cfg.carrier_freq_hz);
  mixd(cfg.pathloss_exponent);
  mixd(cfg.pathloss_intercept_db);
  mixd(cfg.shadowing_sigma_db);
  mix(cfg.seed);
  mix(dims.b);
  mix(dims.n);
  mix(dims.i);
  mix(dims.mt);
  mix(dims.mr);
  return h;
}

inline ChannelDataset generate_dataset(const Topology& topo,
                                       const ChannelGenConfig& cfg,
                                       const ChannelDims& dims,
                                       std::size_t sample_count) {
  ChannelDataset ds;
  ds.dims = dims;
  ds.config_fingerprint = config_fingerprint(cfg, dims);
  ds.samples.reserve(sample_count);
  for (std::size_t k = 0; k < sample_count; ++k)
    ds.samples.push_back(generate_sample(topo, cfg, dims, k));
  return ds;
}

// Per-SBS local tensors [N][I][M_t][M_r], sample order preserved.
struct LocalChannelDataset {
  ChannelDims dims;  // dims.b == 1 slice semantics; b field keeps global B
  std::uint32_t sbs_index = 0;
  std::vector<std::vector<std::complex<double>>> samples;
};

inline LocalChannelDataset slice_local(const ChannelDataset& ds,
                                       std::size_t b) {
  if (b >= ds.dims.b) throw std::out_of_range("slice_local: SBS index");
  LocalChannelDataset local;
  local.dims = ds.dims;
  local.sbs_index = static_cast<std::uint32_t>(b);
  const std::size_t per_sbs =
      std::size_t(ds.dims.n) * ds.dims.i * ds.dims.mt * ds.dims.mr;
  local.samples.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    const auto* begin = s.coefficients.data() + b * per_sbs;
    local.samples.emplace_back(begin, begin + per_sbs);
  }
  return local;
}

namespace detail {

constexpr char kDatasetMagic[4] = {'C', 'F', 'D', 'S'};
constexpr std::uint32_t kDatasetVersion = 1;

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int k = 0; k < 4; ++k) b[k] = (v >> (8 * k)) & 0xff;
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(std::string("dataset: truncated reading ") + what +
                      " at byte " + std::to_string(is.tellg()));
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
         std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

inline void write_f64(std::ostream& os, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  unsigned char b[8];
  for (int k = 0; k < 8; ++k) b[k] = (v >> (8 * k)) & 0xff;
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64(std::istream& is, std::streamoff offset) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw FormatError("dataset: truncated payload at byte " +
                      std::to_string(offset));
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= std::uint64_t(b[k]) << (8 * k);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

}  // namespace detail

// Binary format: magic "CFDS", version u32, B,N,I,M_t,M_r,sample_count as
// u32 LE, then per sample (real, imag) f64 LE pairs in [b][n][i][tx][rx]
// order.
inline void save_dataset(const ChannelDataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("dataset: cannot open for write: " + path);
  os.write(detail::kDatasetMagic, 4);
  detail::write_u32(os, detail::kDatasetVersion);
  detail::write_u32(os, ds.dims.b);
  detail::write_u32(os, ds.dims.n);
  detail::write_u32(os, ds.dims.i);
  detail::write_u32(os, ds.dims.mt);
  detail::write_u32(os, ds.dims.mr);
  detail::write_u32(os, static_cast<std::uint32_t>(ds.samples.size()));
  for (const auto& s : ds.samples)
    for (const auto& c : s.coefficients) {
      detail::write_f64(os, c.real());
      detail::write_f64(os, c.imag());
    }
  if (!os) throw FormatError("dataset: write failure: " + path);
}

inline ChannelDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("dataset: cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, detail::kDatasetMagic, 4) != 0)
    throw FormatError("dataset: bad magic at byte 0");
  const std::uint32_t version = detail::read_u32(is, "version");
  if (version != detail::kDatasetVersion)
    throw FormatError("dataset: unsupported version at byte 4");
  ChannelDataset ds;
  ds.dims.b = detail::read_u32(is, "B");
  ds.dims.n = detail::read_u32(is, "N");
  ds.dims.i = detail::read_u32(is, "I");
  ds.dims.mt = detail::read_u32(is, "M_t");
  ds.dims.mr = detail::read_u32(is, "M_r");
  const std::uint32_t count = detail::read_u32(is, "sample_count");
  const std::size_t entries = ds.dims.entries();
  if (count > 0 && entries > (std::size_t(1) << 32))
    throw FormatError("dataset: dimension overflow at byte 8");
  ds.samples.resize(count);
  std::streamoff offset = 28;
  for (auto& s : ds.samples) {
    s.dims = ds.dims;
    s.coefficients.resize(entries);
    for (auto& c : s.coefficients) {
      const double re = detail::read_f64(is, offset);
      const double im = detail::read_f64(is, offset + 8);
      c = {re, im};
      offset += 16;
    }
  }
  return ds;
}

}  // namespace cfnet
