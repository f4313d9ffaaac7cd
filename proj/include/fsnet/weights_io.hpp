#pragma once

// Weights container, little-endian throughout:
//   "FSNT" | u32 version (=1) | u32 tensor count
//   per tensor: u16 name length | UTF-8 name | u8 dtype (0 = f64, 1 = f32) | u8 rank
//               | u32 dims[rank] | raw values

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "fsnet/error.hpp"
#include "fsnet/network.hpp"

namespace fsnet {

enum class DType : std::uint8_t { f64 = 0, f32 = 1 };

struct StoredTensor {
  std::string name;
  DType dtype = DType::f64;
  std::vector<std::uint32_t> dims;
  std::vector<double> values;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

inline constexpr std::uint32_t kWeightsVersion = 1;

namespace detail {

template <typename U>
void put_le(std::ostream& os, U v) {
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf, sizeof(U));
}

template <typename U>
U get_le(std::istream& is, const char* what) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw FormatError(std::string("weights file truncated while reading ") + what);
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void write_tensors(std::ostream& os, const std::vector<StoredTensor>& tensors) {
  os.write("FSNT", 4);
  detail::put_le<std::uint32_t>(os, kWeightsVersion);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xFFFF) throw FormatError("tensor name too long: " + t.name);
    if (t.dims.size() > 0xFF) throw FormatError("tensor rank too large: " + t.name);
    if (t.element_count() != t.values.size()) {
      throw ShapeError("tensor " + t.name + " has " + std::to_string(t.values.size()) +
                       " values for " + std::to_string(t.element_count()) + " elements");
    }
    detail::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.dtype));
    detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) detail::put_le<std::uint32_t>(os, d);
    for (double v : t.values) {
      if (t.dtype == DType::f64) {
        detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
      } else {
        detail::put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      }
    }
  }
  if (!os) throw Error("failed writing weights stream");
}

inline std::vector<StoredTensor> read_tensors(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "FSNT", 4) != 0) {
    throw FormatError("not a weights file (bad magic)");
  }
  const auto version = detail::get_le<std::uint32_t>(is, "version");
  if (version != kWeightsVersion) {
    throw FormatError("unsupported weights version " + std::to_string(version));
  }
  const auto count = detail::get_le<std::uint32_t>(is, "tensor count");
  std::vector<StoredTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    const auto len = detail::get_le<std::uint16_t>(is, "name length");
    t.name.resize(len);
    if (len && !is.read(t.name.data(), len)) throw FormatError("weights file truncated in name");
    const auto dtype = detail::get_le<std::uint8_t>(is, "dtype");
    if (dtype > 1) throw FormatError("tensor " + t.name + ": unknown dtype " + std::to_string(dtype));
    t.dtype = static_cast<DType>(dtype);
    const auto rank = detail::get_le<std::uint8_t>(is, "rank");
    for (std::uint8_t r = 0; r < rank; ++r) t.dims.push_back(detail::get_le<std::uint32_t>(is, "dims"));
    const std::size_t n = t.element_count();
    t.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      if (t.dtype == DType::f64) {
        t.values[k] = std::bit_cast<double>(detail::get_le<std::uint64_t>(is, "tensor data"));
      } else {
        t.values[k] = std::bit_cast<float>(detail::get_le<std::uint32_t>(is, "tensor data"));
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// NetworkParams <-> named tensors

namespace detail {

template <typename T>
constexpr DType dtype_of() {
  return sizeof(T) == 4 ? DType::f32 : DType::f64;
}

template <typename T, typename Range>
StoredTensor stored(std::string name, std::vector<std::uint32_t> dims, const Range& values) {
  StoredTensor t{std::move(name), dtype_of<T>(), std::move(dims), {}};
  t.values.assign(values.begin(), values.end());
  return t;
}

inline StoredTensor stored_config(std::string name, std::vector<double> values) {
  StoredTensor t{std::move(name), DType::f64, {static_cast<std::uint32_t>(values.size())}, {}};
  t.values = std::move(values);
  return t;
}

inline std::uint32_t u32(std::size_t v) { return static_cast<std::uint32_t>(v); }

}  // namespace detail

template <typename T>
std::vector<StoredTensor> to_stored(const NetworkParams<T>& p) {
  using detail::u32;
  std::vector<StoredTensor> out;
  out.push_back(detail::stored_config(
      "config.lrn", {static_cast<double>(p.lrn.depth_radius), p.lrn.bias_k, p.lrn.alpha, p.lrn.beta}));
  out.push_back(detail::stored_config(
      "config.pool", {static_cast<double>(p.pool.kernel), static_cast<double>(p.pool.stride)}));
  out.push_back(detail::stored_config(
      "config.roi", {static_cast<double>(p.roi.bins), static_cast<double>(p.roi.samples),
                     static_cast<double>(p.roi.placement)}));
  out.push_back(detail::stored_config("config.fc", {p.fc_relu ? 1.0 : 0.0, p.dropout_rate}));
  for (std::size_t i = 0; i < p.convs.size(); ++i) {
    const auto& c = p.convs[i];
    const auto& s = c.weight.shape();
    const std::string base = "conv" + std::to_string(i + 1);
    out.push_back(detail::stored_config(base + ".geometry", {static_cast<double>(c.stride),
                                                              static_cast<double>(c.pad)}));
    out.push_back(detail::stored<T>(base + ".weight", {u32(s.n), u32(s.c), u32(s.h), u32(s.w)},
                                    c.weight.values()));
    out.push_back(detail::stored<T>(base + ".bias", {u32(c.bias.size())}, c.bias));
  }
  auto fc = [&](const std::string& base, const FcLayer<T>& f) {
    out.push_back(detail::stored<T>(base + ".weight", {u32(f.weight.rows()), u32(f.weight.cols())},
                                    f.weight.values()));
    out.push_back(detail::stored<T>(base + ".bias", {u32(f.bias.size())}, f.bias));
  };
  for (std::size_t i = 0; i < p.fcs.size(); ++i) fc("fc" + std::to_string(i + 1), p.fcs[i]);
  for (std::size_t i = 0; i < p.heads.size(); ++i) fc("head" + std::to_string(i), p.heads[i]);
  return out;
}

template <typename T = double>
NetworkParams<T> from_stored(const std::vector<StoredTensor>& tensors) {
  std::map<std::string, const StoredTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  auto get = [&](const std::string& name, std::size_t rank) -> const StoredTensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("weights file lacks tensor " + name);
    if (it->second->dims.size() != rank) {
      throw FormatError("tensor " + name + " has rank " + std::to_string(it->second->dims.size()) +
                        ", expected " + std::to_string(rank));
    }
    return *it->second;
  };
  auto cfg = [&](const std::string& name, std::size_t n) {
    const auto& t = get(name, 1);
    if (t.values.size() != n) throw FormatError("tensor " + name + " has the wrong length");
    return t.values;
  };
  auto cast = [](const std::vector<double>& v) { return std::vector<T>(v.begin(), v.end()); };

  NetworkParams<T> p;
  const auto lrn = cfg("config.lrn", 4);
  p.lrn = LrnConfig{static_cast<std::size_t>(lrn[0]), lrn[1], lrn[2], lrn[3]};
  const auto pool = cfg("config.pool", 2);
  p.pool = PoolConfig{static_cast<std::size_t>(pool[0]), static_cast<std::size_t>(pool[1])};
  const auto roi = cfg("config.roi", 3);
  p.roi = RoiAlignConfig{static_cast<std::size_t>(roi[0]), static_cast<std::size_t>(roi[1]),
                         static_cast<SamplePlacement>(static_cast<int>(roi[2]))};
  const auto fc = cfg("config.fc", 2);
  p.fc_relu = fc[0] != 0.0;
  p.dropout_rate = fc[1];

  for (std::size_t i = 1; by_name.count("conv" + std::to_string(i) + ".weight"); ++i) {
    const std::string base = "conv" + std::to_string(i);
    const auto geo = cfg(base + ".geometry", 2);
    const auto& w = get(base + ".weight", 4);
    const auto& b = get(base + ".bias", 1);
    if (b.dims[0] != w.dims[0]) throw FormatError(base + ": bias length mismatch");
    p.convs.push_back(ConvLayer<T>{Tensor<T>(Shape{w.dims[0], w.dims[1], w.dims[2], w.dims[3]},
                                             cast(w.values)),
                                   cast(b.values), static_cast<std::size_t>(geo[0]),
                                   static_cast<std::size_t>(geo[1])});
  }
  auto load_fc = [&](const std::string& base) {
    const auto& w = get(base + ".weight", 2);
    const auto& b = get(base + ".bias", 1);
    if (b.dims[0] != w.dims[0]) throw FormatError(base + ": bias length mismatch");
    return FcLayer<T>{Matrix<T>(w.dims[0], w.dims[1], cast(w.values)), cast(b.values)};
  };
  for (std::size_t i = 1; by_name.count("fc" + std::to_string(i) + ".weight"); ++i) {
    p.fcs.push_back(load_fc("fc" + std::to_string(i)));
  }
  for (std::size_t i = 0; by_name.count("head" + std::to_string(i) + ".weight"); ++i) {
    p.heads.push_back(load_fc("head" + std::to_string(i)));
  }
  if (p.convs.empty() || p.heads.empty()) throw FormatError("weights file has no layers");
  return p;
}

template <typename T>
void save_weights(const std::string& path, const NetworkParams<T>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_tensors(os, to_stored(params));
}

template <typename T = double>
NetworkParams<T> load_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open weights file " + path);
  return from_stored<T>(read_tensors(is));
}

}  // namespace fsnet
