// SPDX-License-Identifier: Apache-2.0
#include "raw_io.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace pwtk {

namespace {

constexpr char kMagic[4] = {'P', 'W', 'T', 'K'};
constexpr std::uint32_t kVersion = 1;

// The build targets little-endian hosts; serialization is memcpy-based.
static_assert(std::endian::native == std::endian::little, "raw format writer assumes a little-endian host");

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  require(pos + sizeof(T) <= in.size(), ErrKind::format, "raw tensor stream truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

template <typename T>
std::vector<std::uint8_t> write_raw_impl(const TensorT<T>& t, const RawMeta& meta, std::uint32_t dtype) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + 8 * t.rank() + 32 + sizeof(T) * t.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, dtype);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.dims()) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  for (double s : meta.spacing) put<double>(out, s);
  put<double>(out, meta.dt);
  const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
  out.insert(out.end(), p, p + sizeof(T) * t.size());
  return out;
}

template <typename T>
TensorT<T> read_payload(const std::vector<std::uint8_t>& in, std::size_t& pos, const std::vector<std::size_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  require(pos + sizeof(T) * n <= in.size(), ErrKind::format, "raw tensor payload truncated");
  std::vector<T> data(n);
  std::memcpy(data.data(), in.data() + pos, sizeof(T) * n);
  pos += sizeof(T) * n;
  return TensorT<T>(dims, std::move(data));
}

}  // namespace

std::vector<std::uint8_t> write_raw(const Tensor& t, const RawMeta& meta) { return write_raw_impl(t, meta, 0); }
std::vector<std::uint8_t> write_raw(const TensorD& t, const RawMeta& meta) { return write_raw_impl(t, meta, 1); }

RawTensor read_raw(const std::vector<std::uint8_t>& bytes, RawMeta* meta_out) {
  require(bytes.size() >= 16, ErrKind::format, "raw tensor stream too short");
  require(std::memcmp(bytes.data(), kMagic, 4) == 0, ErrKind::format, "bad raw tensor magic");
  std::size_t pos = 4;
  const auto version = take<std::uint32_t>(bytes, pos);
  require(version == kVersion, ErrKind::format, "unsupported raw tensor version");
  const auto dtype = take<std::uint32_t>(bytes, pos);
  require(dtype <= 1, ErrKind::format, "unknown raw tensor dtype");
  const auto rank = take<std::uint32_t>(bytes, pos);
  require(rank >= 1 && rank <= kMaxRank, ErrKind::format, "raw tensor rank out of range");
  std::vector<std::size_t> dims(rank);
  for (auto& d : dims) {
    d = static_cast<std::size_t>(take<std::uint64_t>(bytes, pos));
    require(d >= 1, ErrKind::format, "raw tensor extent must be >= 1");
  }
  RawMeta meta;
  for (double& s : meta.spacing) s = take<double>(bytes, pos);
  meta.dt = take<double>(bytes, pos);
  if (meta_out) *meta_out = meta;
  if (dtype == 0) {
    auto t = read_payload<float>(bytes, pos, dims);
    require(pos == bytes.size(), ErrKind::format, "trailing bytes after raw tensor payload");
    return t;
  }
  auto t = read_payload<double>(bytes, pos, dims);
  require(pos == bytes.size(), ErrKind::format, "trailing bytes after raw tensor payload");
  return t;
}

Tensor read_raw_f32(const std::vector<std::uint8_t>& bytes, RawMeta* meta_out) {
  auto r = read_raw(bytes, meta_out);
  require(std::holds_alternative<Tensor>(r), ErrKind::unsupported, "expected a single-precision raw tensor");
  return std::get<Tensor>(std::move(r));
}

TensorD read_raw_f64(const std::vector<std::uint8_t>& bytes, RawMeta* meta_out) {
  auto r = read_raw(bytes, meta_out);
  require(std::holds_alternative<TensorD>(r), ErrKind::unsupported, "expected a double-precision raw tensor");
  return std::get<TensorD>(std::move(r));
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrKind::io, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  if (auto dir = std::filesystem::path(path).parent_path(); !dir.empty()) {
    std::filesystem::create_directories(dir);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrKind::io, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrKind::io, "short write to " + path);
}

void save_raw_file(const std::string& path, const Tensor& t, const RawMeta& meta) {
  write_file_bytes(path, write_raw(t, meta));
}

Tensor load_raw_file(const std::string& path, RawMeta* meta_out) {
  return read_raw_f32(read_file_bytes(path), meta_out);
}

void save_volume3(const std::string& path, const Volume3& v) {
  RawMeta meta;
  meta.spacing = v.spacing;
  save_raw_file(path, v.values, meta);
}

void save_volume4(const std::string& path, const Volume4& v) {
  RawMeta meta;
  meta.spacing = v.spacing;
  meta.dt = v.dt;
  save_raw_file(path, v.values, meta);
}

Volume3 load_volume3(const std::string& path) {
  RawMeta meta;
  Tensor t = load_raw_file(path, &meta);
  require(t.rank() == 3, ErrKind::rank, path + ": expected a rank-3 tensor");
  std::array<double, 3> sp = meta.spacing;
  for (double& s : sp)
    if (s <= 0.0) s = 1.0;
  return Volume3(std::move(t), sp);
}

Volume4 load_volume4(const std::string& path) {
  RawMeta meta;
  Tensor t = load_raw_file(path, &meta);
  require(t.rank() == 4, ErrKind::rank, path + ": expected a rank-4 tensor");
  std::array<double, 3> sp = meta.spacing;
  for (double& s : sp)
    if (s <= 0.0) s = 1.0;
  return Volume4(std::move(t), sp, meta.dt > 0.0 ? meta.dt : 1.0);
}

}  // namespace pwtk
