// SPDX-License-Identifier: Apache-2.0
//
// "PWTK" raw tensor interchange format, little-endian:
//   magic "PWTK" (4 bytes), version u32 = 1, dtype u32 (0 = f32, 1 = f64),
//   rank u32, extents rank x u64, spacing 3 x f64 (mm, zeros when not
//   applicable), dt f64 (seconds, 0 when rank < 4), then the payload of
//   product(extents) scalars in row-major order (last axis fastest).
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "tensor.hpp"

namespace pwtk {

struct RawMeta {
  std::array<double, 3> spacing{0.0, 0.0, 0.0};
  double dt = 0.0;
};

std::vector<std::uint8_t> write_raw(const Tensor& t, const RawMeta& meta = {});
std::vector<std::uint8_t> write_raw(const TensorD& t, const RawMeta& meta = {});

using RawTensor = std::variant<Tensor, TensorD>;

RawTensor read_raw(const std::vector<std::uint8_t>& bytes, RawMeta* meta_out = nullptr);

// Typed convenience: errors with ErrKind::unsupported on a dtype mismatch.
Tensor read_raw_f32(const std::vector<std::uint8_t>& bytes, RawMeta* meta_out = nullptr);
TensorD read_raw_f64(const std::vector<std::uint8_t>& bytes, RawMeta* meta_out = nullptr);

void save_raw_file(const std::string& path, const Tensor& t, const RawMeta& meta = {});
Tensor load_raw_file(const std::string& path, RawMeta* meta_out = nullptr);

void save_volume3(const std::string& path, const Volume3& v);
void save_volume4(const std::string& path, const Volume4& v);
Volume3 load_volume3(const std::string& path);
Volume4 load_volume4(const std::string& path);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace pwtk
