// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors (last axis fastest) plus the spacing-aware
// volume wrappers the imaging pipeline passes around.
#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"

namespace pwtk {

inline constexpr std::size_t kMaxRank = 5;

template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<std::size_t> dims, T fill = T(0)) : dims_(std::move(dims)) {
    validate_dims();
    data_.assign(element_count(), fill);
  }

  TensorT(std::vector<std::size_t> dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    validate_dims();
    require(data_.size() == element_count(), ErrKind::shape, "tensor payload length does not match extents");
  }

  std::size_t rank() const { return dims_.size(); }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t flat_index(std::span<const std::size_t> idx) const {
    require(idx.size() == dims_.size(), ErrKind::rank, "index rank mismatch");
    std::size_t flat = 0;
    for (std::size_t a = 0; a < idx.size(); ++a) {
      require(idx[a] < dims_[a], ErrKind::shape, "index out of range");
      flat = flat * dims_[a] + idx[a];
    }
    return flat;
  }

  bool same_dims(const TensorT& other) const { return dims_ == other.dims_; }

  template <typename U>
  TensorT<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return TensorT<U>(dims_, std::move(out));
  }

 private:
  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims_) n *= d;
    return dims_.empty() ? 0 : n;
  }

  void validate_dims() const {
    require(!dims_.empty() && dims_.size() <= kMaxRank, ErrKind::rank, "tensor rank must be 1..5");
    for (auto d : dims_) require(d >= 1, ErrKind::shape, "tensor extents must be >= 1");
  }

  std::vector<std::size_t> dims_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

struct Volume3 {
  Tensor values;                              // dims (Z, Y, X)
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // (sz, sy, sx) in mm

  Volume3() = default;
  Volume3(Tensor v, std::array<double, 3> sp) : values(std::move(v)), spacing(sp) {
    require(values.rank() == 3, ErrKind::rank, "Volume3 requires exactly 3 axes");
    for (double s : spacing) require(s > 0.0, ErrKind::parameter, "voxel spacing must be positive");
  }

  std::size_t nz() const { return values.dim(0); }
  std::size_t ny() const { return values.dim(1); }
  std::size_t nx() const { return values.dim(2); }
  float at(std::size_t z, std::size_t y, std::size_t x) const {
    return values[(z * ny() + y) * nx() + x];
  }
  float& at(std::size_t z, std::size_t y, std::size_t x) {
    return values.data()[(z * ny() + y) * nx() + x];
  }
};

struct Volume4 {
  Tensor values;  // dims (T, Z, Y, X)
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  double dt = 1.0;  // inter-acquisition interval, seconds

  Volume4() = default;
  Volume4(Tensor v, std::array<double, 3> sp, double dt_s) : values(std::move(v)), spacing(sp), dt(dt_s) {
    require(values.rank() == 4, ErrKind::rank, "Volume4 requires exactly 4 axes");
    require(values.dim(0) >= 2, ErrKind::shape, "Volume4 requires T >= 2");
    for (double s : spacing) require(s > 0.0, ErrKind::parameter, "voxel spacing must be positive");
    require(dt > 0.0, ErrKind::parameter, "dt must be positive");
  }

  std::size_t nt() const { return values.dim(0); }
  std::size_t nz() const { return values.dim(1); }
  std::size_t ny() const { return values.dim(2); }
  std::size_t nx() const { return values.dim(3); }
  float at(std::size_t t, std::size_t z, std::size_t y, std::size_t x) const {
    return values[((t * nz() + z) * ny() + y) * nx() + x];
  }
  float& at(std::size_t t, std::size_t z, std::size_t y, std::size_t x) {
    return values.data()[((t * nz() + z) * ny() + y) * nx() + x];
  }
};

// Canonical order for the six standard maps; every per-map loop follows it.
inline const std::vector<std::string>& map_names() {
  static const std::vector<std::string> names = {"rcbf", "rcbv", "mtt", "ttp", "tmax", "adc"};
  return names;
}

struct CaseBundle {
  std::string case_id;
  Volume4 pwi;
  std::map<std::string, Volume3> maps;  // keys from map_names()
  std::optional<Volume3> lesion_gt;     // binary

  // Maps and ground truth must live on one grid; checked at pipeline
  // boundaries rather than at load.
  void check_consistent() const {
    require(maps.size() == map_names().size(), ErrKind::data, "case must carry all six standard maps");
    const Volume3* ref = nullptr;
    for (const auto& name : map_names()) {
      auto it = maps.find(name);
      require(it != maps.end(), ErrKind::data, "missing map: " + name);
      if (!ref) {
        ref = &it->second;
      } else {
        require(it->second.values.same_dims(ref->values) && it->second.spacing == ref->spacing, ErrKind::data,
                "map grids differ: " + name);
      }
    }
    if (lesion_gt) {
      require(lesion_gt->values.same_dims(ref->values) && lesion_gt->spacing == ref->spacing, ErrKind::data,
              "lesion ground truth grid differs from maps");
    }
  }
};

}  // namespace pwtk
