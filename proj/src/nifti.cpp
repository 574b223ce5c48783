// SPDX-License-Identifier: Apache-2.0
#include "nifti.hpp"

#include <zlib.h>

#include <cstring>

#include "raw_io.hpp"

namespace pwtk {

namespace {

// NIfTI-1 datatype codes.
enum : std::int16_t {
  DT_UINT8 = 2,
  DT_INT16 = 4,
  DT_INT32 = 8,
  DT_FLOAT32 = 16,
  DT_FLOAT64 = 64,
};

struct Header {
  std::int32_t sizeof_hdr;
  std::int16_t dim[8];
  std::int16_t datatype;
  std::int16_t bitpix;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  char magic[4];
  bool swapped;
};

template <typename T>
T read_at(const std::vector<std::uint8_t>& b, std::size_t off, bool swap) {
  T v;
  std::memcpy(&v, b.data() + off, sizeof(T));
  if (swap && sizeof(T) > 1) {
    auto* p = reinterpret_cast<std::uint8_t*>(&v);
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(p[i], p[sizeof(T) - 1 - i]);
  }
  return v;
}

Header parse_header(const std::vector<std::uint8_t>& b) {
  require(b.size() >= 348, ErrKind::format, "NIfTI stream shorter than the 348-byte header");
  Header h{};
  h.swapped = false;
  h.sizeof_hdr = read_at<std::int32_t>(b, 0, false);
  if (h.sizeof_hdr != 348) {
    h.sizeof_hdr = read_at<std::int32_t>(b, 0, true);
    require(h.sizeof_hdr == 348, ErrKind::format, "NIfTI sizeof_hdr is not 348 in either byte order");
    h.swapped = true;
  }
  std::memcpy(h.magic, b.data() + 344, 4);
  const bool n1 = std::memcmp(h.magic, "n+1\0", 4) == 0;
  const bool ni1 = std::memcmp(h.magic, "ni1\0", 4) == 0;
  require(n1 || ni1, ErrKind::format, "bad NIfTI magic");
  for (int i = 0; i < 8; ++i) h.dim[i] = read_at<std::int16_t>(b, 40 + 2 * i, h.swapped);
  h.datatype = read_at<std::int16_t>(b, 70, h.swapped);
  h.bitpix = read_at<std::int16_t>(b, 72, h.swapped);
  for (int i = 0; i < 8; ++i) h.pixdim[i] = read_at<float>(b, 76 + 4 * i, h.swapped);
  h.vox_offset = read_at<float>(b, 108, h.swapped);
  h.scl_slope = read_at<float>(b, 112, h.swapped);
  h.scl_inter = read_at<float>(b, 116, h.swapped);
  return h;
}

template <typename S>
void convert_payload(const std::vector<std::uint8_t>& b, std::size_t off, std::size_t n, bool swap, float slope,
                     float inter, bool rescale, std::vector<float>& out) {
  require(off + n * sizeof(S) <= b.size(), ErrKind::format, "NIfTI payload truncated");
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const S raw = read_at<S>(b, off + i * sizeof(S), swap);
    float v = static_cast<float>(raw);
    if (rescale) v = v * slope + inter;
    out[i] = v;
  }
}

}  // namespace

bool is_gzip(const std::vector<std::uint8_t>& bytes) {
  return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& bytes) {
  z_stream zs{};
  require(inflateInit2(&zs, 15 + 16) == Z_OK, ErrKind::io, "zlib init failed");
  std::vector<std::uint8_t> out;
  out.reserve(bytes.size() * 4);
  std::uint8_t buf[1 << 16];
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  int rc = Z_OK;
  do {
    zs.next_out = buf;
    zs.avail_out = sizeof(buf);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      fail(ErrKind::format, "corrupt gzip stream");
    }
    out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
  } while (rc != Z_STREAM_END);
  inflateEnd(&zs);
  return out;
}

NiftiVolume parse_nifti(const std::vector<std::uint8_t>& bytes) {
  const Header h = parse_header(bytes);
  require(h.dim[0] == 3 || h.dim[0] == 4, ErrKind::rank, "NIfTI dim[0] must be 3 or 4");

  std::size_t nvox = 1;
  for (int a = 1; a <= h.dim[0]; ++a) {
    require(h.dim[a] >= 1, ErrKind::format, "NIfTI extent must be >= 1");
    nvox *= static_cast<std::size_t>(h.dim[a]);
  }

  // "n+1" keeps the payload in-stream at vox_offset; for "ni1" pairs we
  // accept a concatenated stream with the payload right after the header.
  std::size_t off = 348;
  if (std::memcmp(h.magic, "n+1\0", 4) == 0 && h.vox_offset >= 348.0f) {
    off = static_cast<std::size_t>(h.vox_offset);
  }

  const bool rescale = h.scl_slope != 0.0f;
  std::vector<float> data;
  switch (h.datatype) {
    case DT_UINT8:
      convert_payload<std::uint8_t>(bytes, off, nvox, h.swapped, h.scl_slope, h.scl_inter, rescale, data);
      break;
    case DT_INT16:
      convert_payload<std::int16_t>(bytes, off, nvox, h.swapped, h.scl_slope, h.scl_inter, rescale, data);
      break;
    case DT_INT32:
      convert_payload<std::int32_t>(bytes, off, nvox, h.swapped, h.scl_slope, h.scl_inter, rescale, data);
      break;
    case DT_FLOAT32:
      convert_payload<float>(bytes, off, nvox, h.swapped, h.scl_slope, h.scl_inter, rescale, data);
      break;
    case DT_FLOAT64: {
      require(off + nvox * 8 <= bytes.size(), ErrKind::format, "NIfTI payload truncated");
      data.resize(nvox);
      for (std::size_t i = 0; i < nvox; ++i) {
        double v = read_at<double>(bytes, off + i * 8, h.swapped);
        if (rescale) v = v * h.scl_slope + h.scl_inter;
        data[i] = static_cast<float>(v);
      }
      break;
    }
    default:
      fail(ErrKind::unsupported, "unsupported NIfTI datatype " + std::to_string(h.datatype));
  }

  // NIfTI stores x fastest; our row-major (.., y, x) layout matches the
  // same linear order once axes are listed slowest-first.
  auto sp = [&](int axis) {
    const float s = h.pixdim[axis];
    return s > 0.0f ? static_cast<double>(s) : 1.0;
  };
  if (h.dim[0] == 3) {
    Tensor t({static_cast<std::size_t>(h.dim[3]), static_cast<std::size_t>(h.dim[2]),
              static_cast<std::size_t>(h.dim[1])},
             std::move(data));
    return Volume3(std::move(t), {sp(3), sp(2), sp(1)});
  }
  require(h.dim[4] >= 2, ErrKind::shape, "4D NIfTI requires at least two time points");
  Tensor t({static_cast<std::size_t>(h.dim[4]), static_cast<std::size_t>(h.dim[3]),
            static_cast<std::size_t>(h.dim[2]), static_cast<std::size_t>(h.dim[1])},
           std::move(data));
  const double dt = h.pixdim[4] > 0.0f ? static_cast<double>(h.pixdim[4]) : 1.0;
  return Volume4(std::move(t), {sp(3), sp(2), sp(1)}, dt);
}

NiftiVolume load_nifti(const std::string& path) {
  auto bytes = read_file_bytes(path);
  if (is_gzip(bytes)) bytes = gunzip(bytes);
  return parse_nifti(bytes);
}

}  // namespace pwtk
