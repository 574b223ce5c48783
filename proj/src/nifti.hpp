// SPDX-License-Identifier: Apache-2.0
//
// Minimal NIfTI-1 ingestion: the published 348-byte header, datatypes
// uint8/int16/int32/float32/float64, optional gzip wrapping, 3D or 4D
// payloads. Orientation matrices beyond pixdim are ignored; the pipeline
// works in voxel space on pre-registered data.
#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "tensor.hpp"

namespace pwtk {

using NiftiVolume = std::variant<Volume3, Volume4>;

// Parses an uncompressed NIfTI-1 stream ("n+1" or "ni1" magic).
NiftiVolume parse_nifti(const std::vector<std::uint8_t>& bytes);

// Loads .nii or .nii.gz (gzip detected by magic, not extension).
NiftiVolume load_nifti(const std::string& path);

bool is_gzip(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& bytes);

}  // namespace pwtk
