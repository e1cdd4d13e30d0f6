// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Static inspection artifacts: an 8-bit grayscale PNG writer (zlib-backed,
// deterministic output) and an axial montage of a prediction mask burned
// over its underlay volume.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxseg/volume.hpp"

namespace voxseg {

// Grayscale 8-bit PNG, one byte per pixel, row-major top to bottom. The
// zlib level is pinned, so identical pixels give byte-identical files.
void png_write_gray8(const std::string& path, std::int64_t width, std::int64_t height,
                     const std::vector<std::uint8_t>& pixels);

// 3x3 grid of evenly spaced axial slices (the center tile is the mid
// slice). The underlay is windowed to its own min..max; voxels on the
// mask's in-plane contour are burned to white. Mask voxels count as inside
// at >= 0.5, so probability maps can stand in for labels. Both volumes must
// share one grid.
void export_slices(const Volume& mask, const Volume& underlay, const std::string& path);

}  // namespace voxseg
