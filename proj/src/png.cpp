// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "voxseg/png.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace voxseg {

namespace {

void put_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(std::uint8_t(v >> 24));
    out.push_back(std::uint8_t(v >> 16));
    out.push_back(std::uint8_t(v >> 8));
    out.push_back(std::uint8_t(v));
}

// length + type + data + CRC32(type||data)
void put_chunk(std::vector<std::uint8_t>& out, const char type[5],
               const std::vector<std::uint8_t>& data) {
    put_u32be(out, std::uint32_t(data.size()));
    const std::size_t crc_from = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uLong crc = crc32(0L, out.data() + crc_from, uInt(out.size() - crc_from));
    put_u32be(out, std::uint32_t(crc));
}

}  // namespace

void png_write_gray8(const std::string& path, std::int64_t width, std::int64_t height,
                     const std::vector<std::uint8_t>& pixels) {
    require(width >= 1 && height >= 1, "png: empty image");
    require(std::int64_t(pixels.size()) == width * height,
            "png: pixel count does not match dimensions");

    // Raw scanlines, each prefixed with filter type 0 (None).
    std::vector<std::uint8_t> raw;
    raw.reserve(std::size_t(height * (width + 1)));
    for (std::int64_t y = 0; y < height; ++y) {
        raw.push_back(0);
        const auto* row = pixels.data() + y * width;
        raw.insert(raw.end(), row, row + width);
    }
    uLongf zlen = compressBound(uLong(raw.size()));
    std::vector<std::uint8_t> zdata(zlen);
    const int rc = compress2(zdata.data(), &zlen, raw.data(), uLong(raw.size()), 6);
    require(rc == Z_OK, "png: deflate failed");
    zdata.resize(zlen);

    std::vector<std::uint8_t> file{0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<std::uint8_t> ihdr;
    put_u32be(ihdr, std::uint32_t(width));
    put_u32be(ihdr, std::uint32_t(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // color type: grayscale
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // interlace
    put_chunk(file, "IHDR", ihdr);
    put_chunk(file, "IDAT", zdata);
    put_chunk(file, "IEND", {});

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(bool(out), "png: cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(file.data()), std::streamsize(file.size()));
    require(bool(out), "png: short write to " + path);
}

void export_slices(const Volume& mask, const Volume& underlay, const std::string& path) {
    mask.validate();
    underlay.validate();
    require(mask.dim == underlay.dim && mask.spacing == underlay.spacing &&
                mask.origin == underlay.origin,
            "png export: mask and underlay grids are misaligned");

    const std::int64_t nx = mask.dim[0], ny = mask.dim[1], nz = mask.dim[2];
    float lo = underlay.data[0], hi = underlay.data[0];
    for (float v : underlay.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double range = double(hi) - double(lo);

    const std::int64_t tiles = 3;
    const std::int64_t width = tiles * nx, height = tiles * ny;
    std::vector<std::uint8_t> pixels(std::size_t(width * height), 0);
    const auto inside = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
        return mask.at(x, y, z) >= 0.5f;
    };
    for (std::int64_t k = 0; k < tiles * tiles; ++k) {
        // Midpoints of 9 equal z bins; tile 4 is the mid slice.
        const std::int64_t z = std::min((2 * k + 1) * nz / (2 * tiles * tiles), nz - 1);
        const std::int64_t tx = (k % tiles) * nx, ty = (k / tiles) * ny;
        for (std::int64_t y = 0; y < ny; ++y)
            for (std::int64_t x = 0; x < nx; ++x) {
                std::uint8_t g = 0;
                if (range > 0.0)
                    g = std::uint8_t(std::lround(
                        255.0 * (double(underlay.at(x, y, z)) - double(lo)) / range));
                if (inside(x, y, z)) {
                    // In-plane contour: any 4-neighbor outside (the image
                    // border counts as outside).
                    const bool edge = x == 0 || x == nx - 1 || y == 0 || y == ny - 1 ||
                                      !inside(x - 1, y, z) || !inside(x + 1, y, z) ||
                                      !inside(x, y - 1, z) || !inside(x, y + 1, z);
                    if (edge) g = 255;
                }
                pixels[std::size_t((ty + y) * width + tx + x)] = g;
            }
    }
    png_write_gray8(path, width, height, pixels);
}

}  // namespace voxseg
