// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Grid and intensity preprocessing: isotropic resampling, CT windowing,
// PET standardization, and region-of-interest cropping.

#include "voxseg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace voxseg {
namespace {

// Per-axis source coordinate for output index j: u = j * target / spacing,
// clamped to the valid index range so edge samples clamp instead of
// extrapolating.
struct AxisMap {
    std::vector<std::int64_t> i0, i1;  // bracketing source indices
    std::vector<float> frac;           // weight of i1
    std::vector<std::int64_t> nearest;
};

AxisMap make_axis_map(std::int64_t n, double spacing, double target, std::int64_t m) {
    AxisMap map;
    map.i0.resize(std::size_t(m));
    map.i1.resize(std::size_t(m));
    map.frac.resize(std::size_t(m));
    map.nearest.resize(std::size_t(m));
    for (std::int64_t j = 0; j < m; ++j) {
        double u = double(j) * target / spacing;
        u = std::clamp(u, 0.0, double(n - 1));
        const std::int64_t lo = std::int64_t(std::floor(u));
        map.i0[std::size_t(j)] = lo;
        map.i1[std::size_t(j)] = std::min(lo + 1, n - 1);
        map.frac[std::size_t(j)] = float(u - double(lo));
        map.nearest[std::size_t(j)] = std::clamp(std::int64_t(std::llround(u)),
                                                 std::int64_t(0), n - 1);
    }
    return map;
}

Volume crop(const Volume& v, const BBox& b) {
    Volume out = v;
    for (int a = 0; a < 3; ++a) {
        out.dim[std::size_t(a)] = b.extent(a);
        out.origin[std::size_t(a)] =
            float(double(v.origin[std::size_t(a)]) +
                  double(b.lo[std::size_t(a)]) * double(v.spacing[std::size_t(a)]));
    }
    out.data.resize(std::size_t(out.numel()));
    for (std::int64_t z = b.lo[2]; z < b.hi[2]; ++z)
        for (std::int64_t y = b.lo[1]; y < b.hi[1]; ++y)
            for (std::int64_t x = b.lo[0]; x < b.hi[0]; ++x)
                out.at(x - b.lo[0], y - b.lo[1], z - b.lo[2]) = v.at(x, y, z);
    return out;
}

}  // namespace

Volume resample_isotropic(const Volume& v, double target_mm) {
    v.validate();
    require(target_mm > 0.0, "resample: target spacing must be positive");

    // Already on the requested grid: return the volume untouched so repeated
    // preprocessing is bit-exact.
    if (double(v.spacing[0]) == target_mm && double(v.spacing[1]) == target_mm &&
        double(v.spacing[2]) == target_mm)
        return v;

    Volume out = v;
    std::array<AxisMap, 3> maps;
    for (int a = 0; a < 3; ++a) {
        const std::int64_t n = v.dim[std::size_t(a)];
        const double s = double(v.spacing[std::size_t(a)]);
        const std::int64_t m =
            std::max<std::int64_t>(1, std::llround(double(n) * s / target_mm));
        out.dim[std::size_t(a)] = m;
        out.spacing[std::size_t(a)] = float(target_mm);
        maps[std::size_t(a)] = make_axis_map(n, s, target_mm, m);
    }
    out.data.assign(std::size_t(out.numel()), 0.0f);

    const AxisMap& mx = maps[0];
    const AxisMap& my = maps[1];
    const AxisMap& mz = maps[2];
    const bool nn = v.modality == Modality::MASK;  // keep labels binary
    for (std::int64_t z = 0; z < out.dim[2]; ++z)
        for (std::int64_t y = 0; y < out.dim[1]; ++y)
            for (std::int64_t x = 0; x < out.dim[0]; ++x) {
                float value;
                if (nn) {
                    value = v.at(mx.nearest[std::size_t(x)], my.nearest[std::size_t(y)],
                                 mz.nearest[std::size_t(z)]);
                } else {
                    const float fx = mx.frac[std::size_t(x)];
                    const float fy = my.frac[std::size_t(y)];
                    const float fz = mz.frac[std::size_t(z)];
                    value = 0.0f;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const float w = (dx ? fx : 1.0f - fx) *
                                                (dy ? fy : 1.0f - fy) *
                                                (dz ? fz : 1.0f - fz);
                                const auto& ix = dx ? mx.i1 : mx.i0;
                                const auto& iy = dy ? my.i1 : my.i0;
                                const auto& iz = dz ? mz.i1 : mz.i0;
                                value += w * v.at(ix[std::size_t(x)], iy[std::size_t(y)],
                                                  iz[std::size_t(z)]);
                            }
                }
                out.at(x, y, z) = value;
            }
    return out;
}

Volume ct_normalize(const Volume& v) {
    v.validate();
    require(v.modality == Modality::CT,
            std::string("ct_normalize: expected a CT volume, got ") +
                modality_name(v.modality));
    if (v.ct_normalized) return v;

    Volume out = v;
    for (float& x : out.data) x = std::clamp(x, -1024.0f, 1024.0f) / 1024.0f;
    out.ct_normalized = true;
    return out;
}

void pet_zscore(std::vector<float>& values) {
    require(!values.empty(), "pet_zscore: empty value list");
    double sum = 0.0;
    for (float x : values) sum += double(x);
    const double mean = sum / double(values.size());
    double var = 0.0;
    for (float x : values) {
        const double d = double(x) - mean;
        var += d * d;
    }
    var /= double(values.size());
    const double sd = std::max(std::sqrt(var), 1e-8);
    for (float& x : values) x = float((double(x) - mean) / sd);
}

void pet_zscore(Volume& v) {
    require(v.modality == Modality::PET,
            std::string("pet_zscore: expected a PET volume, got ") +
                modality_name(v.modality));
    pet_zscore(v.data);
}

PatientCase crop_bbox(const PatientCase& c) {
    const BBox& b = c.bbox;
    require(!b.empty(), "crop_bbox: empty bbox");
    for (int a = 0; a < 3; ++a)
        require(b.lo[std::size_t(a)] >= 0 &&
                    b.hi[std::size_t(a)] <= c.pet.dim[std::size_t(a)],
                "crop_bbox: bbox exceeds the volume extent");
    require(c.pet.dim == c.ct.dim, "crop_bbox: PET and CT grids differ");
    if (c.gtv) require(c.gtv->dim == c.pet.dim, "crop_bbox: mask grid differs");

    PatientCase out;
    out.case_id = c.case_id;
    out.center_id = c.center_id;
    out.pet = crop(c.pet, b);
    out.ct = crop(c.ct, b);
    if (c.gtv) out.gtv = crop(*c.gtv, b);
    out.bbox.lo = {0, 0, 0};
    out.bbox.hi = {b.extent(0), b.extent(1), b.extent(2)};
    return out;
}

}  // namespace voxseg
