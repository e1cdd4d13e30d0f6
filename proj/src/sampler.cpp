// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Tumor-biased training patch extraction. The branch (tumor-containing vs.
// uniform) is drawn first, then a window start; window sums over the mask
// come from a 3-D integral image so enumeration of candidate starts is
// O(1) per window.

#include "voxseg/volume.hpp"

#include <algorithm>
#include <vector>

namespace voxseg {
namespace {

// I(x,y,z) = number of mask voxels in [0,x) x [0,y) x [0,z); size per axis
// is dim+1 so window sums need no boundary cases.
class IntegralImage {
  public:
    explicit IntegralImage(const Volume& v)
        : nx_(v.dim[0] + 1), ny_(v.dim[1] + 1), nz_(v.dim[2] + 1),
          sums_(std::size_t(nx_ * ny_ * nz_), 0) {
        for (std::int64_t z = 1; z < nz_; ++z)
            for (std::int64_t y = 1; y < ny_; ++y)
                for (std::int64_t x = 1; x < nx_; ++x)
                    at(x, y, z) = std::int64_t(v.at(x - 1, y - 1, z - 1) != 0.0f) +
                                  at(x - 1, y, z) + at(x, y - 1, z) + at(x, y, z - 1) -
                                  at(x - 1, y - 1, z) - at(x - 1, y, z - 1) -
                                  at(x, y - 1, z - 1) + at(x - 1, y - 1, z - 1);
    }

    // Sum over [x0,x1) x [y0,y1) x [z0,z1).
    std::int64_t window(std::int64_t x0, std::int64_t x1, std::int64_t y0,
                        std::int64_t y1, std::int64_t z0, std::int64_t z1) const {
        return at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0) +
               at(x0, y0, z1) + at(x0, y1, z0) + at(x1, y0, z0) - at(x0, y0, z0);
    }

  private:
    std::int64_t& at(std::int64_t x, std::int64_t y, std::int64_t z) {
        return sums_[std::size_t((z * ny_ + y) * nx_ + x)];
    }
    std::int64_t at(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return sums_[std::size_t((z * ny_ + y) * nx_ + x)];
    }

    std::int64_t nx_, ny_, nz_;
    std::vector<std::int64_t> sums_;
};

}  // namespace

PatchSample sample_patch(const PatientCase& c, const SamplerConfig& cfg, Rng& rng) {
    cfg.validate();
    require(c.gtv.has_value(), "sampler: case carries no reference mask");
    require(c.pet.dim == c.ct.dim && c.pet.dim == c.gtv->dim,
            "sampler: PET/CT/mask grids differ");
    require(c.ct.ct_normalized,
            "sampler: normalize the CT first (patch padding assumes unit scale)");
    c.pet.validate();
    c.ct.validate();
    c.gtv->validate();

    const auto& n = c.pet.dim;
    const auto& p = cfg.patch;
    std::array<std::int64_t, 3> count{};  // valid window starts per axis
    for (int a = 0; a < 3; ++a)
        count[std::size_t(a)] =
            std::max<std::int64_t>(n[std::size_t(a)] - p[std::size_t(a)], 0) + 1;

    const bool want_tumor = rng.uniform() < cfg.p_tumor;
    std::array<std::int64_t, 3> corner{0, 0, 0};
    bool picked = false;
    if (want_tumor) {
        const IntegralImage sums(*c.gtv);
        std::vector<std::int64_t> hits;  // flat start index (sz*cy + sy)*cx + sx
        for (std::int64_t sz = 0; sz < count[2]; ++sz)
            for (std::int64_t sy = 0; sy < count[1]; ++sy)
                for (std::int64_t sx = 0; sx < count[0]; ++sx)
                    if (sums.window(sx, std::min(sx + p[0], n[0]), sy,
                                    std::min(sy + p[1], n[1]), sz,
                                    std::min(sz + p[2], n[2])) > 0)
                        hits.push_back((sz * count[1] + sy) * count[0] + sx);
        if (!hits.empty()) {
            const std::int64_t k = hits[std::size_t(rng.uniform_int(
                std::int64_t(hits.size())))];
            corner = {k % count[0], (k / count[0]) % count[1], k / (count[0] * count[1])};
            picked = true;
        }
        // A tumor-free case falls through to the uniform branch below.
    }
    if (!picked)
        for (int a = 0; a < 3; ++a)
            corner[std::size_t(a)] = rng.uniform_int(count[std::size_t(a)]);

    const std::size_t numel = std::size_t(p[0] * p[1] * p[2]);
    std::vector<float> pet(numel), ct(numel), label(numel);
    bool contains_tumor = false;
    std::size_t i = 0;
    for (std::int64_t z = 0; z < p[2]; ++z)
        for (std::int64_t y = 0; y < p[1]; ++y)
            for (std::int64_t x = 0; x < p[0]; ++x, ++i) {
                const std::int64_t vx = corner[0] + x;
                const std::int64_t vy = corner[1] + y;
                const std::int64_t vz = corner[2] + z;
                const bool inside = vx < n[0] && vy < n[1] && vz < n[2];
                // Outside the volume: background activity for PET/label,
                // normalized air for CT.
                pet[i] = inside ? c.pet.at(vx, vy, vz) : 0.0f;
                ct[i] = inside ? c.ct.at(vx, vy, vz) : -1.0f;
                label[i] = inside ? c.gtv->at(vx, vy, vz) : 0.0f;
                contains_tumor = contains_tumor || label[i] != 0.0f;
            }
    pet_zscore(pet);  // standardized per patch, after padding

    PatchSample s;
    const Shape shape{1, 1, p[2], p[1], p[0]};
    s.pet = TensorF::from_data(shape, std::move(pet));
    s.ct = TensorF::from_data(shape, std::move(ct));
    s.label = TensorF::from_data(shape, std::move(label));
    s.corner = corner;
    s.contains_tumor = contains_tumor;
    return s;
}

}  // namespace voxseg
