// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic PET/CT cases for tests and desk-scale training runs: a smooth
// CT background with ellipsoidal anatomy, low PET background activity with
// high-uptake ellipsoidal lesions, the exact lesion-union mask, and a
// region-of-interest box. Geometry is computed in world millimetres on the
// scanner-like non-isotropic grid so resampling is exercised for real.

#include "voxseg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace voxseg {
namespace {

constexpr double kPi = 3.14159265358979323846;

struct Ellipsoid {
    std::array<double, 3> center;  // mm
    std::array<double, 3> semi;    // mm
    double value;

    bool contains(double wx, double wy, double wz) const {
        const double dx = (wx - center[0]) / semi[0];
        const double dy = (wy - center[1]) / semi[1];
        const double dz = (wz - center[2]) / semi[2];
        return dx * dx + dy * dy + dz * dz <= 1.0;
    }
};

Ellipsoid random_ellipsoid(Rng& rng, const std::array<double, 3>& world,
                           double semi_lo, double semi_hi, double value) {
    Ellipsoid e;
    for (int a = 0; a < 3; ++a) {
        e.center[std::size_t(a)] = rng.uniform(0.25, 0.75) * world[std::size_t(a)];
        e.semi[std::size_t(a)] = rng.uniform(semi_lo, semi_hi);
    }
    e.value = value;
    return e;
}

}  // namespace

PatientCase generate_phantom(std::uint64_t seed, std::int64_t extent,
                             std::int64_t n_lesions) {
    require(extent >= 16 && extent % 16 == 0,
            "phantom: extent must be a positive multiple of 16");
    require(n_lesions >= 0, "phantom: negative lesion count");

    const std::array<std::int64_t, 3> dim{extent, extent, extent};
    const std::array<float, 3> spacing{0.98f, 0.98f, 3.27f};
    const std::array<double, 3> world{double(extent) * 0.98, double(extent) * 0.98,
                                      double(extent) * 3.27};
    Rng rng(mix_seed(seed, 0x7068616eULL));

    // Draw every random parameter up front, in a fixed order, so the voxel
    // fill below is a pure function of them.
    std::array<double, 3> ct_freq, ct_phase, pet_phase;
    for (int a = 0; a < 3; ++a) {
        ct_freq[std::size_t(a)] = rng.uniform(1.0, 2.5);
        ct_phase[std::size_t(a)] = rng.uniform(0.0, 2.0 * kPi);
        pet_phase[std::size_t(a)] = rng.uniform(0.0, 2.0 * kPi);
    }
    std::vector<Ellipsoid> anatomy;
    anatomy.push_back(random_ellipsoid(rng, world, 20.0, 45.0, 700.0));   // bone-like
    anatomy.push_back(random_ellipsoid(rng, world, 15.0, 35.0, -800.0));  // air-like
    std::vector<Ellipsoid> lesions;
    for (std::int64_t i = 0; i < n_lesions; ++i)
        lesions.push_back(
            random_ellipsoid(rng, world, 5.0, 12.0, 0.3 * rng.uniform(5.0, 10.0)));

    PatientCase c;
    c.case_id = "phantom" + std::to_string(seed);
    static const char* kCenters[] = {"CHGJ", "CHMR", "CHUM", "CHUS", "CHUV"};
    c.center_id = kCenters[seed % 5];

    for (Volume* v : {&c.pet, &c.ct}) {
        v->dim = dim;
        v->spacing = spacing;
        v->origin = {0.0f, 0.0f, 0.0f};
        v->data.assign(std::size_t(v->numel()), 0.0f);
    }
    c.pet.modality = Modality::PET;
    c.ct.modality = Modality::CT;
    Volume gtv = c.ct;
    gtv.modality = Modality::MASK;
    gtv.ct_normalized = false;

    std::size_t i = 0;
    for (std::int64_t z = 0; z < extent; ++z)
        for (std::int64_t y = 0; y < extent; ++y)
            for (std::int64_t x = 0; x < extent; ++x, ++i) {
                const double wx = double(x) * 0.98;
                const double wy = double(y) * 0.98;
                const double wz = double(z) * 3.27;
                const double ux = wx / world[0];  // normalized [0,1) coordinates
                const double uy = wy / world[1];
                const double uz = wz / world[2];

                // Soft-tissue-scale background plus anatomy, clipped to a
                // plausible HU range.
                double ct = 180.0 * std::sin(2.0 * kPi * ct_freq[0] * ux + ct_phase[0]) *
                            std::sin(2.0 * kPi * ct_freq[1] * uy + ct_phase[1]) *
                            std::sin(2.0 * kPi * ct_freq[2] * uz + ct_phase[2]);
                for (const Ellipsoid& e : anatomy)
                    if (e.contains(wx, wy, wz)) ct += e.value;
                c.ct.data[i] = float(std::clamp(ct, -1000.0, 1000.0));

                // Low smooth background activity; lesions overwrite it with
                // a 5-10x hotter level (max under overlap).
                double pet = 0.3 + 0.1 * std::sin(2.0 * kPi * ux + pet_phase[0]) *
                                       std::sin(2.0 * kPi * uy + pet_phase[1]) *
                                       std::sin(2.0 * kPi * uz + pet_phase[2]);
                bool in_lesion = false;
                for (const Ellipsoid& e : lesions)
                    if (e.contains(wx, wy, wz)) {
                        pet = in_lesion ? std::max(pet, e.value) : e.value;
                        in_lesion = true;
                    }
                c.pet.data[i] = float(pet);
                gtv.data[i] = in_lesion ? 1.0f : 0.0f;
            }
    c.gtv = std::move(gtv);

    // Tight box around the mask plus a safety margin; a lesion-free case
    // keeps the full volume as its region of interest.
    std::array<std::int64_t, 3> lo{extent, extent, extent}, hi{0, 0, 0};
    i = 0;
    for (std::int64_t z = 0; z < extent; ++z)
        for (std::int64_t y = 0; y < extent; ++y)
            for (std::int64_t x = 0; x < extent; ++x, ++i)
                if (c.gtv->data[i] != 0.0f) {
                    lo = {std::min(lo[0], x), std::min(lo[1], y), std::min(lo[2], z)};
                    hi = {std::max(hi[0], x + 1), std::max(hi[1], y + 1),
                          std::max(hi[2], z + 1)};
                }
    if (lo[0] >= hi[0]) {
        c.bbox.lo = {0, 0, 0};
        c.bbox.hi = dim;
    } else {
        constexpr std::int64_t kMargin = 8;
        for (int a = 0; a < 3; ++a) {
            c.bbox.lo[std::size_t(a)] =
                std::max<std::int64_t>(lo[std::size_t(a)] - kMargin, 0);
            c.bbox.hi[std::size_t(a)] =
                std::min<std::int64_t>(hi[std::size_t(a)] + kMargin, extent);
        }
    }
    return c;
}

}  // namespace voxseg
