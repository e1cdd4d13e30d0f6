// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Data-pipeline types and operations: NIfTI-1 volume I/O, isotropic
// resampling, modality normalization, tumor-biased patch sampling,
// bounding-box cropping, synthetic phantom cases, and the dataset manifest.

#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "voxseg/tensor.hpp"

namespace voxseg {

enum class Modality { PET, CT, MASK };

inline const char* modality_name(Modality m) {
    switch (m) {
        case Modality::PET: return "PET";
        case Modality::CT: return "CT";
        default: return "MASK";
    }
}

// A scalar 3-D grid with world metadata. Memory order is x-fastest (NIfTI
// canonical): index (x,y,z) lives at (z*ny + y)*nx + x. Voxel (0,0,0) is
// centered at `origin` (mm) and axis a advances by spacing[a] mm. Spacing
// and origin are stored at float precision, matching the file format, so
// write->read round-trips are exact.
struct Volume {
    std::array<std::int64_t, 3> dim{0, 0, 0};  // (nx, ny, nz)
    std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
    std::array<float, 3> origin{0.0f, 0.0f, 0.0f};
    Modality modality = Modality::PET;
    // set once ct_normalize has run, and persisted through volume I/O, so
    // the preprocessing pipeline is idempotent
    bool ct_normalized = false;
    std::vector<float> data;

    std::int64_t numel() const { return dim[0] * dim[1] * dim[2]; }

    float& at(std::int64_t x, std::int64_t y, std::int64_t z) {
        return data[std::size_t((z * dim[1] + y) * dim[0] + x)];
    }
    float at(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return data[std::size_t((z * dim[1] + y) * dim[0] + x)];
    }

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            require(dim[std::size_t(a)] >= 1, "volume: empty extent");
            require(spacing[std::size_t(a)] > 0.0, "volume: spacing must be strictly positive");
        }
        require(std::int64_t(data.size()) == numel(), "volume: data size does not match dims");
        if (modality == Modality::MASK)
            for (float v : data)
                require(v == 0.0f || v == 1.0f, "volume: MASK must contain only {0,1}");
    }
};

// Axis-aligned voxel box, inclusive start / exclusive end per axis (x,y,z).
struct BBox {
    std::array<std::int64_t, 3> lo{0, 0, 0};
    std::array<std::int64_t, 3> hi{0, 0, 0};

    std::int64_t extent(int a) const { return hi[std::size_t(a)] - lo[std::size_t(a)]; }
    bool empty() const { return extent(0) <= 0 || extent(1) <= 0 || extent(2) <= 0; }
};

struct PatientCase {
    std::string case_id;
    std::string center_id;  // acquisition center, the leave-one-out unit
    Volume pet;
    Volume ct;
    std::optional<Volume> gtv;  // reference tumor mask; absent for test cases
    BBox bbox;                  // organizer-style region of interest
};

struct SamplerConfig {
    std::array<std::int64_t, 3> patch{144, 144, 144};  // (x, y, z) extents
    double p_tumor = 0.9;
    std::uint64_t rng_seed = 0;

    bool operator==(const SamplerConfig&) const = default;

    void validate() const {
        for (auto p : patch)
            require(p >= 16 && p % 16 == 0,
                    "sampler: patch extents must be positive multiples of 16");
        require(p_tumor >= 0.0 && p_tumor <= 1.0, "sampler: p_tumor must lie in [0, 1]");
    }
};

// One training example: [1,1,d,h,w] tensors with (d,h,w) = (z,y,x).
struct PatchSample {
    TensorF pet;
    TensorF ct;
    TensorF label;
    std::array<std::int64_t, 3> corner{0, 0, 0};  // window start (x,y,z)
    bool contains_tumor = false;
};

// One manifest line: identifiers, volume paths, and the bbox as six
// integers x0 y0 z0 x1 y1 z1 (inclusive start, exclusive end).
struct CaseRecord {
    std::string case_id;
    std::string center_id;
    std::string pet_path;
    std::string ct_path;
    std::string gtv_path;  // "-" when absent
    BBox bbox;
};

// --- NIfTI-1 I/O (src/nifti.cpp) --------------------------------------------
// Plain .nii or gzip-compressed .nii.gz; little-endian, header 348 bytes,
// magic "n+1\0", payload at vox_offset. Reader accepts uint8/int16/
// float32/float64 and applies scl_slope/scl_inter; writer emits float32
// (uint8 for masks) and round-trips bit-exactly.
Volume volume_read(const std::string& path);
void volume_write(const Volume& v, const std::string& path);

// --- Preprocessing (src/preprocess.cpp) --------------------------------------
// World-space resampling to an isotropic grid: trilinear for intensity
// volumes, nearest-neighbor for masks; per-axis output extent
// round(n*spacing/target), minimum 1. Identity (bit-exact) when the spacing
// already matches.
Volume resample_isotropic(const Volume& v, double target_mm = 1.0);

// Clip to [-1024, 1024] HU and scale by 1/1024. No-op on volumes already
// carrying the ct_normalized flag.
Volume ct_normalize(const Volume& v);

// In-place Z-score with population std, guarded by max(std, 1e-8);
// applied per training patch or per inference crop.
void pet_zscore(std::vector<float>& values);
void pet_zscore(Volume& v);

// Crop every volume of the case to its bbox (world origin follows).
PatientCase crop_bbox(const PatientCase& c);

// --- Patch sampling (src/sampler.cpp) ----------------------------------------
// With probability p_tumor the window is uniform among windows containing
// at least one tumor voxel (falling back to the uniform branch when there
// are none); otherwise uniform among all valid windows. Volumes smaller
// than the patch are padded: PET/label with 0, CT with -1 (normalized air).
PatchSample sample_patch(const PatientCase& c, const SamplerConfig& cfg, Rng& rng);

// --- Synthetic cases (src/phantom.cpp) ---------------------------------------
// Deterministic desk-scale stand-in for scanner data: smooth CT background
// with ellipsoidal anatomy, low PET background with high-uptake ellipsoid
// lesions, exact lesion mask, non-isotropic spacing to exercise resampling.
PatientCase generate_phantom(std::uint64_t seed, std::int64_t extent,
                             std::int64_t n_lesions);

// --- Manifest (src/manifest.cpp) ---------------------------------------------
std::vector<CaseRecord> manifest_read(const std::string& path);
void manifest_write(const std::vector<CaseRecord>& records, const std::string& path);
// Read the record's volumes into memory (gtv optional via "-").
PatientCase load_case(const CaseRecord& rec);
// Write the case's volumes as <dir>/<case_id>_{pet,ct,gtv}.nii.gz and
// return the matching record.
CaseRecord store_case(const PatientCase& c, const std::string& dir);

// --- Tensor bridging ---------------------------------------------------------
// Volume (x-fastest) to [1,1,nz,ny,nx] tensor; the flat buffer is copied
// unchanged because tensor axis W maps to volume axis x.
inline TensorF volume_to_tensor(const Volume& v) {
    v.validate();
    return TensorF::from_data({1, 1, v.dim[2], v.dim[1], v.dim[0]},
                              std::vector<float>(v.data));
}

inline Volume tensor_to_volume(const TensorF& t, const Volume& like) {
    require(t.rank() == 5 && t.shape()[0] == 1 && t.shape()[1] == 1,
            "tensor_to_volume: need a [1,1,d,h,w] tensor, got " + shape_str(t.shape()));
    Volume v = like;
    v.dim = {t.shape()[4], t.shape()[3], t.shape()[2]};
    v.data.assign(t.values().begin(), t.values().end());
    return v;
}

}  // namespace voxseg
