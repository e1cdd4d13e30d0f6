// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Data-pipeline tests: NIfTI round-trips against hand-crafted files,
// resampling against closed-form oracles, normalization endpoints, the
// tumor-biased sampler's branch statistics, cropping, phantom generation,
// and manifest round-trips.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "voxseg/volume.hpp"

using namespace voxseg;
namespace fs = std::filesystem;

namespace {

fs::path test_dir() {
    const fs::path dir = fs::temp_directory_path() / "voxseg_test_data";
    fs::create_directories(dir);
    return dir;
}

Volume make_volume(const std::array<std::int64_t, 3>& dim, Modality mod,
                   std::uint64_t seed) {
    Volume v;
    v.dim = dim;
    v.spacing = {0.98f, 0.98f, 3.27f};
    v.origin = {-100.5f, 3.25f, 77.0f};
    v.modality = mod;
    v.data.resize(std::size_t(v.numel()));
    Rng rng(seed);
    for (float& x : v.data)
        x = mod == Modality::MASK ? float(rng.uniform() < 0.2) : float(rng.uniform(-3, 3));
    return v;
}

bool same_volume(const Volume& a, const Volume& b) {
    return a.dim == b.dim && a.spacing == b.spacing && a.origin == b.origin &&
           a.modality == b.modality && a.ct_normalized == b.ct_normalized &&
           a.data == b.data;
}

std::vector<unsigned char> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

// A NIfTI-1 header assembled field by field at the format's raw offsets,
// so reader tests do not depend on the writer under test.
std::vector<unsigned char> craft_header(const std::array<std::int16_t, 3>& dims,
                                        std::int16_t datatype, std::int16_t bitpix,
                                        float vox_offset, float slope, float inter) {
    std::vector<unsigned char> h(348, 0);
    auto put = [&](std::size_t off, const void* p, std::size_t n) {
        std::memcpy(h.data() + off, p, n);
    };
    const std::int32_t sz = 348;
    put(0, &sz, 4);
    const std::int16_t dim[8] = {3, dims[0], dims[1], dims[2], 1, 1, 1, 1};
    put(40, dim, 16);
    put(70, &datatype, 2);
    put(72, &bitpix, 2);
    const float pixdim[4] = {1.0f, 1.0f, 1.0f, 1.0f};
    put(76, pixdim, 16);
    put(108, &vox_offset, 4);
    put(112, &slope, 4);
    put(116, &inter, 4);
    put(344, "n+1\0", 4);
    return h;
}

void write_crafted(const fs::path& p, std::vector<unsigned char> header,
                   const void* payload, std::size_t payload_bytes,
                   std::size_t pad_to_offset = 352) {
    header.resize(pad_to_offset, 0);
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(header.data()),
              std::streamsize(header.size()));
    out.write(static_cast<const char*>(payload), std::streamsize(payload_bytes));
    REQUIRE(out.good());
}

// A minimal hand-built case on an already-normalized grid, for sampler
// tests that need exact control over the mask.
PatientCase make_case(const std::array<std::int64_t, 3>& dim,
                      const std::vector<std::array<std::int64_t, 3>>& tumor_voxels) {
    PatientCase c;
    c.case_id = "manual";
    c.center_id = "CHGJ";
    c.pet = make_volume(dim, Modality::PET, 5);
    c.pet.spacing = {1, 1, 1};
    c.ct = c.pet;
    c.ct.modality = Modality::CT;
    c.ct.ct_normalized = true;
    for (float& x : c.ct.data) x = std::clamp(x, -1.0f, 1.0f);
    Volume gtv = c.pet;
    gtv.modality = Modality::MASK;
    gtv.data.assign(gtv.data.size(), 0.0f);
    for (const auto& t : tumor_voxels) gtv.at(t[0], t[1], t[2]) = 1.0f;
    c.gtv = std::move(gtv);
    c.bbox.lo = {0, 0, 0};
    c.bbox.hi = dim;
    return c;
}

}  // namespace

TEST_CASE("nifti round-trip is bit-exact for every modality") {
    const fs::path dir = test_dir();
    for (Modality mod : {Modality::PET, Modality::CT, Modality::MASK}) {
        Volume v = make_volume({7, 5, 3}, mod, 11 + std::uint64_t(mod));
        if (mod == Modality::CT) v.ct_normalized = true;
        const fs::path p = dir / (std::string("roundtrip_") + modality_name(mod) + ".nii");
        volume_write(v, p.string());
        const Volume r = volume_read(p.string());
        CHECK(same_volume(v, r));
    }
}

TEST_CASE("nifti writer puts the n+1 magic at offset 344 and data at 352") {
    const fs::path p = test_dir() / "magic.nii";
    Volume v = make_volume({2, 2, 2}, Modality::PET, 3);
    volume_write(v, p.string());
    const auto bytes = read_bytes(p);
    REQUIRE(bytes.size() == 352 + 8 * 4);
    CHECK(bytes[344] == 'n');
    CHECK(bytes[345] == '+');
    CHECK(bytes[346] == '1');
    CHECK(bytes[347] == 0);
    // float32 datatype code, little-endian at offset 70
    CHECK(bytes[70] == 16);
    CHECK(bytes[71] == 0);
    float first;
    std::memcpy(&first, bytes.data() + 352, 4);
    CHECK(first == v.data[0]);
}

TEST_CASE("nifti masks are stored as uint8") {
    const fs::path p = test_dir() / "mask_u8.nii";
    Volume v = make_volume({4, 4, 4}, Modality::MASK, 9);
    volume_write(v, p.string());
    const auto bytes = read_bytes(p);
    CHECK(bytes[70] == 2);  // uint8 datatype code
    CHECK(bytes.size() == 352 + 64);
    CHECK(same_volume(v, volume_read(p.string())));
}

TEST_CASE("nifti reader applies scl_slope and scl_inter to int16 data") {
    const fs::path p = test_dir() / "scaled.nii";
    const std::int16_t payload[1] = {3};
    write_crafted(p, craft_header({1, 1, 1}, 4, 16, 352.0f, 2.0f, 1.0f), payload,
                  sizeof payload);
    const Volume v = volume_read(p.string());
    REQUIRE(v.numel() == 1);
    CHECK(v.data[0] == 7.0f);  // 3 * 2 + 1
    CHECK(v.spacing == std::array<float, 3>{1, 1, 1});
}

TEST_CASE("nifti reader handles int16 zeros, float64, uint8, and vox_offset") {
    const fs::path dir = test_dir();
    {
        std::vector<std::int16_t> zeros(16 * 16 * 16, 0);
        const fs::path p = dir / "zeros16.nii";
        write_crafted(p, craft_header({16, 16, 16}, 4, 16, 348.0f, 0.0f, 0.0f),
                      zeros.data(), zeros.size() * 2, 348);
        const Volume v = volume_read(p.string());
        CHECK(v.dim == std::array<std::int64_t, 3>{16, 16, 16});
        for (float x : v.data) CHECK(x == 0.0f);
    }
    {
        const double payload[2] = {0.25, -2.5};
        const fs::path p = dir / "f64.nii";
        // vox_offset past 352 exercises the payload seek
        write_crafted(p, craft_header({2, 1, 1}, 64, 64, 368.0f, 0.0f, 0.0f), payload,
                      sizeof payload, 368);
        const Volume v = volume_read(p.string());
        CHECK(v.data == std::vector<float>{0.25f, -2.5f});
    }
    {
        const unsigned char payload[3] = {0, 1, 2};
        const fs::path p = dir / "u8.nii";
        write_crafted(p, craft_header({3, 1, 1}, 2, 8, 352.0f, 0.0f, 0.0f), payload,
                      sizeof payload);
        const Volume v = volume_read(p.string());
        CHECK(v.data == std::vector<float>{0.0f, 1.0f, 2.0f});
        CHECK(v.modality == Modality::PET);  // untagged files default to PET
    }
}

TEST_CASE("nifti reader rejects bad magic, bad datatype, endianness, truncation") {
    const fs::path dir = test_dir();
    const std::int16_t payload[8] = {};
    {
        auto h = craft_header({2, 2, 2}, 4, 16, 352.0f, 0.0f, 0.0f);
        std::memcpy(h.data() + 344, "ni1\0", 4);  // two-file form, unsupported
        const fs::path p = dir / "bad_magic.nii";
        write_crafted(p, h, payload, sizeof payload);
        CHECK_THROWS_WITH_AS(volume_read(p.string()),
                             doctest::Contains("magic"), Error);
    }
    {
        auto h = craft_header({2, 2, 2}, 8, 32, 352.0f, 0.0f, 0.0f);  // int32 code
        const fs::path p = dir / "bad_dtype.nii";
        write_crafted(p, h, payload, sizeof payload);
        CHECK_THROWS_WITH_AS(volume_read(p.string()),
                             doctest::Contains("datatype"), Error);
    }
    {
        auto h = craft_header({2, 2, 2}, 4, 16, 352.0f, 0.0f, 0.0f);
        const std::int32_t swapped = 0x5C010000;  // 348 with bytes reversed
        std::memcpy(h.data(), &swapped, 4);
        const fs::path p = dir / "big_endian.nii";
        write_crafted(p, h, payload, sizeof payload);
        CHECK_THROWS_WITH_AS(volume_read(p.string()),
                             doctest::Contains("big-endian"), Error);
    }
    {
        auto h = craft_header({4, 4, 4}, 4, 16, 352.0f, 0.0f, 0.0f);
        const fs::path p = dir / "short.nii";
        write_crafted(p, h, payload, 10);  // header promises 128 bytes
        CHECK_THROWS_WITH_AS(volume_read(p.string()),
                             doctest::Contains("truncated"), Error);
    }
}

TEST_CASE("nifti gzip and plain encodings hold the same volume") {
    const fs::path dir = test_dir();
    const Volume v = make_volume({6, 5, 4}, Modality::PET, 21);
    volume_write(v, (dir / "enc.nii").string());
    volume_write(v, (dir / "enc.nii.gz").string());
    const Volume plain = volume_read((dir / "enc.nii").string());
    const Volume gz = volume_read((dir / "enc.nii.gz").string());
    CHECK(same_volume(plain, gz));
    CHECK(same_volume(plain, v));
    // the .gz really is gzip-framed, not just renamed
    const auto bytes = read_bytes(dir / "enc.nii.gz");
    REQUIRE(bytes.size() >= 2);
    CHECK(bytes[0] == 0x1f);
    CHECK(bytes[1] == 0x8b);
}

TEST_CASE("resampling an already-isotropic volume is the identity") {
    Volume v = make_volume({5, 4, 3}, Modality::PET, 31);
    v.spacing = {1.0f, 1.0f, 1.0f};
    const Volume r = resample_isotropic(v, 1.0);
    CHECK(same_volume(v, r));
}

TEST_CASE("resampling matches the closed-form ramp oracle") {
    // Two samples {0, 2} at 2 mm -> four samples at 1 mm. Source coordinates
    // 0, 0.5, 1.0, 1.5 interpolate/clamp to {0, 1, 2, 2}.
    Volume v;
    v.dim = {2, 1, 1};
    v.spacing = {2.0f, 1.0f, 1.0f};
    v.data = {0.0f, 2.0f};
    const Volume r = resample_isotropic(v, 1.0);
    CHECK(r.dim == std::array<std::int64_t, 3>{4, 1, 1});
    CHECK(r.spacing == std::array<float, 3>{1, 1, 1});
    CHECK(r.data == std::vector<float>{0.0f, 1.0f, 2.0f, 2.0f});
}

TEST_CASE("resampling a mask keeps it binary and scales the extents") {
    const PatientCase c = generate_phantom(3, 32, 2);
    const Volume r = resample_isotropic(*c.gtv, 1.0);
    // round(32 * 0.98) = 31, round(32 * 3.27) = 105
    CHECK(r.dim == std::array<std::int64_t, 3>{31, 31, 105});
    for (float x : r.data) CHECK((x == 0.0f || x == 1.0f));
    // voxel volume shrinks by 0.98^2 * 3.27, so the count grows roughly 3.1x
    double before = 0, after = 0;
    for (float x : c.gtv->data) before += x;
    for (float x : r.data) after += x;
    REQUIRE(before > 0);
    CHECK(after / before > 2.0);
    CHECK(after / before < 4.5);
}

TEST_CASE("resampling rejects a non-positive target") {
    const Volume v = make_volume({4, 4, 4}, Modality::PET, 1);
    CHECK_THROWS_WITH_AS(resample_isotropic(v, 0.0), doctest::Contains("positive"),
                         Error);
}

TEST_CASE("ct normalization maps the clip window endpoints exactly") {
    Volume v = make_volume({5, 1, 1}, Modality::CT, 2);
    v.data = {-2000.0f, -1024.0f, 0.0f, 512.0f, 2000.0f};
    const Volume n = ct_normalize(v);
    CHECK(n.data == std::vector<float>{-1.0f, -1.0f, 0.0f, 0.5f, 1.0f});
    CHECK(n.ct_normalized);

    // flagged volumes pass through untouched, so the pipeline is idempotent
    const Volume again = ct_normalize(n);
    CHECK(same_volume(n, again));

    const Volume pet = make_volume({2, 2, 2}, Modality::PET, 3);
    CHECK_THROWS_WITH_AS(ct_normalize(pet), doctest::Contains("CT"), Error);
}

TEST_CASE("pet z-score standardizes values with a population std") {
    std::vector<float> v{1.0f, 2.0f, 3.0f};
    pet_zscore(v);
    CHECK(std::abs(v[0] + 1.2247448f) < 1e-6);
    CHECK(v[1] == 0.0f);
    CHECK(std::abs(v[2] - 1.2247448f) < 1e-6);

    std::vector<float> flat(64, 5.0f);
    pet_zscore(flat);
    for (float x : flat) CHECK(x == 0.0f);

    Rng rng(77);
    std::vector<float> big(4096);
    for (float& x : big) x = float(rng.uniform(0.0, 9.0));
    pet_zscore(big);
    double mean = 0, var = 0;
    for (float x : big) mean += x;
    mean /= double(big.size());
    for (float x : big) var += (x - mean) * (x - mean);
    var /= double(big.size());
    CHECK(std::abs(mean) < 1e-4);
    CHECK(std::abs(var - 1.0) < 1e-3);

    std::vector<float> empty;
    CHECK_THROWS_WITH_AS(pet_zscore(empty), doctest::Contains("empty"), Error);
}

TEST_CASE("sampler: whole-volume patch always lands at the origin corner") {
    const PatientCase c = [] {
        PatientCase raw = generate_phantom(7, 32, 1);
        raw.ct = ct_normalize(raw.ct);
        return raw;
    }();
    SamplerConfig cfg;
    cfg.patch = {32, 32, 32};
    for (double p : {0.0, 1.0}) {
        cfg.p_tumor = p;
        Rng rng(123);
        const PatchSample s = sample_patch(c, cfg, rng);
        CHECK(s.corner == std::array<std::int64_t, 3>{0, 0, 0});
        CHECK(s.contains_tumor);
        CHECK(s.label.shape() == Shape{1, 1, 32, 32, 32});
    }
}

TEST_CASE("sampler: tumor branch windows always cover a mask voxel") {
    // Single tumor voxel at (20, 21, 22); every tumor-branch window of
    // extent 16 must contain it, which pins each corner axis to
    // [voxel - 15, voxel].
    const PatientCase c = make_case({48, 48, 48}, {{20, 21, 22}});
    SamplerConfig cfg;
    cfg.patch = {16, 16, 16};
    cfg.p_tumor = 1.0;
    Rng rng(17);
    std::set<std::array<std::int64_t, 3>> corners;
    for (int i = 0; i < 200; ++i) {
        const PatchSample s = sample_patch(c, cfg, rng);
        CHECK(s.contains_tumor);
        for (int a = 0; a < 3; ++a) {
            const std::int64_t voxel = a == 0 ? 20 : a == 1 ? 21 : 22;
            CHECK(s.corner[std::size_t(a)] >= voxel - 15);
            CHECK(s.corner[std::size_t(a)] <= voxel);
        }
        corners.insert(s.corner);
    }
    CHECK(corners.size() > 50);  // uniform over 16^3 candidates, not stuck
}

TEST_CASE("sampler: tumor-free cases fall back to uniform windows") {
    PatientCase c = generate_phantom(9, 32, 0);
    c.ct = ct_normalize(c.ct);
    SamplerConfig cfg;
    cfg.patch = {16, 16, 16};
    cfg.p_tumor = 0.9;
    Rng rng(5);
    std::set<std::array<std::int64_t, 3>> corners;
    for (int i = 0; i < 20; ++i) {
        const PatchSample s = sample_patch(c, cfg, rng);
        CHECK(!s.contains_tumor);
        corners.insert(s.corner);
    }
    CHECK(corners.size() > 1);
}

TEST_CASE("sampler: tumor patch fraction over 1000 draws sits in [0.87, 0.95]") {
    PatientCase c = generate_phantom(13, 64, 1);
    c.ct = ct_normalize(c.ct);
    SamplerConfig cfg;
    cfg.patch = {16, 16, 16};
    cfg.p_tumor = 0.9;
    Rng rng(2026);
    int tumor = 0;
    for (int i = 0; i < 1000; ++i) tumor += sample_patch(c, cfg, rng).contains_tumor;
    const double fraction = tumor / 1000.0;
    CHECK(fraction >= 0.87);
    CHECK(fraction <= 0.95);
}

TEST_CASE("sampler: volumes smaller than the patch are padded per modality") {
    PatientCase c = make_case({24, 24, 24}, {{10, 10, 10}});
    SamplerConfig cfg;
    cfg.patch = {32, 32, 32};
    cfg.p_tumor = 1.0;
    Rng rng(8);
    const PatchSample s = sample_patch(c, cfg, rng);
    CHECK(s.corner == std::array<std::int64_t, 3>{0, 0, 0});
    CHECK(s.contains_tumor);
    const auto& ct = s.ct.values();
    const auto& label = s.label.values();
    std::size_t i = 0;
    for (std::int64_t z = 0; z < 32; ++z)
        for (std::int64_t y = 0; y < 32; ++y)
            for (std::int64_t x = 0; x < 32; ++x, ++i)
                if (x >= 24 || y >= 24 || z >= 24) {
                    CHECK(ct[i] == -1.0f);
                    CHECK(label[i] == 0.0f);
                }
}

TEST_CASE("sampler: the PET patch is standardized and draws are deterministic") {
    PatientCase c = generate_phantom(21, 32, 1);
    c.ct = ct_normalize(c.ct);
    SamplerConfig cfg;
    cfg.patch = {16, 16, 16};
    Rng rng_a(99), rng_b(99);
    const PatchSample a = sample_patch(c, cfg, rng_a);
    const PatchSample b = sample_patch(c, cfg, rng_b);
    CHECK(a.corner == b.corner);
    CHECK(std::equal(a.pet.values().begin(), a.pet.values().end(),
                     b.pet.values().begin(), b.pet.values().end()));
    CHECK(std::equal(a.ct.values().begin(), a.ct.values().end(),
                     b.ct.values().begin(), b.ct.values().end()));
    CHECK(std::equal(a.label.values().begin(), a.label.values().end(),
                     b.label.values().begin(), b.label.values().end()));

    double mean = 0;
    for (float x : a.pet.values()) mean += x;
    mean /= double(a.pet.numel());
    CHECK(std::abs(mean) < 1e-4);
}

TEST_CASE("sampler: rejects un-normalized CT and missing masks") {
    PatientCase c = generate_phantom(4, 32, 1);
    SamplerConfig cfg;
    cfg.patch = {16, 16, 16};
    Rng rng(1);
    CHECK_THROWS_WITH_AS(sample_patch(c, cfg, rng), doctest::Contains("normalize"),
                         Error);
    c.ct = ct_normalize(c.ct);
    c.gtv.reset();
    CHECK_THROWS_WITH_AS(sample_patch(c, cfg, rng), doctest::Contains("mask"), Error);

    PatientCase ok = generate_phantom(4, 32, 1);
    ok.ct = ct_normalize(ok.ct);
    SamplerConfig bad;
    bad.patch = {15, 16, 16};
    CHECK_THROWS_WITH_AS(sample_patch(ok, bad, rng), doctest::Contains("16"), Error);
}

TEST_CASE("crop_bbox with the full-extent box is the identity") {
    PatientCase c = generate_phantom(6, 32, 1);
    c.bbox.lo = {0, 0, 0};
    c.bbox.hi = c.pet.dim;
    const PatientCase r = crop_bbox(c);
    CHECK(same_volume(r.pet, c.pet));
    CHECK(same_volume(r.ct, c.ct));
    CHECK(same_volume(*r.gtv, *c.gtv));
}

TEST_CASE("crop_bbox extracts the box and shifts the origin") {
    PatientCase c = generate_phantom(11, 48, 2);
    const BBox& b = c.bbox;
    const PatientCase r = crop_bbox(c);
    for (int a = 0; a < 3; ++a) {
        CHECK(r.pet.dim[std::size_t(a)] == b.extent(a));
        CHECK(r.pet.origin[std::size_t(a)] ==
              float(double(b.lo[std::size_t(a)]) * double(c.pet.spacing[std::size_t(a)])));
    }
    // the phantom bbox covers every lesion voxel, so no mask mass is lost
    double total = 0, inside = 0;
    for (float x : c.gtv->data) total += x;
    for (float x : r.gtv->data) inside += x;
    CHECK(inside == total);
    // spot-check values against direct indexing
    CHECK(r.pet.at(0, 0, 0) == c.pet.at(b.lo[0], b.lo[1], b.lo[2]));
    CHECK(r.ct.at(1, 2, 0) == c.ct.at(b.lo[0] + 1, b.lo[1] + 2, b.lo[2]));
    CHECK(r.bbox.lo == std::array<std::int64_t, 3>{0, 0, 0});
    CHECK(r.bbox.hi == r.pet.dim);

    PatientCase bad = generate_phantom(11, 48, 2);
    bad.bbox.hi[0] = 49;
    CHECK_THROWS_WITH_AS(crop_bbox(bad), doctest::Contains("exceeds"), Error);
}

TEST_CASE("phantom generation is deterministic per seed") {
    const PatientCase a = generate_phantom(42, 32, 2);
    const PatientCase b = generate_phantom(42, 32, 2);
    CHECK(same_volume(a.pet, b.pet));
    CHECK(same_volume(a.ct, b.ct));
    CHECK(same_volume(*a.gtv, *b.gtv));
    CHECK(a.bbox.lo == b.bbox.lo);
    CHECK(a.bbox.hi == b.bbox.hi);
    CHECK(a.case_id == "phantom42");
    CHECK(a.center_id == "CHUM");  // 42 % 5 = 2

    const PatientCase c = generate_phantom(43, 32, 2);
    CHECK(c.pet.data != a.pet.data);
}

TEST_CASE("phantom lesions are hot, masked exactly, and boxed with margin") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const PatientCase c = generate_phantom(seed, 32, 2);
        double tumor_sum = 0, tumor_n = 0, bg_sum = 0, bg_n = 0;
        for (std::size_t i = 0; i < c.pet.data.size(); ++i) {
            if (c.gtv->data[i] != 0.0f) {
                tumor_sum += c.pet.data[i];
                tumor_n += 1;
            } else {
                bg_sum += c.pet.data[i];
                bg_n += 1;
            }
        }
        REQUIRE(tumor_n > 0);  // every seeded lesion intersects the grid
        CHECK(tumor_sum / tumor_n > 3.0 * (bg_sum / bg_n));
        for (float x : c.ct.data) {
            CHECK(x >= -1000.0f);
            CHECK(x <= 1000.0f);
        }
        // every mask voxel lies inside the declared box
        for (std::int64_t z = 0; z < 32; ++z)
            for (std::int64_t y = 0; y < 32; ++y)
                for (std::int64_t x = 0; x < 32; ++x)
                    if (c.gtv->at(x, y, z) != 0.0f) {
                        REQUIRE(x >= c.bbox.lo[0]);
                        REQUIRE(x < c.bbox.hi[0]);
                        REQUIRE(y >= c.bbox.lo[1]);
                        REQUIRE(y < c.bbox.hi[1]);
                        REQUIRE(z >= c.bbox.lo[2]);
                        REQUIRE(z < c.bbox.hi[2]);
                    }
    }
    CHECK_THROWS_WITH_AS(generate_phantom(1, 24, 1), doctest::Contains("16"), Error);
}

TEST_CASE("manifest lines round-trip and bad lines are rejected") {
    const fs::path p = test_dir() / "manifest.txt";
    std::vector<CaseRecord> recs(2);
    recs[0] = {"caseA", "CHGJ", "a_pet.nii.gz", "a_ct.nii.gz", "a_gtv.nii.gz",
               BBox{{1, 2, 3}, {4, 5, 6}}};
    recs[1] = {"caseB", "CHUV", "b_pet.nii", "b_ct.nii", "-", BBox{{0, 0, 0}, {9, 9, 9}}};
    manifest_write(recs, p.string());
    const auto back = manifest_read(p.string());
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back[i].case_id == recs[i].case_id);
        CHECK(back[i].center_id == recs[i].center_id);
        CHECK(back[i].pet_path == recs[i].pet_path);
        CHECK(back[i].ct_path == recs[i].ct_path);
        CHECK(back[i].gtv_path == recs[i].gtv_path);
        CHECK(back[i].bbox.lo == recs[i].bbox.lo);
        CHECK(back[i].bbox.hi == recs[i].bbox.hi);
    }

    std::ofstream bad(test_dir() / "bad_manifest.txt");
    bad << "# comment\n\ncaseX CHGJ pet ct - 0 0 0\n";
    bad.close();
    CHECK_THROWS_WITH_AS(manifest_read((test_dir() / "bad_manifest.txt").string()),
                         doctest::Contains("line 3"), Error);
    CHECK_THROWS_WITH_AS(manifest_read("/nonexistent/manifest.txt"),
                         doctest::Contains("open"), Error);
}

TEST_CASE("store_case and load_case round-trip a phantom through disk") {
    const fs::path dir = test_dir() / "cases";
    fs::remove_all(dir);
    PatientCase c = generate_phantom(33, 32, 1);
    c.ct = ct_normalize(c.ct);  // the flag must survive the disk round-trip
    const CaseRecord rec = store_case(c, dir.string());
    CHECK(rec.gtv_path == dir.string() + "/phantom33_gtv.nii.gz");

    const PatientCase r = load_case(rec);
    CHECK(r.case_id == c.case_id);
    CHECK(r.center_id == c.center_id);
    CHECK(same_volume(r.pet, c.pet));
    CHECK(same_volume(r.ct, c.ct));
    REQUIRE(r.gtv.has_value());
    CHECK(same_volume(*r.gtv, *c.gtv));
    CHECK(r.bbox.lo == c.bbox.lo);
    CHECK(r.bbox.hi == c.bbox.hi);

    // a case without a mask stores "-" and loads back without one
    PatientCase test_case = c;
    test_case.case_id = "phantom33test";
    test_case.gtv.reset();
    const CaseRecord rec2 = store_case(test_case, dir.string());
    CHECK(rec2.gtv_path == "-");
    CHECK(!load_case(rec2).gtv.has_value());
}

TEST_CASE("preprocessing is idempotent end to end") {
    PatientCase c = generate_phantom(55, 32, 1);
    const Volume ct1 = ct_normalize(resample_isotropic(c.ct, 1.0));
    const Volume ct2 = ct_normalize(resample_isotropic(ct1, 1.0));
    CHECK(same_volume(ct1, ct2));
    const Volume pet1 = resample_isotropic(c.pet, 1.0);
    CHECK(same_volume(pet1, resample_isotropic(pet1, 1.0)));
    const Volume gtv1 = resample_isotropic(*c.gtv, 1.0);
    CHECK(same_volume(gtv1, resample_isotropic(gtv1, 1.0)));
}

TEST_CASE("volume/tensor bridging preserves layout") {
    Volume v = make_volume({3, 4, 5}, Modality::PET, 61);
    const TensorF t = volume_to_tensor(v);
    REQUIRE(t.shape() == Shape{1, 1, 5, 4, 3});
    // tensor (d,h,w) = volume (z,y,x)
    CHECK(t.values()[std::size_t((2 * 4 + 1) * 3 + 2)] == v.at(2, 1, 2));
    const Volume back = tensor_to_volume(t, v);
    CHECK(same_volume(back, v));
}
