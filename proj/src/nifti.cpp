// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// NIfTI-1 volume I/O. Single-file .nii / .nii.gz, little-endian only.
// The writer emits float32 (uint8 for masks) with an identity sform and a
// descrip tag that persists modality and the CT-normalization flag; the
// reader additionally accepts int16/float64 and applies scl_slope/scl_inter.

#include "voxseg/volume.hpp"

#include <zlib.h>

#include <bit>
#include <cstddef>
#include <cstdio>
#include <cstring>
#include <sstream>

namespace voxseg {
namespace {

static_assert(std::endian::native == std::endian::little,
              "NIfTI I/O assumes a little-endian host");

// On-disk header, 348 bytes. Field types are chosen so the struct lays out
// with no padding; the offsets below are the format's, asserted verbatim.
struct Nifti1Header {
    std::int32_t sizeof_hdr;                 // 0: must be 348
    char data_type[10];                      // 4: unused
    char db_name[18];                        // 14: unused
    std::int32_t extents;                    // 32: unused
    std::int16_t session_error;              // 36: unused
    char regular;                            // 38: unused
    char dim_info;                           // 39
    std::int16_t dim[8];                     // 40: dim[0]=rank, dim[1..]=extents
    float intent_p1, intent_p2, intent_p3;   // 56
    std::int16_t intent_code;                // 68
    std::int16_t datatype;                   // 70
    std::int16_t bitpix;                     // 72
    std::int16_t slice_start;                // 74
    float pixdim[8];                         // 76: pixdim[1..3] = spacing (mm)
    float vox_offset;                        // 108: payload start
    float scl_slope;                         // 112: 0 means "no scaling"
    float scl_inter;                         // 116
    std::int16_t slice_end;                  // 120
    char slice_code;                         // 122
    char xyzt_units;                         // 123
    float cal_max, cal_min;                  // 124
    float slice_duration;                    // 132
    float toffset;                           // 136
    std::int32_t glmax, glmin;               // 140: unused
    char descrip[80];                        // 148
    char aux_file[24];                       // 228
    std::int16_t qform_code;                 // 252
    std::int16_t sform_code;                 // 254
    float quatern_b, quatern_c, quatern_d;   // 256
    float qoffset_x, qoffset_y, qoffset_z;   // 268
    float srow_x[4];                         // 280
    float srow_y[4];                         // 296
    float srow_z[4];                         // 312
    char intent_name[16];                    // 328
    char magic[4];                           // 344: "n+1\0"
};
static_assert(sizeof(Nifti1Header) == 348);
static_assert(offsetof(Nifti1Header, dim) == 40);
static_assert(offsetof(Nifti1Header, datatype) == 70);
static_assert(offsetof(Nifti1Header, pixdim) == 76);
static_assert(offsetof(Nifti1Header, vox_offset) == 108);
static_assert(offsetof(Nifti1Header, scl_slope) == 112);
static_assert(offsetof(Nifti1Header, descrip) == 148);
static_assert(offsetof(Nifti1Header, sform_code) == 254);
static_assert(offsetof(Nifti1Header, srow_x) == 280);
static_assert(offsetof(Nifti1Header, magic) == 344);

constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;

// gzopen reads gzip-compressed and plain files transparently; for writing,
// "T" bypasses compression so a .nii comes out as raw bytes.
class GzFile {
  public:
    GzFile(const std::string& path, const char* mode) : path_(path) {
        f_ = gzopen(path.c_str(), mode);
        require(f_ != nullptr, "nifti: cannot open " + path);
    }
    ~GzFile() {
        if (f_) gzclose(f_);
    }
    GzFile(const GzFile&) = delete;
    GzFile& operator=(const GzFile&) = delete;

    void read_exact(void* buf, std::size_t n) {
        auto* p = static_cast<unsigned char*>(buf);
        while (n > 0) {
            const unsigned chunk = unsigned(std::min<std::size_t>(n, 1u << 28));
            const int got = gzread(f_, p, chunk);
            require(got > 0, "nifti: truncated file " + path_);
            p += got;
            n -= std::size_t(got);
        }
    }

    void skip(std::size_t n) {
        char scratch[4096];
        while (n > 0) {
            const unsigned chunk = unsigned(std::min<std::size_t>(n, sizeof scratch));
            const int got = gzread(f_, scratch, chunk);
            require(got > 0, "nifti: truncated file " + path_);
            n -= std::size_t(got);
        }
    }

    void write_exact(const void* buf, std::size_t n) {
        auto* p = static_cast<const unsigned char*>(buf);
        while (n > 0) {
            const unsigned chunk = unsigned(std::min<std::size_t>(n, 1u << 28));
            const int put = gzwrite(f_, p, chunk);
            require(put == int(chunk), "nifti: short write to " + path_);
            p += put;
            n -= std::size_t(put);
        }
    }

  private:
    std::string path_;
    gzFile f_ = nullptr;
};

// "voxseg <MODALITY> norm=<0|1>", e.g. "voxseg CT norm=1". Files written by
// other tools simply lack the tag and default to PET / not-normalized;
// load_case then assigns the modality from the manifest slot.
void parse_descrip(const char* descrip, Volume& v) {
    const std::string d(descrip, strnlen(descrip, 80));
    std::istringstream iss(d);
    std::string tag, mod;
    if (!(iss >> tag >> mod) || tag != "voxseg") return;
    if (mod == "CT")
        v.modality = Modality::CT;
    else if (mod == "MASK")
        v.modality = Modality::MASK;
    else
        v.modality = Modality::PET;
    v.ct_normalized = d.find("norm=1") != std::string::npos;
}

}  // namespace

Volume volume_read(const std::string& path) {
    GzFile f(path, "rb");
    Nifti1Header h{};
    f.read_exact(&h, sizeof h);

    if (h.sizeof_hdr != 348) {
        require(h.sizeof_hdr != 0x5C010000,
                "nifti: big-endian file is not supported: " + path);
        throw Error("nifti: not a NIfTI-1 file (header size " +
                    std::to_string(h.sizeof_hdr) + "): " + path);
    }
    require(std::memcmp(h.magic, "n+1\0", 4) == 0,
            "nifti: unsupported magic (expected single-file \"n+1\"): " + path);

    const int rank = h.dim[0];
    require(rank >= 1 && rank <= 7, "nifti: invalid dim[0]: " + path);
    Volume v;
    for (int a = 0; a < 3; ++a) {
        v.dim[std::size_t(a)] = a < rank ? h.dim[a + 1] : 1;
        require(v.dim[std::size_t(a)] >= 1, "nifti: non-positive extent: " + path);
        const float s = a < rank ? h.pixdim[a + 1] : 1.0f;
        require(s > 0.0f, "nifti: non-positive pixdim: " + path);
        v.spacing[std::size_t(a)] = s;
    }
    for (int a = 3; a < rank; ++a)
        require(h.dim[a + 1] <= 1, "nifti: only scalar 3-D volumes are supported: " + path);

    if (h.sform_code > 0)
        v.origin = {h.srow_x[3], h.srow_y[3], h.srow_z[3]};
    else if (h.qform_code > 0)
        v.origin = {h.qoffset_x, h.qoffset_y, h.qoffset_z};

    std::size_t bytes_per_sample = 0;
    switch (h.datatype) {
        case kDtUint8: bytes_per_sample = 1; break;
        case kDtInt16: bytes_per_sample = 2; break;
        case kDtFloat32: bytes_per_sample = 4; break;
        case kDtFloat64: bytes_per_sample = 8; break;
        default:
            throw Error("nifti: unsupported datatype " + std::to_string(h.datatype) +
                        ": " + path);
    }

    const std::int64_t off = std::int64_t(h.vox_offset);
    require(off >= 348, "nifti: vox_offset points into the header: " + path);
    f.skip(std::size_t(off) - sizeof h);

    const std::size_t n = std::size_t(v.numel());
    std::vector<unsigned char> raw(n * bytes_per_sample);
    f.read_exact(raw.data(), raw.size());

    v.data.resize(n);
    switch (h.datatype) {
        case kDtUint8:
            for (std::size_t i = 0; i < n; ++i) v.data[i] = float(raw[i]);
            break;
        case kDtInt16: {
            std::vector<std::int16_t> s(n);
            std::memcpy(s.data(), raw.data(), raw.size());
            for (std::size_t i = 0; i < n; ++i) v.data[i] = float(s[i]);
            break;
        }
        case kDtFloat32:
            std::memcpy(v.data.data(), raw.data(), raw.size());
            break;
        case kDtFloat64: {
            std::vector<double> d(n);
            std::memcpy(d.data(), raw.data(), raw.size());
            for (std::size_t i = 0; i < n; ++i) v.data[i] = float(d[i]);
            break;
        }
    }

    // scl_slope == 0 means "no scaling stored"; the identity transform is
    // skipped outright so untouched payloads stay bit-exact.
    if (h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f))
        for (float& x : v.data)
            x = float(double(x) * double(h.scl_slope) + double(h.scl_inter));

    parse_descrip(h.descrip, v);
    v.validate();
    return v;
}

void volume_write(const Volume& v, const std::string& path) {
    v.validate();
    const bool mask = v.modality == Modality::MASK;

    Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    for (int a = 0; a < 3; ++a) {
        require(v.dim[std::size_t(a)] <= 0x7fff, "nifti: extent exceeds int16 range");
        h.dim[a + 1] = std::int16_t(v.dim[std::size_t(a)]);
        h.dim[a + 4] = 1;
    }
    h.dim[7] = 1;
    h.datatype = mask ? kDtUint8 : kDtFloat32;
    h.bitpix = mask ? 8 : 32;
    h.pixdim[0] = 1.0f;
    for (int a = 0; a < 3; ++a) h.pixdim[a + 1] = v.spacing[std::size_t(a)];
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = 2;  // millimetres
    std::snprintf(h.descrip, sizeof h.descrip, "voxseg %s norm=%d",
                  modality_name(v.modality), v.ct_normalized ? 1 : 0);
    h.sform_code = 1;
    h.srow_x[0] = v.spacing[0];
    h.srow_y[1] = v.spacing[1];
    h.srow_z[2] = v.spacing[2];
    h.srow_x[3] = v.origin[0];
    h.srow_y[3] = v.origin[1];
    h.srow_z[3] = v.origin[2];
    std::memcpy(h.magic, "n+1\0", 4);

    GzFile f(path, path.ends_with(".gz") ? "wb6" : "wT");
    f.write_exact(&h, sizeof h);
    const char pad[4] = {0, 0, 0, 0};
    f.write_exact(pad, sizeof pad);

    if (mask) {
        std::vector<unsigned char> raw(v.data.size());
        for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = v.data[i] != 0.0f;
        f.write_exact(raw.data(), raw.size());
    } else {
        f.write_exact(v.data.data(), v.data.size() * sizeof(float));
    }
}

}  // namespace voxseg
