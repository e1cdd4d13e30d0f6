// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Dataset manifest: one whitespace-separated line per case with
// identifiers, the three volume paths ("-" for a missing mask), and the
// region-of-interest box. Blank lines and '#' comments are skipped.

#include "voxseg/volume.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace voxseg {

std::vector<CaseRecord> manifest_read(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "manifest: cannot open " + path);

    std::vector<CaseRecord> records;
    std::string line;
    for (std::int64_t lineno = 1; std::getline(in, line); ++lineno) {
        std::istringstream fields(line);
        std::string first;
        if (!(fields >> first) || first[0] == '#') continue;

        CaseRecord rec;
        rec.case_id = first;
        if (!(fields >> rec.center_id >> rec.pet_path >> rec.ct_path >> rec.gtv_path >>
              rec.bbox.lo[0] >> rec.bbox.lo[1] >> rec.bbox.lo[2] >> rec.bbox.hi[0] >>
              rec.bbox.hi[1] >> rec.bbox.hi[2]))
            throw Error("manifest: malformed line " + std::to_string(lineno) + " in " +
                        path);
        records.push_back(std::move(rec));
    }
    return records;
}

void manifest_write(const std::vector<CaseRecord>& records, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "manifest: cannot open " + path + " for writing");
    out << "# case_id center_id pet ct gtv x0 y0 z0 x1 y1 z1\n";
    for (const CaseRecord& rec : records) {
        out << rec.case_id << ' ' << rec.center_id << ' ' << rec.pet_path << ' '
            << rec.ct_path << ' ' << rec.gtv_path;
        for (int a = 0; a < 3; ++a) out << ' ' << rec.bbox.lo[std::size_t(a)];
        for (int a = 0; a < 3; ++a) out << ' ' << rec.bbox.hi[std::size_t(a)];
        out << '\n';
    }
    require(out.good(), "manifest: write failed for " + path);
}

PatientCase load_case(const CaseRecord& rec) {
    PatientCase c;
    c.case_id = rec.case_id;
    c.center_id = rec.center_id;
    c.pet = volume_read(rec.pet_path);
    c.pet.modality = Modality::PET;
    c.ct = volume_read(rec.ct_path);
    c.ct.modality = Modality::CT;  // keeps the normalization flag from the file
    if (rec.gtv_path != "-") {
        Volume gtv = volume_read(rec.gtv_path);
        gtv.modality = Modality::MASK;
        gtv.validate();
        c.gtv = std::move(gtv);
    }
    c.bbox = rec.bbox;
    return c;
}

CaseRecord store_case(const PatientCase& c, const std::string& dir) {
    std::filesystem::create_directories(dir);
    CaseRecord rec;
    rec.case_id = c.case_id;
    rec.center_id = c.center_id;
    rec.pet_path = dir + "/" + c.case_id + "_pet.nii.gz";
    rec.ct_path = dir + "/" + c.case_id + "_ct.nii.gz";
    volume_write(c.pet, rec.pet_path);
    volume_write(c.ct, rec.ct_path);
    if (c.gtv) {
        rec.gtv_path = dir + "/" + c.case_id + "_gtv.nii.gz";
        volume_write(*c.gtv, rec.gtv_path);
    } else {
        rec.gtv_path = "-";
    }
    rec.bbox = c.bbox;
    return rec;
}

}  // namespace voxseg
