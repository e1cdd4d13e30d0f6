// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Inference: single-model prediction over bounding-box crops with
// divisibility padding and a tiled sliding-window fallback, multi-model
// probability averaging with 0.5 thresholding, split construction
// (leave-one-center-out and seeded random), and evaluation reports.

#pragma once

#include <string>
#include <vector>

#include "voxseg/losses.hpp"
#include "voxseg/net.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

struct EnsembleConfig {
    double threshold = 0.5;
    // Averaging space: voxelwise probability mean by default; the logit-mean
    // alternative is kept behind a flag for ablations.
    bool logit_mean = false;
    // Crops whose padded extent exceeds tile_extent on any axis fall back to
    // a sliding window of tile_extent/tile_stride with mean-overlap blending.
    std::int64_t tile_extent = 144;
    std::int64_t tile_stride = 96;

    bool operator==(const EnsembleConfig&) const = default;

    void validate() const {
        require(threshold > 0.0 && threshold < 1.0,
                "ensemble: threshold must lie strictly inside (0, 1)");
        require(tile_extent >= 16 && tile_extent % 16 == 0,
                "ensemble: tile extent must be a positive multiple of 16");
        require(tile_stride >= 1 && tile_stride <= tile_extent,
                "ensemble: tile stride must lie in [1, tile extent]");
    }
};

// Forward pass over a [1,C,D,H,W] input whose spatial extents are multiples
// of the model's pooling divisor. Inputs within tile_extent run in one
// pass; larger inputs are covered by overlapping tiles whose probability
// maps are averaged voxelwise (sum and count accumulate in double, one
// rounding into the result).
TensorF sliding_forward(const ModelParams<float>& params, const ModelConfig& mcfg,
                        const TensorF& x, std::int64_t tile_extent,
                        std::int64_t tile_stride);

// Probability map over the case's bounding-box crop: crop, Z-score the PET
// over the crop, pad symmetrically to the pooling divisor (PET 0, CT -1),
// forward, strip the padding. The result mirrors the crop's grid metadata.
Volume predict_case(const ModelParams<float>& params, const ModelConfig& mcfg,
                    const PatientCase& c, const EnsembleConfig& ecfg = {});

// Voxelwise mean of the members' probability maps. Per voxel the member
// values are sorted before summation, so the result is bit-exact under any
// member permutation, and a mean of identical members reproduces the single
// model exactly.
Volume ensemble_probability(const std::vector<ModelParams<float>>& members,
                            const ModelConfig& mcfg, const PatientCase& c,
                            const EnsembleConfig& ecfg = {});

// ensemble_probability followed by the threshold: mask = (mean >= threshold).
Volume ensemble_predict(const std::vector<ModelParams<float>>& members,
                        const ModelConfig& mcfg, const PatientCase& c,
                        const EnsembleConfig& ecfg = {});

enum class SplitKind { LeaveOneCenterOut, Random };

struct SplitFold {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::string held_center;  // empty for random folds
};

struct SplitPlan {
    SplitKind kind = SplitKind::LeaveOneCenterOut;
    std::vector<SplitFold> folds;
};

// Leave-one-center-out: one fold per center (sorted by center id), holding
// that center's cases out for validation. Random: n_folds independent
// seeded shuffles with ceil(val_fraction * n) validation cases each.
SplitPlan make_splits(const std::vector<CaseRecord>& cases, SplitKind kind,
                      std::int64_t n_random_folds = 1, double val_fraction = 0.2,
                      std::uint64_t seed = 0);

struct EvaluationReport {
    std::vector<std::pair<std::string, MetricsReport>> per_case;      // case id
    std::vector<std::pair<std::string, MetricsSummary>> per_center;   // center id
    // Mean over the center means: the convention used by per-center result
    // tables, which weights centers equally regardless of case count.
    MetricsReport center_average;
    // Plain per-case aggregate over the whole set, for comparison.
    MetricsSummary pooled;
};

// Score predicted masks against the cases' reference masks, grouped by
// acquisition center. Mask i corresponds to cases[i].
EvaluationReport evaluate(const std::vector<PatientCase>& cases,
                          const std::vector<Volume>& masks);

// Human-readable report: per-case lines, per-center summaries, and the two
// overall aggregates.
std::vector<std::string> evaluation_lines(const EvaluationReport& report);

}  // namespace voxseg
