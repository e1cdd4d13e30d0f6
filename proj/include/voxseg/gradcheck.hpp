// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference verification of the reverse-mode gradients. Runs at
// double precision with central differences; every differentiable op gets a
// named check so the CLI can run the whole battery.

#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "voxseg/common.hpp"
#include "voxseg/tensor.hpp"

namespace voxseg {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    std::int64_t coords_checked = 0;
    // coordinates excluded because the probe straddled a non-smooth point
    // (see skip_kinks below); always 0 when the guard is off
    std::int64_t coords_skipped = 0;
    bool passed = false;
    double tolerance = 0.0;
};

// Which coordinates to probe when max_coords_per_input caps the count.
// Random is a seeded uniform subsample; Largest takes the coordinates with
// the biggest analytic gradient magnitude, where the relative-error
// comparison is numerically meaningful (central differences cannot resolve
// coordinates whose true gradient sits near the rounding floor).
enum class CoordPick { Random, Largest };

// fn maps leaf tensors (requires_grad set by the caller's builder) to a
// scalar loss. Every coordinate of every leaf is perturbed by +/-eps unless
// max_coords_per_input caps the count, in which case a deterministic
// subsample is used (large composite checks).
//
// skip_kinks: losses that route through max-pooling are piecewise smooth; a
// probe step that flips an argmax makes the central difference measure a
// different linear piece than the analytic gradient reports, which is a
// property of finite differencing, not a gradient defect. With the guard on,
// a coordinate that fails the tolerance is re-examined: if its one-sided
// slopes disagree badly the step straddled such a switch and the coordinate
// is skipped (counted in coords_skipped). Self-consistent finite differences
// that disagree with the analytic gradient still fail.
inline GradCheckResult grad_check(
    const std::string& name,
    const std::function<TensorD(std::vector<TensorD>&)>& fn,
    const std::vector<TensorD>& inputs, double eps = 1e-6, double tol = 1e-6,
    std::int64_t max_coords_per_input = -1, std::uint64_t pick_seed = 17,
    CoordPick pick = CoordPick::Random, bool skip_kinks = false) {
    GradCheckResult res;
    res.name = name;
    res.tolerance = tol;

    // Analytic pass.
    std::vector<TensorD> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) {
        TensorD leaf = t.detached();
        leaf.set_requires_grad(true);
        leaves.push_back(leaf);
    }
    TensorD loss = fn(leaves);
    backward(loss);

    for (std::size_t li = 0; li < leaves.size(); ++li) {
        const std::int64_t n = leaves[li].numel();
        std::vector<std::int64_t> coords;
        if (max_coords_per_input > 0 && n > max_coords_per_input) {
            if (pick == CoordPick::Largest) {
                const auto& g = leaves[li].grad();
                std::vector<std::int64_t> all(static_cast<std::size_t>(n));
                std::iota(all.begin(), all.end(), 0);
                std::partial_sort(all.begin(), all.begin() + max_coords_per_input, all.end(),
                                  [&](std::int64_t a, std::int64_t b) {
                                      return std::abs(g[std::size_t(a)]) >
                                             std::abs(g[std::size_t(b)]);
                                  });
                coords.assign(all.begin(), all.begin() + max_coords_per_input);
            } else {
                Rng rng(mix_seed(pick_seed, li));
                std::vector<std::int64_t> all(static_cast<std::size_t>(n));
                std::iota(all.begin(), all.end(), 0);
                for (std::int64_t i = 0; i < max_coords_per_input; ++i) {
                    std::int64_t j = i + rng.uniform_int(n - i);
                    std::swap(all[std::size_t(i)], all[std::size_t(j)]);
                    coords.push_back(all[std::size_t(i)]);
                }
            }
        } else {
            coords.resize(std::size_t(n));
            std::iota(coords.begin(), coords.end(), 0);
        }

        auto analytic = leaves[li].grad();
        for (std::int64_t ci : coords) {
            const auto idx = std::size_t(ci);
            std::vector<TensorD> probe;
            probe.reserve(inputs.size());
            for (const auto& t : inputs) probe.push_back(t.detached());

            NoGradGuard ng;
            const double x0 = probe[li].values()[idx];
            probe[li].values()[idx] = x0 + eps;
            const double fp = fn(probe).item();
            probe[li].values()[idx] = x0 - eps;
            const double fm = fn(probe).item();
            probe[li].values()[idx] = x0;

            const double fd = (fp - fm) / (2.0 * eps);
            const double a = analytic[idx];
            const double rel = std::abs(a - fd) / std::max(std::abs(a), 1e-8);
            if (skip_kinks && rel >= tol) {
                // For a slope switch at offset d inside the probe window the
                // central-difference error is (s+ - s-)(eps-d)/(2 eps) while
                // the one-sided slopes differ by twice that, so the split
                // explains the disagreement; on a smooth stretch the split is
                // O(eps * f'') and cannot.
                const double f0 = fn(probe).item();
                const double split = std::abs((fp - f0) - (f0 - fm)) / eps;
                if (split > 0.5 * std::abs(a - fd)) {
                    ++res.coords_skipped;
                    continue;
                }
            }
            res.max_rel_err = std::max(res.max_rel_err, rel);
            ++res.coords_checked;
        }
    }
    res.passed = res.max_rel_err < tol;
    return res;
}

// Registry so the CLI `gradcheck` command and the tests share one battery.
struct GradCheckCase {
    std::string name;
    std::function<GradCheckResult()> run;
};

inline std::vector<GradCheckCase>& grad_check_registry() {
    static std::vector<GradCheckCase> cases;
    return cases;
}

inline void register_grad_check(std::string name, std::function<GradCheckResult()> run) {
    grad_check_registry().push_back({std::move(name), std::move(run)});
}

}  // namespace voxseg
