// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Built-in gradient battery: finite-difference checks for every
// differentiable op, runnable from the command line (`voxseg gradcheck`) and
// from the acceptance suite. Each entry pairs an op with a probe functional
// and step size chosen so that every checked coordinate is numerically
// measurable; the comments on individual entries record those choices.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "voxseg/gradcheck.hpp"
#include "voxseg/losses.hpp"
#include "voxseg/net.hpp"

namespace voxseg {

namespace detail {

inline TensorD battery_rand(const Shape& shape, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
    std::vector<double> v(std::size_t(shape_numel(shape)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return TensorD::from_data(shape, std::move(v));
}

}  // namespace detail

// Runs the full battery with draws derived from `seed`; one result per op.
inline std::vector<GradCheckResult> gradient_battery(std::uint64_t seed) {
    using detail::battery_rand;
    Rng rng(mix_seed(seed, 0x67636bULL));
    std::vector<GradCheckResult> results;
    const auto run = [&](const std::string& name,
                         const std::function<TensorD(std::vector<TensorD>&)>& fn,
                         const std::vector<TensorD>& inputs, double tol = 1e-6,
                         bool kinks = false, std::int64_t max_coords = -1,
                         double eps = 1e-6) {
        results.push_back(grad_check(name, fn, inputs, eps, tol, max_coords, seed,
                                     CoordPick::Largest, kinks));
    };

    run("elementwise chain",
        [](std::vector<TensorD>& v) {
            auto q = div(v[0], add_scalar(mul(v[1], v[1]), 1.0));
            return sum(add(mul(sigmoid(v[0]), tanh_(v[1])), q));
        },
        {battery_rand({24}, rng), battery_rand({24}, rng)});
    // Linear in each coordinate, so the central difference is exact and a
    // large step keeps it clear of rounding noise.
    run("matmul", [](std::vector<TensorD>& v) { return sum(matmul(v[0], v[1])); },
        {battery_rand({4, 5}, rng), battery_rand({5, 3}, rng)}, 1e-6, false, -1,
        /*eps=*/1e-3);
    // Quadratic in the input: same exactness argument as above.
    run("channel statistics",
        [](std::vector<TensorD>& v) {
            auto [mu, var] = channel_stats(v[0]);
            return sum(add(mu, var));
        },
        {battery_rand({2, 3, 2, 2, 2}, rng)}, 1e-6, false, -1, /*eps=*/1e-3);
    {
        Conv3dSpec s;
        s.in_channels = 2;
        s.out_channels = 3;
        // Quadratic probe with inputs bounded away from zero: keeps every
        // gradient coordinate well scaled for the finite-difference compare,
        // and the functional stays quadratic per coordinate (exact central
        // difference), so a large step again minimizes rounding noise.
        run("conv3d",
            [s](std::vector<TensorD>& v) {
                const auto y = conv3d(v[0], v[1], std::optional<TensorD>(v[2]), s);
                return sum(mul(y, y));
            },
            {battery_rand({1, 2, 4, 4, 4}, rng, 0.25, 2.0),
             battery_rand({3, 2, 3, 3, 3}, rng), battery_rand({3}, rng)},
            1e-6, false, -1, /*eps=*/1e-3);
    }
    {
        Conv3dSpec s;
        s.in_channels = 3;
        s.out_channels = 2;
        s.stride = {2, 2, 2};
        s.output_padding = {1, 1, 1};
        run("conv3d_transposed",
            [s](std::vector<TensorD>& v) {
                const auto y =
                    conv3d_transposed(v[0], v[1], std::optional<TensorD>(v[2]), s);
                return sum(mul(y, y));
            },
            {battery_rand({1, 3, 3, 3, 3}, rng, 0.25, 2.0),
             battery_rand({3, 2, 3, 3, 3}, rng), battery_rand({2}, rng)},
            1e-6, false, -1, /*eps=*/1e-3);
    }
    run("maxpool3d", [](std::vector<TensorD>& v) { return sum(maxpool3d(v[0])); },
        {battery_rand({1, 2, 4, 4, 4}, rng)}, 1e-6, /*kinks=*/true);
    run("trilinear_resize",
        [](std::vector<TensorD>& v) {
            return sum(trilinear_resize(v[0], Triple{5, 6, 4}));
        },
        {battery_rand({1, 2, 3, 3, 3}, rng)});
    run("global_avg_pool",
        [](std::vector<TensorD>& v) { return sum(global_avg_pool(v[0])); },
        {battery_rand({1, 3, 3, 3, 3}, rng)});
    run("linear",
        [](std::vector<TensorD>& v) { return sum(linear(v[0], v[1], v[2])); },
        {battery_rand({2, 4}, rng), battery_rand({3, 4}, rng), battery_rand({3}, rng)});
    {
        // SE parameters drawn positive and bounded away from zero so the
        // squeeze stays in its responsive range; the relu inside makes the
        // map piecewise smooth in x, handled by the one-sided-slope guard.
        SEBlockParams<double> p;
        p.w1 = battery_rand({2, 4}, rng, 0.25, 1.0);
        p.b1 = battery_rand({2}, rng, 0.25, 1.0);
        p.w2 = battery_rand({4, 2}, rng, 0.25, 1.0);
        p.b2 = battery_rand({4}, rng, 0.25, 1.0);
        run("se_block",
            [p](std::vector<TensorD>& v) mutable {
                p.w1 = v[1];
                p.b1 = v[2];
                p.w2 = v[3];
                p.b2 = v[4];
                const auto y = se_block(v[0], p);
                return sum(mul(y, y));
            },
            {battery_rand({1, 4, 2, 2, 2}, rng, 0.25, 2.0), p.w1, p.b1, p.w2, p.b2},
            1e-6, /*kinks=*/true, -1, /*eps=*/1e-4);
    }
    {
        // Two complementary probes. Normalization makes unweighted sums of
        // the output nearly invariant to the input (zero channel mean, unit
        // channel variance), so each probe weights the output with a fixed
        // random positive tensor c to keep every path measurable, and each
        // checks the leaf group whose gradient that functional provably
        // keeps away from zero. A weighted linear functional gives the shift
        // path d/d(beta) = 3*sum(c) > 0; a weighted quadratic functional
        // with the shift forced to zero gives the scale path
        // d/d(gamma) = 2*gamma*sum(c*xhat^2) > 0, free of cancellation.
        SENormParams<double> p;
        p.gamma_block.w1 = battery_rand({2, 4}, rng, 0.25, 1.0);
        p.gamma_block.b1 = battery_rand({2}, rng, 0.25, 1.0);
        p.gamma_block.w2 = battery_rand({4, 2}, rng, 0.25, 1.0);
        p.gamma_block.b2 = battery_rand({4}, rng, 0.25, 1.0);
        p.beta_block.w1 = battery_rand({2, 4}, rng, 0.25, 1.0);
        p.beta_block.b1 = battery_rand({2}, rng, 0.25, 1.0);
        p.beta_block.w2 = battery_rand({4, 2}, rng, 0.25, 1.0);
        p.beta_block.b2 = battery_rand({4}, rng, 0.25, 1.0);
        p.beta_block.out_activation = SEActivation::Tanh;
        const TensorD c = battery_rand({1, 4, 2, 2, 2}, rng, 0.5, 1.5);
        run("se_norm shift path",
            [p, c](std::vector<TensorD>& v) mutable {
                p.beta_block.w1 = v[1];
                p.beta_block.b1 = v[2];
                p.beta_block.w2 = v[3];
                p.beta_block.b2 = v[4];
                return scale(sum(mul(se_norm(v[0], p), c)), 3.0);
            },
            {battery_rand({1, 4, 2, 2, 2}, rng, -2.0, 2.0), p.beta_block.w1,
             p.beta_block.b1, p.beta_block.w2, p.beta_block.b2},
            1e-6, /*kinks=*/true, -1, /*eps=*/1e-4);
        SENormParams<double> q = p;
        q.beta_block.w2 = TensorD::from_data({4, 2}, std::vector<double>(8, 0.0));
        q.beta_block.b2 = TensorD::from_data({4}, std::vector<double>(4, 0.0));
        const TensorD c2 = battery_rand({1, 4, 2, 2, 2}, rng, 0.5, 1.5);
        run("se_norm scale path",
            [q, c2](std::vector<TensorD>& v) mutable {
                q.gamma_block.w1 = v[1];
                q.gamma_block.b1 = v[2];
                q.gamma_block.w2 = v[3];
                q.gamma_block.b2 = v[4];
                const auto y = se_norm(v[0], q);
                return sum(mul(mul(y, y), c2));
            },
            {battery_rand({1, 4, 2, 2, 2}, rng, -2.0, 2.0), q.gamma_block.w1,
             q.gamma_block.b1, q.gamma_block.w2, q.gamma_block.b2},
            1e-6, /*kinks=*/true, -1, /*eps=*/1e-4);
    }
    {
        const TensorD y =
            TensorD::from_data({1, 1, 2, 2, 2}, {1, 0, 0, 1, 1, 0, 0, 0});
        run("soft_dice_loss",
            [y](std::vector<TensorD>& v) { return soft_dice_loss(y, v[0]); },
            {battery_rand({1, 1, 2, 2, 2}, rng, 0.05, 0.95)});
        run("focal_loss",
            [y](std::vector<TensorD>& v) { return focal_loss(y, v[0]); },
            {battery_rand({1, 1, 2, 2, 2}, rng, 0.05, 0.95)});
    }
    {
        // Full tiny network: a stride-sampled subset of parameter tensors,
        // two largest-gradient coordinates each, kink guard on (max-pooling).
        ModelConfig cfg;
        cfg.widths = {2, 4, 8, 16, 32};
        ModelParams<double> params = build_model<double>(cfg, mix_seed(seed, 0x6e6574ULL));
        set_requires_grad(params, false);
        std::vector<std::string> names;
        for (const auto& [name, t] : params) names.push_back(name);
        std::vector<std::string> picked;
        const std::size_t stride = (names.size() + 11) / 12;
        for (std::size_t i = 0; i < names.size(); i += stride) picked.push_back(names[i]);
        const TensorD x = battery_rand({1, 2, 16, 16, 16}, rng);
        std::vector<double> yv(std::size_t(16 * 16 * 16));
        for (auto& b : yv) b = rng.uniform() < 0.2 ? 1.0 : 0.0;
        const TensorD y = TensorD::from_data({1, 1, 16, 16, 16}, std::move(yv));
        std::vector<TensorD> leaves;
        for (const auto& n : picked) leaves.push_back(params.at(n));
        run("network composite",
            [params, cfg, picked, x, y](std::vector<TensorD>& v) mutable {
                for (std::size_t i = 0; i < picked.size(); ++i) params.at(picked[i]) = v[i];
                return total_loss(y, forward(params, cfg, x));
            },
            leaves, 1e-3, /*kinks=*/true, /*max_coords=*/2, /*eps=*/1e-5);
    }
    return results;
}

}  // namespace voxseg
