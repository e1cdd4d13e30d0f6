// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "voxseg/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>

namespace voxseg {

namespace {

// Window starts covering [0, n) with the given stride; the final window is
// clamped so it ends exactly at n. Windows therefore overlap whenever
// stride < extent or the last stride step overshoots.
std::vector<std::int64_t> tile_starts(std::int64_t n, std::int64_t extent,
                                      std::int64_t stride) {
    std::vector<std::int64_t> starts;
    for (std::int64_t s = 0; s + extent < n; s += stride) starts.push_back(s);
    starts.push_back(std::max<std::int64_t>(n - extent, 0));
    return starts;
}

}  // namespace

TensorF sliding_forward(const ModelParams<float>& params, const ModelConfig& mcfg,
                        const TensorF& x, std::int64_t tile_extent,
                        std::int64_t tile_stride) {
    require(x.valid() && x.rank() == 5, "sliding_forward: need a [1,C,D,H,W] input");
    require(tile_extent >= 16 && tile_extent % 16 == 0,
            "sliding_forward: tile extent must be a positive multiple of 16");
    require(tile_stride >= 1 && tile_stride <= tile_extent,
            "sliding_forward: tile stride must lie in [1, tile extent]");
    const auto& xs = x.shape();
    const std::int64_t nc = xs[1], nd = xs[2], nh = xs[3], nw = xs[4];
    const std::int64_t div = mcfg.divisor();
    require(nd % div == 0 && nh % div == 0 && nw % div == 0,
            "sliding_forward: spatial extents must be multiples of " +
                std::to_string(div) + ", got " + shape_str(xs));

    if (nd <= tile_extent && nh <= tile_extent && nw <= tile_extent)
        return forward(params, mcfg, x);

    // Tiles never exceed the volume, and min() keeps them divisible because
    // both operands are multiples of the pooling divisor.
    const std::int64_t td = std::min(tile_extent, nd);
    const std::int64_t th = std::min(tile_extent, nh);
    const std::int64_t tw = std::min(tile_extent, nw);
    const auto zs = tile_starts(nd, td, tile_stride);
    const auto ys = tile_starts(nh, th, tile_stride);
    const auto ws = tile_starts(nw, tw, tile_stride);

    const std::size_t n_out = std::size_t(nd * nh * nw);
    std::vector<double> accum(n_out, 0.0);
    std::vector<std::int32_t> count(n_out, 0);
    const auto xv = x.values();
    std::vector<float> tbuf(std::size_t(nc * td * th * tw));

    for (std::int64_t z0 : zs)
        for (std::int64_t y0 : ys)
            for (std::int64_t w0 : ws) {
                for (std::int64_t c = 0; c < nc; ++c)
                    for (std::int64_t z = 0; z < td; ++z)
                        for (std::int64_t y = 0; y < th; ++y) {
                            const std::size_t src = std::size_t(
                                ((c * nd + z0 + z) * nh + y0 + y) * nw + w0);
                            const std::size_t dst =
                                std::size_t(((c * td + z) * th + y) * tw);
                            std::copy_n(xv.begin() + std::ptrdiff_t(src),
                                        std::size_t(tw),
                                        tbuf.begin() + std::ptrdiff_t(dst));
                        }
                const TensorF tile = TensorF::from_data({1, nc, td, th, tw},
                                                        std::vector<float>(tbuf));
                const TensorF p = forward(params, mcfg, tile);
                const auto pv = p.values();
                for (std::int64_t z = 0; z < td; ++z)
                    for (std::int64_t y = 0; y < th; ++y)
                        for (std::int64_t w = 0; w < tw; ++w) {
                            const std::size_t dst = std::size_t(
                                ((z0 + z) * nh + y0 + y) * nw + w0 + w);
                            accum[dst] += double(pv[std::size_t((z * th + y) * tw + w)]);
                            ++count[dst];
                        }
            }

    std::vector<float> out(n_out);
    for (std::size_t i = 0; i < n_out; ++i) {
        require(count[i] > 0, "sliding_forward: internal coverage gap");
        out[i] = float(accum[i] / double(count[i]));
    }
    return TensorF::from_data({1, 1, nd, nh, nw}, std::move(out));
}

Volume predict_case(const ModelParams<float>& params, const ModelConfig& mcfg,
                    const PatientCase& c, const EnsembleConfig& ecfg) {
    mcfg.validate();
    ecfg.validate();
    require(c.ct.ct_normalized,
            "predict: normalize the CT first (padding assumes unit scale)");

    PatientCase crop = crop_bbox(c);
    pet_zscore(crop.pet);

    const std::int64_t div = mcfg.divisor();
    const std::array<std::int64_t, 3> n = crop.pet.dim;  // (nx, ny, nz)
    std::array<std::int64_t, 3> pd{}, lo{};
    for (int a = 0; a < 3; ++a) {
        const auto sa = std::size_t(a);
        pd[sa] = (n[sa] + div - 1) / div * div;
        lo[sa] = (pd[sa] - n[sa]) / 2;  // odd remainder: extra voxel high side
    }

    const std::size_t n_pad = std::size_t(pd[0] * pd[1] * pd[2]);
    std::vector<float> pet_pad(n_pad, 0.0f);
    std::vector<float> ct_pad(n_pad, -1.0f);  // normalized air
    for (std::int64_t z = 0; z < n[2]; ++z)
        for (std::int64_t y = 0; y < n[1]; ++y) {
            const std::size_t src = std::size_t((z * n[1] + y) * n[0]);
            const std::size_t dst =
                std::size_t(((z + lo[2]) * pd[1] + y + lo[1]) * pd[0] + lo[0]);
            std::copy_n(crop.pet.data.begin() + std::ptrdiff_t(src),
                        std::size_t(n[0]), pet_pad.begin() + std::ptrdiff_t(dst));
            std::copy_n(crop.ct.data.begin() + std::ptrdiff_t(src),
                        std::size_t(n[0]), ct_pad.begin() + std::ptrdiff_t(dst));
        }

    NoGradGuard guard;
    const TensorF pet_t =
        TensorF::from_data({1, 1, pd[2], pd[1], pd[0]}, std::move(pet_pad));
    const TensorF ct_t =
        TensorF::from_data({1, 1, pd[2], pd[1], pd[0]}, std::move(ct_pad));
    const TensorF p = sliding_forward(params, mcfg, concat_channels(pet_t, ct_t),
                                      ecfg.tile_extent, ecfg.tile_stride);

    Volume out;
    out.dim = n;
    out.spacing = crop.pet.spacing;
    out.origin = crop.pet.origin;
    out.modality = Modality::PET;  // float payload: probabilities in (0,1)
    out.data.resize(std::size_t(n[0] * n[1] * n[2]));
    const auto pv = p.values();
    for (std::int64_t z = 0; z < n[2]; ++z)
        for (std::int64_t y = 0; y < n[1]; ++y) {
            const std::size_t src =
                std::size_t(((z + lo[2]) * pd[1] + y + lo[1]) * pd[0] + lo[0]);
            const std::size_t dst = std::size_t((z * n[1] + y) * n[0]);
            std::copy_n(pv.begin() + std::ptrdiff_t(src), std::size_t(n[0]),
                        out.data.begin() + std::ptrdiff_t(dst));
        }
    return out;
}

Volume ensemble_probability(const std::vector<ModelParams<float>>& members,
                            const ModelConfig& mcfg, const PatientCase& c,
                            const EnsembleConfig& ecfg) {
    require(!members.empty(), "ensemble: need at least one member");
    ecfg.validate();

    std::vector<Volume> probs;
    probs.reserve(members.size());
    for (const auto& m : members) probs.push_back(predict_case(m, mcfg, c, ecfg));
    for (const auto& p : probs)
        require(p.dim == probs.front().dim, "ensemble: member output shapes differ");

    const std::size_t k = members.size();
    Volume out = probs.front();
    std::vector<double> vals(k);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            double v = double(probs[j].data[i]);
            if (ecfg.logit_mean) {
                v = std::clamp(v, 1e-7, 1.0 - 1e-7);
                v = std::log(v / (1.0 - v));
            }
            vals[j] = v;
        }
        // Summing in sorted order makes the mean independent of member order
        // bit for bit; a sorted sum of k identical values is exact, so it
        // also reproduces a single model exactly.
        std::sort(vals.begin(), vals.end());
        double acc = 0.0;
        for (double v : vals) acc += v;
        double mean = acc / double(k);
        if (ecfg.logit_mean) mean = 1.0 / (1.0 + std::exp(-mean));
        out.data[i] = float(mean);
    }
    return out;
}

Volume ensemble_predict(const std::vector<ModelParams<float>>& members,
                        const ModelConfig& mcfg, const PatientCase& c,
                        const EnsembleConfig& ecfg) {
    Volume mask = ensemble_probability(members, mcfg, c, ecfg);
    for (float& v : mask.data) v = double(v) >= ecfg.threshold ? 1.0f : 0.0f;
    mask.modality = Modality::MASK;
    return mask;
}

SplitPlan make_splits(const std::vector<CaseRecord>& cases, SplitKind kind,
                      std::int64_t n_random_folds, double val_fraction,
                      std::uint64_t seed) {
    require(!cases.empty(), "split: empty case list");
    {
        std::set<std::string> ids;
        for (const auto& c : cases) ids.insert(c.case_id);
        require(ids.size() == cases.size(), "split: duplicate case ids");
    }

    SplitPlan plan;
    plan.kind = kind;
    if (kind == SplitKind::LeaveOneCenterOut) {
        std::map<std::string, std::vector<std::string>> by_center;  // sorted
        for (const auto& c : cases) by_center[c.center_id].push_back(c.case_id);
        require(by_center.size() >= 2,
                "split: leave-one-center-out needs at least two centers, got " +
                    std::to_string(by_center.size()));
        for (const auto& [center, val_ids] : by_center) {
            SplitFold fold;
            fold.held_center = center;
            fold.val_ids = val_ids;
            for (const auto& c : cases)
                if (c.center_id != center) fold.train_ids.push_back(c.case_id);
            plan.folds.push_back(std::move(fold));
        }
        return plan;
    }

    require(n_random_folds >= 1, "split: need at least one fold");
    require(val_fraction > 0.0 && val_fraction < 1.0,
            "split: validation fraction must lie strictly inside (0, 1)");
    const std::int64_t n = std::int64_t(cases.size());
    const std::int64_t n_val =
        std::max<std::int64_t>(1, std::llround(val_fraction * double(n)));
    require(n_val < n, "split: validation fraction leaves no training cases");

    for (std::int64_t f = 0; f < n_random_folds; ++f) {
        std::vector<std::int64_t> idx(std::size_t(n), 0);
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng(mix_seed(mix_seed(seed, 0x73706c6974ULL), std::uint64_t(f)));
        for (std::int64_t i = n - 1; i > 0; --i)
            std::swap(idx[std::size_t(i)], idx[std::size_t(rng.uniform_int(i + 1))]);
        std::vector<std::int64_t> val(idx.begin(), idx.begin() + n_val);
        std::vector<std::int64_t> train(idx.begin() + n_val, idx.end());
        std::sort(val.begin(), val.end());    // keep the manifest order
        std::sort(train.begin(), train.end());
        SplitFold fold;
        for (auto i : val) fold.val_ids.push_back(cases[std::size_t(i)].case_id);
        for (auto i : train) fold.train_ids.push_back(cases[std::size_t(i)].case_id);
        plan.folds.push_back(std::move(fold));
    }
    return plan;
}

EvaluationReport evaluate(const std::vector<PatientCase>& cases,
                          const std::vector<Volume>& masks) {
    require(cases.size() == masks.size(),
            "evaluate: need one mask per case, got " + std::to_string(masks.size()) +
                " masks for " + std::to_string(cases.size()) + " cases");
    require(!cases.empty(), "evaluate: empty case list");

    EvaluationReport rep;
    std::map<std::string, std::vector<MetricsReport>> by_center;  // sorted
    std::vector<MetricsReport> all;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const auto& c = cases[i];
        require(c.gtv.has_value(),
                "evaluate: case " + c.case_id + " has no reference mask");
        require(masks[i].dim == c.gtv->dim,
                "evaluate: mask shape does not match the reference for case " +
                    c.case_id);
        const MetricsReport r = segmentation_metrics(volume_to_tensor(masks[i]),
                                                     volume_to_tensor(*c.gtv));
        rep.per_case.emplace_back(c.case_id, r);
        by_center[c.center_id].push_back(r);
        all.push_back(r);
    }

    for (const auto& [center, reports] : by_center)
        rep.per_center.emplace_back(center, aggregate_metrics(reports));

    // Equal-weight mean over centers (the sorted center order is
    // deterministic, so this sum is reproducible bit for bit).
    const double nc = double(rep.per_center.size());
    for (const auto& [center, summary] : rep.per_center) {
        rep.center_average.dsc += summary.mean.dsc;
        rep.center_average.precision += summary.mean.precision;
        rep.center_average.recall += summary.mean.recall;
    }
    rep.center_average.dsc /= nc;
    rep.center_average.precision /= nc;
    rep.center_average.recall /= nc;

    rep.pooled = aggregate_metrics(all);
    return rep;
}

std::vector<std::string> evaluation_lines(const EvaluationReport& report) {
    std::vector<std::string> lines;
    for (const auto& [case_id, r] : report.per_case)
        lines.push_back(metrics_line(case_id, r));
    char buf[192];
    for (const auto& [center, s] : report.per_center) {
        std::snprintf(buf, sizeof buf,
                      " n=%lld dsc=%.6f+-%.6f precision=%.6f+-%.6f recall=%.6f+-%.6f",
                      static_cast<long long>(s.count), s.mean.dsc, s.stddev.dsc,
                      s.mean.precision, s.stddev.precision, s.mean.recall,
                      s.stddev.recall);
        lines.push_back("center " + center + buf);
    }
    lines.push_back(metrics_line("average-over-centers", report.center_average));
    std::snprintf(buf, sizeof buf,
                  "pooled n=%lld dsc=%.6f+-%.6f precision=%.6f+-%.6f recall=%.6f+-%.6f",
                  static_cast<long long>(report.pooled.count), report.pooled.mean.dsc,
                  report.pooled.stddev.dsc, report.pooled.mean.precision,
                  report.pooled.stddev.precision, report.pooled.mean.recall,
                  report.pooled.stddev.recall);
    lines.push_back(buf);
    return lines;
}

}  // namespace voxseg
