// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Training losses (smoothed soft Dice + focal term, unweighted sum) and the
// evaluation metrics (Dice score, precision, recall) with their empty-mask
// conventions.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "voxseg/tensor.hpp"

namespace voxseg {

struct LossConfig {
    double focal_gamma = 2.0;
    // +1 smoothing on numerator and denominator of the Dice ratio, which
    // also defines the empty-vs-empty case as a perfect score
    double smooth = 1.0;
    double prob_clamp = 1e-7;  // ln() safety clamp on probabilities
    // The published focal form scores only positive voxels (background
    // contributes nothing; false positives are penalized by the Dice term
    // alone). The symmetric variant adds the mirrored background term.
    bool focal_symmetric = false;

    bool operator==(const LossConfig&) const = default;

    void validate() const {
        require(focal_gamma >= 0.0, "loss config: focal_gamma must be >= 0");
        require(smooth > 0.0, "loss config: smooth must be > 0");
        require(prob_clamp > 0.0 && prob_clamp < 0.5,
                "loss config: prob_clamp must lie in (0, 0.5)");
    }
};

namespace detail {

template <typename S>
void check_loss_args(const Tensor<S>& y, const Tensor<S>& p, const char* name) {
    require(y.valid() && p.valid(), std::string(name) + ": invalid tensor");
    require(y.shape() == p.shape(), std::string(name) + ": target shape " +
                                        shape_str(y.shape()) + " does not match prediction " +
                                        shape_str(p.shape()));
}

}  // namespace detail

// 1 - (2*sum(y*p) + smooth) / (sum(y) + sum(p) + smooth). Zero exactly for
// a perfect binary prediction (including the all-empty pair) and always
// below 1. Differentiable in p.
template <typename S>
Tensor<S> soft_dice_loss(const Tensor<S>& y, const Tensor<S>& p, const LossConfig& cfg = {}) {
    cfg.validate();
    detail::check_loss_args(y, p, "soft_dice_loss");
    auto num = add_scalar(scale(sum(mul(y, p)), S(2)), S(cfg.smooth));
    auto den = add_scalar(add(sum(y), sum(p)), S(cfg.smooth));
    return add_scalar(scale(div(num, den), S(-1)), S(1));
}

// -(1/N) * sum over positive voxels of (1-p)^gamma * ln(p), with p clamped
// to [prob_clamp, 1-prob_clamp] ahead of the logarithm. When
// focal_symmetric is set the mirrored background term -(1/N) * sum of
// (1-y) * p^gamma * ln(1-p) is added.
template <typename S>
Tensor<S> focal_loss(const Tensor<S>& y, const Tensor<S>& p, const LossConfig& cfg = {}) {
    cfg.validate();
    detail::check_loss_args(y, p, "focal_loss");
    const S inv_n = S(-1.0 / double(p.numel()));
    auto pc = clamp(p, S(cfg.prob_clamp), S(1.0 - cfg.prob_clamp));
    auto one_minus = add_scalar(scale(pc, S(-1)), S(1));
    auto pos = mul(mul(y, pow_(one_minus, S(cfg.focal_gamma))), ln(pc));
    auto loss = scale(sum(pos), inv_n);
    if (cfg.focal_symmetric) {
        auto bg = add_scalar(scale(y, S(-1)), S(1));
        auto neg = mul(mul(bg, pow_(pc, S(cfg.focal_gamma))), ln(one_minus));
        loss = add(loss, scale(sum(neg), inv_n));
    }
    return loss;
}

// Unweighted sum of the two terms.
template <typename S>
Tensor<S> total_loss(const Tensor<S>& y, const Tensor<S>& p, const LossConfig& cfg = {}) {
    return add(soft_dice_loss(y, p, cfg), focal_loss(y, p, cfg));
}

// ---------------------------------------------------------------------------
// Evaluation metrics
// ---------------------------------------------------------------------------

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::int64_t total() const { return tp + fp + fn + tn; }
};

struct MetricsReport {
    double dsc = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

struct MetricsSummary {
    MetricsReport mean;
    MetricsReport stddev;  // population standard deviation
    std::int64_t count = 0;
};

template <typename S>
ConfusionCounts confusion_counts(const Tensor<S>& pred, const Tensor<S>& gt) {
    require(pred.valid() && gt.valid(), "confusion_counts: invalid tensor");
    require(pred.shape() == gt.shape(), "confusion_counts: shape mismatch " +
                                            shape_str(pred.shape()) + " vs " +
                                            shape_str(gt.shape()));
    ConfusionCounts c;
    const auto& pv = pred.values();
    const auto& gv = gt.values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
        require(pv[i] == S(0) || pv[i] == S(1), "confusion_counts: non-binary prediction mask");
        require(gv[i] == S(0) || gv[i] == S(1), "confusion_counts: non-binary reference mask");
        const bool p = pv[i] == S(1), g = gv[i] == S(1);
        if (p && g)
            ++c.tp;
        else if (p && !g)
            ++c.fp;
        else if (!p && g)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

inline MetricsReport metrics_from_counts(const ConfusionCounts& c) {
    // Empty-denominator conventions: a ratio with nothing to get wrong
    // scores 1, so empty-vs-empty is a perfect (1,1,1) — consistent with
    // the smoothed Dice ratio — while a one-sided miss scores 0 on Dice.
    MetricsReport r;
    const double tp = double(c.tp);
    r.dsc = (2 * c.tp + c.fp + c.fn) == 0 ? 1.0 : 2 * tp / double(2 * c.tp + c.fp + c.fn);
    r.precision = (c.tp + c.fp) == 0 ? 1.0 : tp / double(c.tp + c.fp);
    r.recall = (c.tp + c.fn) == 0 ? 1.0 : tp / double(c.tp + c.fn);
    return r;
}

template <typename S>
MetricsReport segmentation_metrics(const Tensor<S>& pred, const Tensor<S>& gt) {
    return metrics_from_counts(confusion_counts(pred, gt));
}

// Unweighted mean and population standard deviation per metric. Values are
// summed in sorted order, so aggregation is invariant to the order of the
// reports bit for bit.
inline MetricsSummary aggregate_metrics(const std::vector<MetricsReport>& reports) {
    require(!reports.empty(), "aggregate_metrics: empty report list");
    MetricsSummary s;
    s.count = std::int64_t(reports.size());
    const auto reduce = [&](auto proj, double& mean_out, double& std_out) {
        std::vector<double> v;
        v.reserve(reports.size());
        for (const auto& r : reports) v.push_back(proj(r));
        std::sort(v.begin(), v.end());
        double acc = 0;
        for (double x : v) acc += x;
        const double mean = acc / double(v.size());
        double sq = 0;
        for (double x : v) sq += (x - mean) * (x - mean);
        mean_out = mean;
        std_out = std::sqrt(sq / double(v.size()));
    };
    reduce([](const MetricsReport& r) { return r.dsc; }, s.mean.dsc, s.stddev.dsc);
    reduce([](const MetricsReport& r) { return r.precision; }, s.mean.precision,
           s.stddev.precision);
    reduce([](const MetricsReport& r) { return r.recall; }, s.mean.recall, s.stddev.recall);
    return s;
}

// One case per line, flat key=value fields.
inline std::string metrics_line(const std::string& case_id, const MetricsReport& r) {
    char tail[96];
    std::snprintf(tail, sizeof tail, " dsc=%.6f precision=%.6f recall=%.6f", r.dsc,
                  r.precision, r.recall);
    return case_id + tail;
}

}  // namespace voxseg
