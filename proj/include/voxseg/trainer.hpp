// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Training loop: Adam with bias correction, a cosine-annealing learning-rate
// schedule with warm restarts, deterministic patch scheduling, and
// checksummed checkpoints that resume bit-identically.

#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "voxseg/losses.hpp"
#include "voxseg/net.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

struct TrainConfig {
    std::int64_t epochs = 800;
    std::int64_t steps_per_epoch = 0;  // 0: one step per training case
    std::int64_t batch_size = 2;
    double lr_max = 1e-3;
    double lr_min = 1e-6;
    std::int64_t cycle_epochs = 25;  // warm-restart period of the schedule
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    std::int64_t val_every = 1;         // epochs between validation passes
    std::int64_t checkpoint_every = 0;  // epochs between saves; 0 disables
    LossConfig loss;
    SamplerConfig sampler;

    bool operator==(const TrainConfig&) const = default;

    void validate() const {
        require(epochs >= 1, "train: epochs must be >= 1");
        require(steps_per_epoch >= 0, "train: negative steps_per_epoch");
        require(batch_size >= 1, "train: batch_size must be >= 1");
        require(lr_min >= 0.0 && lr_min < lr_max, "train: need 0 <= lr_min < lr_max");
        require(cycle_epochs >= 1, "train: cycle_epochs must be >= 1");
        require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
                "train: Adam betas must lie in [0, 1)");
        require(adam_eps > 0.0, "train: adam_eps must be positive");
        require(val_every >= 1, "train: val_every must be >= 1");
        require(checkpoint_every >= 0, "train: negative checkpoint_every");
        loss.validate();
        sampler.validate();
    }
};

// Annealed learning rate at a continuous epoch position. Within each cycle
// of cycle_epochs the rate falls from lr_max to lr_min along a half cosine,
// then warm-restarts at the boundary.
inline double cosine_lr(double epoch_fraction, const TrainConfig& cfg) {
    require(epoch_fraction >= 0.0, "cosine_lr: negative epoch position");
    require(cfg.lr_min < cfg.lr_max && cfg.cycle_epochs >= 1, "cosine_lr: bad config");
    const double cycle = double(cfg.cycle_epochs);
    const double t = std::fmod(epoch_fraction, cycle);
    return cfg.lr_min +
           0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * t / cycle));
}

// First/second moment accumulators, keyed like the parameter map. Moments
// are stored at the parameter scalar type so a checkpoint round-trip
// reproduces them exactly.
template <typename S>
struct OptimizerState {
    std::map<std::string, std::vector<S>> m, v;
    std::int64_t step = 0;
};

using OptimizerStateF = OptimizerState<float>;
using OptimizerStateD = OptimizerState<double>;

// One bias-corrected Adam update over every parameter, reading gradients
// accumulated by backward(). A parameter with no gradient decays its
// moments and otherwise stays put. Inner arithmetic runs in double and
// rounds once into the parameter/moment scalar type.
template <typename S>
void adam_step(ModelParams<S>& params, OptimizerState<S>& state, double lr,
               const TrainConfig& cfg) {
    require(lr >= 0.0, "adam: negative learning rate");
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
    for (auto& [name, p] : params) {
        auto vals = p.values();
        const std::span<const S> g = p.has_grad() ? p.grad() : std::span<const S>{};
        require(g.empty() || std::int64_t(g.size()) == p.numel(),
                "adam: gradient size does not match parameter " + name);
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) m.assign(vals.size(), S(0));
        if (v.empty()) v.assign(vals.size(), S(0));
        require(m.size() == vals.size() && v.size() == vals.size(),
                "adam: moment shape does not match parameter " + name);
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double gi = g.empty() ? 0.0 : double(g[i]);
            require(std::isfinite(gi), "adam: non-finite gradient in parameter " + name);
            const double mi = cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * gi * gi;
            m[i] = S(mi);
            v[i] = S(vi);
            vals[i] = S(double(vals[i]) -
                        lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_eps));
        }
    }
}

// Everything needed to continue a run: the architecture it belongs to, the
// global step already completed, parameters, and optimizer moments.
struct Checkpoint {
    ModelConfig model;
    std::int64_t step = 0;
    ModelParams<float> params;
    OptimizerStateF opt;
};

// Single little-endian file: magic, format version, model config, named
// float32 tensors and moments, trailing CRC-32.
void checkpoint_save(const Checkpoint& c, const std::string& path);
Checkpoint checkpoint_load(const std::string& path);

struct TrainResult {
    ModelParams<float> params;       // weights after the final step
    ModelParams<float> best_params;  // best-validation weights (final if never validated)
    double best_val_dsc = -1.0;
    std::int64_t steps = 0;
    std::vector<double> step_total;  // per-step batch-mean total loss
    std::vector<double> step_lr;
    std::vector<double> val_dsc;  // one entry per validation pass
    std::vector<std::string> log;
};

// Deterministic end-to-end loop: per step, batch_size tumor-biased patches
// (each drawn from an RNG derived only from the global patch index, so
// resumed runs continue bit-identically), batch-mean dice+focal loss,
// backward, Adam at the cosine-annealed rate. Validates mean DSC on
// val_cases at epoch boundaries and tracks the best weights. When
// checkpoint_dir is non-empty, writes last.ckpt at the configured cadence,
// best.ckpt on improvement, and a diagnostic checkpoint before aborting on
// a non-finite loss.
TrainResult train(const ModelConfig& mcfg, const std::vector<PatientCase>& train_cases,
                  const std::vector<PatientCase>& val_cases, const TrainConfig& cfg,
                  const std::string& checkpoint_dir = "",
                  std::ostream* log_stream = nullptr, const Checkpoint* resume = nullptr);

}  // namespace voxseg
