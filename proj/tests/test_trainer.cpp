// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Trainer tests: learning-rate schedule pinned values and properties, Adam
// update semantics, checkpoint integrity, split-run resume bit-identity,
// and a short single-case overfit smoke run.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "voxseg/trainer.hpp"

using namespace voxseg;
namespace fs = std::filesystem;

namespace {

fs::path trainer_dir() {
    const fs::path dir = fs::temp_directory_path() / "voxseg_test_trainer";
    fs::create_directories(dir);
    return dir;
}

ModelConfig micro_model() {
    ModelConfig m;
    m.widths = {2, 4, 8, 16, 32};
    return m;
}

// Single 16^3 phantom with a normalized CT, small enough that a training
// step takes milliseconds.
std::vector<PatientCase> tiny_cases(std::uint64_t seed) {
    PatientCase c = generate_phantom(seed, 16, 1);
    c.ct = ct_normalize(c.ct);
    return {std::move(c)};
}

TrainConfig tiny_train(std::int64_t epochs, std::int64_t steps_per_epoch,
                       std::int64_t batch) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.steps_per_epoch = steps_per_epoch;
    cfg.batch_size = batch;
    cfg.sampler.patch = {16, 16, 16};
    cfg.seed = 9;
    return cfg;
}

bool same_params(const ModelParams<float>& a, const ModelParams<float>& b) {
    if (a.size() != b.size()) return false;
    for (const auto& [name, t] : a) {
        const auto it = b.find(name);
        if (it == b.end() || it->second.shape() != t.shape()) return false;
        const auto av = t.values();
        const auto bv = it->second.values();
        if (!std::equal(av.begin(), av.end(), bv.begin(), bv.end())) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("cosine schedule hits the pinned endpoint and midpoint values") {
    const TrainConfig cfg;  // lr 1e-3 -> 1e-6, cycle 25
    CHECK(std::abs(cosine_lr(0.0, cfg) - 1e-3) < 1e-12);
    CHECK(std::abs(cosine_lr(12.5, cfg) - 5.005e-4) < 1e-12);
    // approaching the cycle boundary the rate falls to lr_min...
    const double near_end = cosine_lr(25.0 - 1e-7, cfg);
    CHECK(near_end > 1e-6);
    CHECK(near_end < 1e-6 + 1e-9);
    // ...and the boundary itself warm-restarts to lr_max
    CHECK(std::abs(cosine_lr(25.0, cfg) - 1e-3) < 1e-12);
    CHECK(std::abs(cosine_lr(50.0, cfg) - 1e-3) < 1e-12);
    CHECK(std::abs(cosine_lr(37.5, cfg) - 5.005e-4) < 1e-12);
}

TEST_CASE("cosine schedule is bounded, continuous, periodic, and guarded") {
    const TrainConfig cfg;
    for (int i = 0; i <= 10000; ++i) {
        const double t = 0.0137 * double(i);
        const double lr = cosine_lr(t, cfg);
        CHECK(lr >= cfg.lr_min);
        CHECK(lr <= cfg.lr_max);
        CHECK(std::abs(cosine_lr(t + 25.0, cfg) - lr) < 1e-12);
        if (i < 10000)
            CHECK(std::abs(cosine_lr(t + 1e-6, cfg) - lr) < 1e-10);  // locally smooth
    }
    CHECK_THROWS_WITH_AS(cosine_lr(-0.5, cfg), doctest::Contains("negative"), Error);
}

TEST_CASE("adam leaves parameters unchanged under a zero gradient") {
    ModelParams<float> params;
    params.emplace("w", TensorF::from_data({3}, {1.0f, 2.0f, 3.0f}));
    params.at("w").set_requires_grad();
    OptimizerStateF state;
    adam_step(params, state, 1e-3, TrainConfig{});
    CHECK(state.step == 1);
    const auto v = params.at("w").values();
    CHECK(v[0] == 1.0f);
    CHECK(v[1] == 2.0f);
    CHECK(v[2] == 3.0f);
}

TEST_CASE("adam's first step moves by ~lr against the gradient sign") {
    ModelParams<double> params;
    params.emplace("w", TensorD::from_data({2}, {0.5, -0.25}));
    params.at("w").set_requires_grad();
    const TensorD k = TensorD::from_data({2}, {3.0, -7.0});
    backward(sum(mul(params.at("w"), k)));  // grads = {3, -7}
    OptimizerStateD state;
    const double lr = 1e-3;
    adam_step(params, state, lr, TrainConfig{});
    const auto v = params.at("w").values();
    CHECK(std::abs(v[0] - (0.5 - lr)) < 1e-10);
    CHECK(std::abs(v[1] - (-0.25 + lr)) < 1e-10);
}

TEST_CASE("adam's first step is invariant to gradient scale within 1e-12") {
    const std::vector<double> init{0.3, -0.7, 1.2, -2.0};
    const TensorD k = TensorD::from_data({4}, {100.0, -50.0, 75.0, 120.0});
    auto run = [&](double grad_scale) {
        ModelParams<double> params;
        params.emplace("w", TensorD::from_data({4}, init));
        params.at("w").set_requires_grad();
        backward(scale(sum(mul(params.at("w"), k)), grad_scale));
        OptimizerStateD state;
        adam_step(params, state, 1e-3, TrainConfig{});
        const auto v = params.at("w").values();
        return std::vector<double>(v.begin(), v.end());
    };
    const auto base = run(1.0);
    for (double c : {2.0, 0.5, 3.0}) {
        const auto scaled = run(c);
        for (std::size_t i = 0; i < 4; ++i)
            CHECK(std::abs(scaled[i] - base[i]) < 1e-12);
    }
}

TEST_CASE("adam rejects non-finite gradients by parameter name") {
    ModelParams<double> params;
    params.emplace("w", TensorD::from_data({2}, {0.0, 4.0}));
    params.at("w").set_requires_grad();
    // d/dx sqrt(x) at x=0 is infinite
    backward(sum(pow_(params.at("w"), 0.5)));
    OptimizerStateD state;
    CHECK_THROWS_WITH_AS(adam_step(params, state, 1e-3, TrainConfig{}),
                         doctest::Contains("non-finite gradient in parameter w"), Error);
}

TEST_CASE("checkpoints round-trip every tensor and moment bit-exactly") {
    const ModelConfig mcfg = micro_model();
    Checkpoint c;
    c.model = mcfg;
    c.step = 42;
    c.params = build_model<float>(mcfg, 7);
    Rng rng(13);
    for (const auto& [name, t] : c.params) {
        auto& m = c.opt.m[name];
        auto& v = c.opt.v[name];
        for (std::int64_t i = 0; i < t.numel(); ++i) {
            m.push_back(float(rng.uniform(-1, 1)));
            v.push_back(float(rng.uniform(0, 1)));
        }
    }
    c.opt.step = 42;

    const fs::path path = trainer_dir() / "roundtrip.ckpt";
    checkpoint_save(c, path.string());
    const Checkpoint r = checkpoint_load(path.string());
    CHECK(r.model == mcfg);
    CHECK(r.step == 42);
    CHECK(r.opt.step == 42);
    CHECK(same_params(r.params, c.params));
    REQUIRE(r.opt.m.size() == c.opt.m.size());
    for (const auto& [name, m] : c.opt.m) {
        CHECK(r.opt.m.at(name) == m);
        CHECK(r.opt.v.at(name) == c.opt.v.at(name));
    }
}

TEST_CASE("checkpoints detect corruption and truncation") {
    const ModelConfig mcfg = micro_model();
    const Checkpoint c{mcfg, 3, build_model<float>(mcfg, 1), {}};
    const fs::path path = trainer_dir() / "corrupt.ckpt";
    checkpoint_save(c, path.string());

    std::vector<char> bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    {
        auto flipped = bytes;
        flipped[flipped.size() / 2] = char(flipped[flipped.size() / 2] ^ 0x40);
        const fs::path bad = trainer_dir() / "flipped.ckpt";
        std::ofstream(bad, std::ios::binary)
            .write(flipped.data(), std::streamsize(flipped.size()));
        CHECK_THROWS_WITH_AS(checkpoint_load(bad.string()),
                             doctest::Contains("checksum"), Error);
    }
    {
        const fs::path bad = trainer_dir() / "truncated.ckpt";
        std::ofstream(bad, std::ios::binary).write(bytes.data(), 10);
        CHECK_THROWS_WITH_AS(checkpoint_load(bad.string()),
                             doctest::Contains("truncated"), Error);
    }
    CHECK_THROWS_WITH_AS(checkpoint_load((trainer_dir() / "missing.ckpt").string()),
                         doctest::Contains("open"), Error);
}

TEST_CASE("training is deterministic and logs the exact cosine rates") {
    const ModelConfig mcfg = micro_model();
    const auto cases = tiny_cases(3);
    const TrainConfig cfg = tiny_train(2, 3, 2);

    const TrainResult a = train(mcfg, cases, {}, cfg);
    const TrainResult b = train(mcfg, cases, {}, cfg);
    CHECK(a.steps == 6);
    CHECK(same_params(a.params, b.params));
    CHECK(a.step_total == b.step_total);

    REQUIRE(a.step_lr.size() == 6);
    for (std::size_t i = 0; i < 6; ++i)
        CHECK(a.step_lr[i] == cosine_lr(double(i) / 3.0, cfg));
    for (double loss : a.step_total) {
        CHECK(std::isfinite(loss));
        CHECK(loss > 0.0);
    }
    // untrained head emits near-0.5 probabilities, so the first total sits
    // in a predictable band
    CHECK(a.step_total[0] > 0.2);
    CHECK(a.step_total[0] < 1.3);
    CHECK(a.log.size() == 6);
}

TEST_CASE("steps_per_epoch defaults to one step per training case") {
    const ModelConfig mcfg = micro_model();
    auto cases = tiny_cases(5);
    cases.push_back(tiny_cases(6)[0]);
    TrainConfig cfg = tiny_train(1, 0, 1);
    const TrainResult r = train(mcfg, cases, {}, cfg);
    CHECK(r.steps == 2);
}

TEST_CASE("resuming from a checkpoint continues bit-identically") {
    const ModelConfig mcfg = micro_model();
    const auto cases = tiny_cases(11);
    const fs::path dir = trainer_dir() / "resume";
    fs::remove_all(dir);

    // uninterrupted: 4 epochs x 2 steps
    const TrainResult full = train(mcfg, cases, {}, tiny_train(4, 2, 1));

    // interrupted after 2 epochs, checkpointed, resumed for the rest
    TrainConfig first_leg = tiny_train(2, 2, 1);
    first_leg.checkpoint_every = 1;
    train(mcfg, cases, {}, first_leg, dir.string());
    const Checkpoint ck = checkpoint_load((dir / "last.ckpt").string());
    CHECK(ck.step == 4);
    const TrainResult resumed =
        train(mcfg, cases, {}, tiny_train(4, 2, 1), "", nullptr, &ck);

    CHECK(resumed.steps == 8);
    CHECK(resumed.step_total.size() == 4);  // steps 4..7 only
    CHECK(same_params(full.params, resumed.params));
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(resumed.step_total[i] == full.step_total[i + 4]);

    ModelConfig other = micro_model();
    other.widths = {4, 8, 16, 32, 64};
    CHECK_THROWS_WITH_AS(train(other, cases, {}, tiny_train(4, 2, 1), "", nullptr, &ck),
                         doctest::Contains("different model config"), Error);
}

TEST_CASE("validation tracks the best weights and writes checkpoints") {
    const ModelConfig mcfg = micro_model();
    const auto cases = tiny_cases(21);
    const fs::path dir = trainer_dir() / "val";
    fs::remove_all(dir);
    TrainConfig cfg = tiny_train(2, 2, 1);
    cfg.checkpoint_every = 2;
    const TrainResult r = train(mcfg, cases, cases, cfg, dir.string());
    REQUIRE(r.val_dsc.size() == 2);
    for (double dsc : r.val_dsc) {
        CHECK(dsc >= 0.0);
        CHECK(dsc <= 1.0);
    }
    CHECK(r.best_val_dsc == *std::max_element(r.val_dsc.begin(), r.val_dsc.end()));
    CHECK(!r.best_params.empty());
    CHECK(fs::exists(dir / "best.ckpt"));
    CHECK(fs::exists(dir / "last.ckpt"));
    CHECK(checkpoint_load((dir / "last.ckpt").string()).step == 4);

    CHECK_THROWS_WITH_AS(train(mcfg, {}, {}, cfg), doctest::Contains("empty"), Error);
}

TEST_CASE("a hundred steps on one phantom cut the training loss in half") {
    PatientCase c = generate_phantom(33, 32, 1);
    c.ct = ct_normalize(c.ct);
    const std::vector<PatientCase> cases{std::move(c)};

    const ModelConfig mcfg = micro_model();
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.steps_per_epoch = 100;
    cfg.batch_size = 1;
    cfg.lr_max = 1e-2;  // aggressive rate: this run chases overfit, not generality
    cfg.lr_min = 1e-5;
    cfg.seed = 5;
    cfg.sampler.patch = {32, 32, 32};  // whole volume, pure overfit
    const TrainResult r = train(mcfg, cases, {}, cfg);
    REQUIRE(r.step_total.size() == 100);
    double tail = r.step_total.back();
    for (std::size_t i = 95; i < 100; ++i) tail = std::min(tail, r.step_total[i]);
    CHECK(tail < 0.5 * r.step_total[0]);
}
