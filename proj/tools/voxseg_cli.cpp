// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Operator command line: synthetic data generation, preprocessing, training,
// single-model and ensemble inference with PNG montages, split construction,
// evaluation, a gradient self-check, and printable defaults.
//
// Exit codes: 0 success, 1 runtime failure, 2 command-line misuse,
// 3 invalid configuration. Failures print one `error: ...` line to stderr.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "voxseg/config.hpp"
#include "voxseg/inference.hpp"
#include "voxseg/png.hpp"
#include "voxseg/selfcheck.hpp"
#include "voxseg/trainer.hpp"

namespace {

using namespace voxseg;

std::string ensure_dir(const std::string& dir) {
    require(!dir.empty(), "no output directory configured");
    std::filesystem::create_directories(dir);
    return dir;
}

std::vector<PatientCase> load_cases(const std::string& manifest) {
    require(!manifest.empty(), "config: no dataset manifest configured");
    std::vector<PatientCase> cases;
    for (const auto& rec : manifest_read(manifest)) cases.push_back(load_case(rec));
    return cases;
}

void write_lines(const std::vector<std::string>& lines, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    require(bool(out), "cannot open " + path + " for writing");
    for (const auto& l : lines) out << l << "\n";
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

void cmd_phantom(const std::string& out_dir, std::uint64_t seed, std::int64_t cases,
                 std::int64_t extent, std::int64_t lesions) {
    const std::string dir = ensure_dir(out_dir);
    std::vector<CaseRecord> records;
    for (std::int64_t i = 0; i < cases; ++i)
        records.push_back(store_case(generate_phantom(seed + std::uint64_t(i), extent, lesions), dir));
    manifest_write(records, dir + "/manifest.txt");
    std::cout << "wrote " << cases << " cases and " << dir << "/manifest.txt\n";
}

void cmd_preprocess(const std::string& manifest, const std::string& out_dir,
                    double target_mm) {
    require(target_mm > 0.0, "config: target spacing must be positive");
    const std::string dir = ensure_dir(out_dir);
    std::vector<CaseRecord> records;
    for (const auto& rec : manifest_read(manifest)) {
        PatientCase c = load_case(rec);
        const std::array<float, 3> s = c.pet.spacing;  // shared grid
        c.pet = resample_isotropic(c.pet, target_mm);
        c.ct = ct_normalize(resample_isotropic(c.ct, target_mm));
        if (c.gtv) *c.gtv = resample_isotropic(*c.gtv, target_mm);
        // Map the bbox onto the new grid: outward rounding, clamped.
        for (int a = 0; a < 3; ++a) {
            const auto sa = std::size_t(a);
            const double scale = double(s[sa]) / target_mm;
            std::int64_t lo = std::int64_t(std::floor(double(c.bbox.lo[sa]) * scale));
            std::int64_t hi = std::int64_t(std::ceil(double(c.bbox.hi[sa]) * scale));
            lo = std::clamp<std::int64_t>(lo, 0, c.pet.dim[sa] - 1);
            hi = std::clamp<std::int64_t>(hi, lo + 1, c.pet.dim[sa]);
            c.bbox.lo[sa] = lo;
            c.bbox.hi[sa] = hi;
        }
        records.push_back(store_case(c, dir));
    }
    manifest_write(records, dir + "/manifest.txt");
    std::cout << "preprocessed " << records.size() << " cases into " << dir << "\n";
}

void cmd_train(const RunConfig& rc, const std::string& holdout,
               const std::string& resume_path) {
    std::vector<PatientCase> all = load_cases(rc.manifest);
    std::vector<PatientCase> train_set, val_set;
    if (holdout.empty()) {
        train_set = all;
        val_set = all;
    } else {
        for (auto& c : all)
            (c.center_id == holdout ? val_set : train_set).push_back(std::move(c));
        require(!val_set.empty(), "no cases from held-out center " + holdout);
        require(!train_set.empty(), "held-out center " + holdout + " leaves no training cases");
    }

    const std::string dir = ensure_dir(rc.output_dir);
    {
        std::ofstream cf(dir + "/config.json", std::ios::trunc);
        require(bool(cf), "cannot open " + dir + "/config.json for writing");
        cf << config_print(rc);
    }
    std::ofstream log(dir + "/train.log", std::ios::trunc);
    require(bool(log), "cannot open " + dir + "/train.log for writing");

    Checkpoint resume;
    const bool resuming = !resume_path.empty();
    if (resuming) resume = checkpoint_load(resume_path);
    const TrainResult res = train(rc.model, train_set, val_set, rc.train, dir, &log,
                                  resuming ? &resume : nullptr);
    std::cout << "trained " << res.steps << " steps; checkpoints and train.log in "
              << dir << "\n";
    if (!res.val_dsc.empty())
        std::cout << "validation dsc: last " << res.val_dsc.back() << ", best "
                  << res.best_val_dsc << "\n";
}

Volume threshold_mask(const Volume& prob, double threshold) {
    Volume mask = prob;
    for (float& v : mask.data) v = double(v) >= threshold ? 1.0f : 0.0f;
    mask.modality = Modality::MASK;
    return mask;
}

void write_case_outputs(const PatientCase& c, const Volume& mask, const Volume* prob,
                        const std::string& dir) {
    if (prob) volume_write(*prob, dir + "/" + c.case_id + "_prob.nii.gz");
    volume_write(mask, dir + "/" + c.case_id + "_mask.nii.gz");
    export_slices(mask, crop_bbox(c).pet, dir + "/" + c.case_id + "_montage.png");
    std::int64_t on = 0;
    for (float v : mask.data) on += v == 1.0f ? 1 : 0;
    std::cout << "case " << c.case_id << " positive_voxels=" << on << "\n";
}

void cmd_infer(const RunConfig& rc, const std::string& ckpt_path,
               const std::string& only_case) {
    const Checkpoint ck = checkpoint_load(ckpt_path);
    const std::string dir = ensure_dir(rc.output_dir);
    bool matched = false;
    for (const auto& c : load_cases(rc.manifest)) {
        if (!only_case.empty() && c.case_id != only_case) continue;
        matched = true;
        const Volume prob = predict_case(ck.params, ck.model, c, rc.ensemble);
        write_case_outputs(c, threshold_mask(prob, rc.ensemble.threshold), &prob, dir);
    }
    require(only_case.empty() || matched, "case " + only_case + " is not in the manifest");
}

void cmd_ensemble(const RunConfig& rc) {
    if (rc.checkpoints.empty())
        throw ConfigError("config: ensemble.checkpoints is empty; nothing to ensemble");
    std::vector<Checkpoint> members;
    for (const auto& p : rc.checkpoints) members.push_back(checkpoint_load(p));
    std::vector<ModelParams<float>> params;
    for (std::size_t i = 0; i < members.size(); ++i) {
        require(members[i].model == members.front().model,
                "ensemble member " + rc.checkpoints[i] +
                    " was trained with a different model config");
        params.push_back(members[i].params);
    }
    const std::string dir = ensure_dir(rc.output_dir);
    for (const auto& c : load_cases(rc.manifest)) {
        const Volume mask = ensemble_predict(params, members.front().model, c, rc.ensemble);
        write_case_outputs(c, mask, nullptr, dir);
    }
}

void cmd_evaluate(const RunConfig& rc, const std::string& pred_dir) {
    std::vector<PatientCase> cases = load_cases(rc.manifest);
    std::vector<Volume> masks;
    for (const auto& c : cases) {
        const Volume crop_mask = volume_read(pred_dir + "/" + c.case_id + "_mask.nii.gz");
        for (int a = 0; a < 3; ++a)
            require(crop_mask.dim[std::size_t(a)] == c.bbox.extent(a),
                    "evaluate: mask for case " + c.case_id +
                        " does not fit the manifest bbox");
        // Lift the crop-grid mask back onto the full scoring grid.
        require(c.gtv.has_value(), "evaluate: case " + c.case_id + " has no reference mask");
        Volume full = *c.gtv;
        std::fill(full.data.begin(), full.data.end(), 0.0f);
        for (std::int64_t z = 0; z < crop_mask.dim[2]; ++z)
            for (std::int64_t y = 0; y < crop_mask.dim[1]; ++y)
                for (std::int64_t x = 0; x < crop_mask.dim[0]; ++x)
                    full.at(c.bbox.lo[0] + x, c.bbox.lo[1] + y, c.bbox.lo[2] + z) =
                        crop_mask.at(x, y, z);
        masks.push_back(std::move(full));
    }
    const auto lines = evaluation_lines(evaluate(cases, masks));
    for (const auto& l : lines) std::cout << l << "\n";
    write_lines(lines, ensure_dir(pred_dir) + "/metrics.txt");
}

void cmd_split(const std::string& manifest, const std::string& kind_name,
               std::int64_t folds, double val_fraction, std::uint64_t seed,
               const std::string& out_path) {
    SplitKind kind;
    if (kind_name == "loco")
        kind = SplitKind::LeaveOneCenterOut;
    else if (kind_name == "random")
        kind = SplitKind::Random;
    else
        throw ConfigError("config: split kind must be loco or random, got " + kind_name);
    const SplitPlan plan = make_splits(manifest_read(manifest), kind, folds, val_fraction, seed);
    std::vector<std::string> lines;
    for (std::size_t f = 0; f < plan.folds.size(); ++f) {
        const auto& fold = plan.folds[f];
        std::string head = "fold " + std::to_string(f);
        if (!fold.held_center.empty()) head += " held_center=" + fold.held_center;
        lines.push_back(head);
        std::string tr = "  train:";
        for (const auto& id : fold.train_ids) tr += " " + id;
        lines.push_back(tr);
        std::string va = "  val:";
        for (const auto& id : fold.val_ids) va += " " + id;
        lines.push_back(va);
    }
    for (const auto& l : lines) std::cout << l << "\n";
    if (!out_path.empty()) write_lines(lines, out_path);
}

// ---------------------------------------------------------------------------
// Gradient self-check
// ---------------------------------------------------------------------------

void cmd_gradcheck(std::uint64_t seed) {
    const std::vector<GradCheckResult> results = gradient_battery(seed);
    int failures = 0;
    for (const auto& r : results) {
        std::cout << (r.passed ? "ok   " : "FAIL ") << r.name << " max_rel=" << r.max_rel_err
                  << " coords=" << r.coords_checked << " skipped=" << r.coords_skipped
                  << " tol=" << r.tolerance << "\n";
        failures += r.passed ? 0 : 1;
    }
    require(failures == 0, "gradcheck: " + std::to_string(failures) + " ops failed");
    std::cout << "all " << results.size() << " gradient checks passed\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"volumetric PET/CT tumor segmentation toolkit"};
    app.require_subcommand(1);

    // Shared settings, assembled per subcommand: defaults <- config file <- flags.
    std::string config_path, manifest, out_dir, holdout, resume_path, ckpt_path;
    std::string only_case, pred_dir, split_kind = "loco", split_out;
    std::uint64_t seed = 1;
    std::int64_t cases = 4, extent = 48, lesions = 1, folds = 1;
    double target_mm = 1.0, val_fraction = 0.2, threshold = 0.5;
    std::int64_t epochs = 0, steps_per_epoch = -1, batch_size = 0;
    double lr_max = 0.0, lr_min = -1.0, p_tumor = -1.0;
    std::int64_t val_every = 0, checkpoint_every = -1;
    std::vector<std::int64_t> widths, patch;

    const auto given = [](const CLI::App* sub, const std::string& name) {
        const CLI::Option* o = sub->get_option_no_throw(name);
        return o != nullptr && o->count() > 0;
    };
    const auto assemble = [&](const CLI::App* sub) {
        RunConfig rc;
        if (!config_path.empty()) rc = config_load(config_path);
        if (given(sub, "--manifest")) rc.manifest = manifest;
        if (given(sub, "--out")) rc.output_dir = out_dir;
        if (given(sub, "--epochs")) rc.train.epochs = epochs;
        if (given(sub, "--steps-per-epoch")) rc.train.steps_per_epoch = steps_per_epoch;
        if (given(sub, "--batch-size")) rc.train.batch_size = batch_size;
        if (given(sub, "--lr-max")) rc.train.lr_max = lr_max;
        if (given(sub, "--lr-min")) rc.train.lr_min = lr_min;
        if (given(sub, "--seed")) rc.train.seed = seed;
        if (given(sub, "--val-every")) rc.train.val_every = val_every;
        if (given(sub, "--checkpoint-every")) rc.train.checkpoint_every = checkpoint_every;
        if (given(sub, "--p-tumor")) rc.train.sampler.p_tumor = p_tumor;
        if (given(sub, "--threshold")) rc.ensemble.threshold = threshold;
        if (given(sub, "--widths")) {
            rc.model.widths = widths;
            rc.model.levels = std::int64_t(widths.size()) - 1;
        }
        if (given(sub, "--patch")) {
            if (patch.size() != 3)
                throw ConfigError("config: --patch wants exactly 3 extents");
            rc.train.sampler.patch = {patch[0], patch[1], patch[2]};
        }
        if (given(sub, "--checkpoint")) rc.checkpoints = {ckpt_path};
        rc.validate();
        return rc;
    };

    auto* ph = app.add_subcommand("phantom", "generate synthetic cases and a manifest");
    ph->add_option("--out", out_dir, "output directory")->required();
    ph->add_option("--seed", seed, "base seed; case i uses seed+i");
    ph->add_option("--cases", cases, "number of cases");
    ph->add_option("--extent", extent, "cubic extent (multiple of 16)");
    ph->add_option("--lesions", lesions, "lesions per case");
    ph->callback([&] { cmd_phantom(out_dir, seed, cases, extent, lesions); });

    auto* pp = app.add_subcommand("preprocess", "resample to isotropic spacing and normalize");
    pp->add_option("--manifest", manifest, "input manifest")->required();
    pp->add_option("--out", out_dir, "output directory")->required();
    pp->add_option("--target-mm", target_mm, "isotropic target spacing");
    pp->callback([&] { cmd_preprocess(manifest, out_dir, target_mm); });

    auto* tr = app.add_subcommand("train", "train a model on manifest cases");
    tr->add_option("--config", config_path, "JSON run configuration");
    tr->add_option("--manifest", manifest, "dataset manifest (overrides config)");
    tr->add_option("--out", out_dir, "output directory (overrides config)");
    tr->add_option("--epochs", epochs);
    tr->add_option("--steps-per-epoch", steps_per_epoch);
    tr->add_option("--batch-size", batch_size);
    tr->add_option("--lr-max", lr_max);
    tr->add_option("--lr-min", lr_min);
    tr->add_option("--seed", seed, "training seed");
    tr->add_option("--val-every", val_every);
    tr->add_option("--checkpoint-every", checkpoint_every);
    tr->add_option("--p-tumor", p_tumor);
    tr->add_option("--widths", widths, "channel widths; levels follows")->delimiter(',');
    tr->add_option("--patch", patch, "training patch extents x,y,z")->delimiter(',');
    tr->add_option("--holdout", holdout, "validate on this center, train on the rest");
    tr->add_option("--resume", resume_path, "checkpoint to continue from");
    tr->callback([&] { cmd_train(assemble(tr), holdout, resume_path); });

    auto* in = app.add_subcommand("infer", "single-model probabilities, masks, montages");
    in->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
    in->add_option("--config", config_path, "JSON run configuration");
    in->add_option("--manifest", manifest, "dataset manifest (overrides config)");
    in->add_option("--out", out_dir, "output directory (overrides config)");
    in->add_option("--threshold", threshold, "mask threshold (overrides config)");
    in->add_option("--case", only_case, "restrict to one case id");
    in->callback([&] { cmd_infer(assemble(in), ckpt_path, only_case); });

    auto* en = app.add_subcommand("ensemble", "average member probabilities, write masks");
    en->add_option("--config", config_path, "JSON run configuration (ensemble.checkpoints)");
    en->add_option("--checkpoint", ckpt_path, "single member (overrides config list)");
    en->add_option("--manifest", manifest, "dataset manifest (overrides config)");
    en->add_option("--out", out_dir, "output directory (overrides config)");
    en->add_option("--threshold", threshold, "mask threshold (overrides config)");
    en->callback([&] { cmd_ensemble(assemble(en)); });

    auto* ev = app.add_subcommand("evaluate", "score predicted masks against references");
    ev->add_option("--config", config_path, "JSON run configuration");
    ev->add_option("--manifest", manifest, "dataset manifest (overrides config)");
    ev->add_option("--pred-dir", pred_dir, "directory holding <case>_mask.nii.gz")->required();
    ev->callback([&] { cmd_evaluate(assemble(ev), pred_dir); });

    auto* sp = app.add_subcommand("split", "build cross-validation folds");
    sp->add_option("--manifest", manifest, "dataset manifest")->required();
    sp->add_option("--kind", split_kind, "loco | random");
    sp->add_option("--folds", folds, "random folds to draw");
    sp->add_option("--val-fraction", val_fraction, "random validation fraction");
    sp->add_option("--seed", seed, "random split seed");
    sp->add_option("--out", split_out, "also write the plan to this file");
    sp->callback([&] { cmd_split(manifest, split_kind, folds, val_fraction, seed, split_out); });

    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every op");
    gc->add_option("--seed", seed, "battery seed");
    gc->callback([&] { cmd_gradcheck(seed); });

    auto* df = app.add_subcommand("defaults", "print the default configuration");
    df->callback([] { std::cout << config_print(RunConfig{}); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
