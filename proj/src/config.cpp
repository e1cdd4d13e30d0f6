// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "voxseg/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace voxseg {

namespace {

using json = nlohmann::ordered_json;

// Every key in `obj` must be one of `allowed`; nesting is flat enough that
// a section-qualified key name pins the offender exactly.
void reject_unknown(const json& obj, const std::string& section,
                    std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : obj.items()) {
        bool known = false;
        for (const char* a : allowed) known = known || key == a;
        if (!known)
            throw ConfigError("config: unknown key " +
                              (section.empty() ? key : section + "." + key));
    }
}

template <typename T>
void fetch(const json& obj, const std::string& section, const char* key, T& out) {
    if (!obj.contains(key)) return;  // absent keys keep their defaults
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config: bad value for " + section + "." + key + " (" +
                          e.what() + ")");
    }
}

const char* order_name(BlockOrder o) {
    return o == BlockOrder::ActThenNorm ? "act_then_norm" : "norm_then_act";
}

BlockOrder order_from_name(const std::string& s) {
    if (s == "act_then_norm") return BlockOrder::ActThenNorm;
    if (s == "norm_then_act") return BlockOrder::NormThenAct;
    throw ConfigError(
        "config: bad value for model.order (want act_then_norm or norm_then_act, got " +
        s + ")");
}

void parse_model(const json& sec, ModelConfig& m) {
    reject_unknown(sec, "model",
                   {"in_channels", "out_channels", "levels", "widths", "stem_kernel",
                    "reduction", "order", "enable_paths"});
    fetch(sec, "model", "in_channels", m.in_channels);
    fetch(sec, "model", "out_channels", m.out_channels);
    fetch(sec, "model", "levels", m.levels);
    fetch(sec, "model", "widths", m.widths);
    fetch(sec, "model", "stem_kernel", m.stem_kernel);
    fetch(sec, "model", "reduction", m.reduction);
    if (sec.contains("order")) {
        std::string s;
        fetch(sec, "model", "order", s);
        m.order = order_from_name(s);
    }
    fetch(sec, "model", "enable_paths", m.enable_paths);
}

void parse_train(const json& sec, TrainConfig& t) {
    reject_unknown(sec, "train",
                   {"epochs", "steps_per_epoch", "batch_size", "lr_max", "lr_min",
                    "cycle_epochs", "beta1", "beta2", "adam_eps", "seed", "val_every",
                    "checkpoint_every"});
    fetch(sec, "train", "epochs", t.epochs);
    fetch(sec, "train", "steps_per_epoch", t.steps_per_epoch);
    fetch(sec, "train", "batch_size", t.batch_size);
    fetch(sec, "train", "lr_max", t.lr_max);
    fetch(sec, "train", "lr_min", t.lr_min);
    fetch(sec, "train", "cycle_epochs", t.cycle_epochs);
    fetch(sec, "train", "beta1", t.beta1);
    fetch(sec, "train", "beta2", t.beta2);
    fetch(sec, "train", "adam_eps", t.adam_eps);
    fetch(sec, "train", "seed", t.seed);
    fetch(sec, "train", "val_every", t.val_every);
    fetch(sec, "train", "checkpoint_every", t.checkpoint_every);
}

void parse_loss(const json& sec, LossConfig& l) {
    reject_unknown(sec, "loss", {"focal_gamma", "smooth", "prob_clamp", "focal_symmetric"});
    fetch(sec, "loss", "focal_gamma", l.focal_gamma);
    fetch(sec, "loss", "smooth", l.smooth);
    fetch(sec, "loss", "prob_clamp", l.prob_clamp);
    fetch(sec, "loss", "focal_symmetric", l.focal_symmetric);
}

void parse_sampler(const json& sec, SamplerConfig& s) {
    reject_unknown(sec, "sampler", {"patch", "p_tumor", "rng_seed"});
    if (sec.contains("patch")) {
        std::vector<std::int64_t> p;
        fetch(sec, "sampler", "patch", p);
        if (p.size() != 3)
            throw ConfigError("config: sampler.patch wants exactly 3 extents, got " +
                              std::to_string(p.size()));
        s.patch = {p[0], p[1], p[2]};
    }
    fetch(sec, "sampler", "p_tumor", s.p_tumor);
    fetch(sec, "sampler", "rng_seed", s.rng_seed);
}

void parse_ensemble(const json& sec, EnsembleConfig& e, std::vector<std::string>& paths) {
    reject_unknown(sec, "ensemble",
                   {"threshold", "logit_mean", "tile_extent", "tile_stride", "checkpoints"});
    fetch(sec, "ensemble", "threshold", e.threshold);
    fetch(sec, "ensemble", "logit_mean", e.logit_mean);
    fetch(sec, "ensemble", "tile_extent", e.tile_extent);
    fetch(sec, "ensemble", "tile_stride", e.tile_stride);
    fetch(sec, "ensemble", "checkpoints", paths);
}

}  // namespace

void RunConfig::validate() const {
    try {
        model.validate();
        train.validate();  // covers train.loss and train.sampler
        ensemble.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

RunConfig config_parse(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: not valid JSON (") + e.what() + ")");
    }
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    reject_unknown(j, "",
                   {"manifest", "output_dir", "model", "train", "loss", "sampler",
                    "ensemble"});

    RunConfig cfg;
    fetch(j, "", "manifest", cfg.manifest);
    fetch(j, "", "output_dir", cfg.output_dir);
    for (const char* section : {"model", "train", "loss", "sampler", "ensemble"})
        if (j.contains(section) && !j.at(section).is_object())
            throw ConfigError(std::string("config: section ") + section +
                              " must be a JSON object");
    if (j.contains("model")) parse_model(j.at("model"), cfg.model);
    if (j.contains("train")) parse_train(j.at("train"), cfg.train);
    if (j.contains("loss")) parse_loss(j.at("loss"), cfg.train.loss);
    if (j.contains("sampler")) parse_sampler(j.at("sampler"), cfg.train.sampler);
    if (j.contains("ensemble")) parse_ensemble(j.at("ensemble"), cfg.ensemble, cfg.checkpoints);
    cfg.validate();
    return cfg;
}

RunConfig config_load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return config_parse(ss.str());
}

std::string config_print(const RunConfig& cfg) {
    json j;
    j["manifest"] = cfg.manifest;
    j["output_dir"] = cfg.output_dir;
    j["model"] = {{"in_channels", cfg.model.in_channels},
                  {"out_channels", cfg.model.out_channels},
                  {"levels", cfg.model.levels},
                  {"widths", cfg.model.widths},
                  {"stem_kernel", cfg.model.stem_kernel},
                  {"reduction", cfg.model.reduction},
                  {"order", order_name(cfg.model.order)},
                  {"enable_paths", cfg.model.enable_paths}};
    j["train"] = {{"epochs", cfg.train.epochs},
                  {"steps_per_epoch", cfg.train.steps_per_epoch},
                  {"batch_size", cfg.train.batch_size},
                  {"lr_max", cfg.train.lr_max},
                  {"lr_min", cfg.train.lr_min},
                  {"cycle_epochs", cfg.train.cycle_epochs},
                  {"beta1", cfg.train.beta1},
                  {"beta2", cfg.train.beta2},
                  {"adam_eps", cfg.train.adam_eps},
                  {"seed", cfg.train.seed},
                  {"val_every", cfg.train.val_every},
                  {"checkpoint_every", cfg.train.checkpoint_every}};
    j["loss"] = {{"focal_gamma", cfg.train.loss.focal_gamma},
                 {"smooth", cfg.train.loss.smooth},
                 {"prob_clamp", cfg.train.loss.prob_clamp},
                 {"focal_symmetric", cfg.train.loss.focal_symmetric}};
    j["sampler"] = {{"patch", std::vector<std::int64_t>(cfg.train.sampler.patch.begin(),
                                                        cfg.train.sampler.patch.end())},
                    {"p_tumor", cfg.train.sampler.p_tumor},
                    {"rng_seed", cfg.train.sampler.rng_seed}};
    j["ensemble"] = {{"threshold", cfg.ensemble.threshold},
                     {"logit_mean", cfg.ensemble.logit_mean},
                     {"tile_extent", cfg.ensemble.tile_extent},
                     {"tile_stride", cfg.ensemble.tile_stride},
                     {"checkpoints", cfg.checkpoints}};
    return j.dump(2) + "\n";
}

}  // namespace voxseg
