// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON file covering the model, training, loss,
// sampler, and ensemble settings plus the dataset manifest path and output
// directory. Unknown keys are rejected, and printing the defaults yields a
// file that parses back to the identical configuration.

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "voxseg/inference.hpp"
#include "voxseg/trainer.hpp"

namespace voxseg {

// Raised for malformed or semantically invalid configuration (the CLI maps
// it to its own exit code, distinct from runtime failures).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    std::string manifest;         // dataset manifest path ("" until set)
    std::string output_dir = "out";
    ModelConfig model;
    TrainConfig train;            // train.loss / train.sampler mirror the
                                  // top-level "loss" / "sampler" sections
    EnsembleConfig ensemble;
    std::vector<std::string> checkpoints;  // ensemble members, in order

    bool operator==(const RunConfig&) const = default;

    // Section validators, rethrown as ConfigError.
    void validate() const;
};

// Parse and validate a JSON document / file.
RunConfig config_parse(const std::string& text);
RunConfig config_load(const std::string& path);

// Serialize (stable key order, full double precision):
// config_parse(config_print(c)) == c.
std::string config_print(const RunConfig& cfg);

}  // namespace voxseg
