// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Encoder-decoder segmentation network over two-channel volumes: residual
// encoder with a wide-kernel stem and max-pool downsampling, transposed-conv
// decoder with concatenated skip connections, low-resolution upsampling
// paths summed at full resolution, sigmoid head.

#pragma once

#include <map>
#include <string>
#include <vector>

#include "voxseg/senorm.hpp"

namespace voxseg {

struct ModelConfig {
    std::int64_t in_channels = 2;  // PET + CT
    std::int64_t out_channels = 1;
    std::int64_t levels = 4;  // pooling stages
    std::vector<std::int64_t> widths = {32, 64, 128, 256, 512};
    std::int64_t stem_kernel = 7;
    std::int64_t reduction = 2;
    BlockOrder order = BlockOrder::ActThenNorm;
    // When false the low-resolution upsampling paths are skipped entirely;
    // with zero path weights the two settings produce identical outputs.
    bool enable_paths = true;

    bool operator==(const ModelConfig&) const = default;

    std::int64_t divisor() const { return std::int64_t(1) << levels; }

    void validate() const {
        require(in_channels >= 1 && out_channels >= 1, "model: channel counts must be >= 1");
        require(levels >= 0, "model: negative level count");
        require(std::int64_t(widths.size()) == levels + 1,
                "model: widths length " + std::to_string(widths.size()) +
                    " must equal levels+1 = " + std::to_string(levels + 1));
        require(stem_kernel >= 1 && stem_kernel % 2 == 1, "model: stem kernel must be odd");
        require(reduction >= 1, "model: reduction must be >= 1");
        for (auto w : widths)
            require(w >= 1 && w % reduction == 0,
                    "model: every width must be a positive multiple of the SE reduction " +
                        std::to_string(reduction));
    }
};

// Named parameter store. std::map iterates in lexicographic name order,
// which checkpointing relies on.
template <typename S>
using ModelParams = std::map<std::string, Tensor<S>>;

namespace detail {

// One traversal serves both building (init from rng) and viewing (lookup):
// the two modes cannot drift apart on names or shapes.
template <typename S>
class ParamWalker {
public:
    ParamWalker(ModelParams<S>& params, Rng* rng) : params_(params), rng_(rng) {}

    Tensor<S> tensor(const std::string& name, const Shape& shape, std::int64_t fan_in,
                     bool zero_init) {
        if (rng_) {
            require(!params_.count(name), "model build: duplicate parameter " + name);
            Tensor<S> t = zero_init ? Tensor<S>::zeros(shape)
                                    : fan_in_uniform<S>(shape, fan_in, *rng_);
            params_.emplace(name, t);
            return t;
        }
        auto it = params_.find(name);
        require(it != params_.end(), "model: missing parameter " + name);
        require(it->second.shape() == shape,
                "model: parameter " + name + " has shape " + shape_str(it->second.shape()) +
                    ", expected " + shape_str(shape));
        return it->second;
    }

    SEBlockParams<S> se_block(const std::string& prefix, std::int64_t c, std::int64_t r,
                              SEActivation act) {
        SEBlockParams<S> p;
        p.reduction = r;
        p.out_activation = act;
        const std::int64_t hidden = c / r;
        p.w1 = tensor(prefix + ".w1", {hidden, c}, c, false);
        p.b1 = tensor(prefix + ".b1", {hidden}, c, true);
        // zero-initialized final layer: the block starts at its activation's
        // zero point (gamma 0.5, beta 0), an identity-like start
        p.w2 = tensor(prefix + ".w2", {c, hidden}, hidden, true);
        p.b2 = tensor(prefix + ".b2", {c}, hidden, true);
        return p;
    }

    SENormParams<S> se_norm(const std::string& prefix, std::int64_t c, std::int64_t r) {
        SENormParams<S> p;
        p.gamma_block = se_block(prefix + ".gamma", c, r, SEActivation::Sigmoid);
        p.beta_block = se_block(prefix + ".beta", c, r, SEActivation::Tanh);
        return p;
    }

    ConvBlockParams<S> conv_block(const std::string& prefix, std::int64_t in, std::int64_t out,
                                  std::int64_t kernel, const ModelConfig& cfg) {
        ConvBlockParams<S> p;
        p.spec.in_channels = in;
        p.spec.out_channels = out;
        p.spec.kernel = {kernel, kernel, kernel};
        p.spec.padding = {kernel / 2, kernel / 2, kernel / 2};
        p.spec.has_bias = true;
        const std::int64_t fan_in = in * kernel * kernel * kernel;
        p.w = tensor(prefix + ".conv.w", {out, in, kernel, kernel, kernel}, fan_in, false);
        p.b = tensor(prefix + ".conv.b", {out}, fan_in, true);
        p.norm = se_norm(prefix, out, cfg.reduction);
        p.order = cfg.order;
        return p;
    }

    ResBlockParams<S> res_block(const std::string& prefix, std::int64_t in, std::int64_t out,
                                std::int64_t kernel, const ModelConfig& cfg) {
        ResBlockParams<S> p;
        p.spec.in_channels = in;
        p.spec.out_channels = out;
        p.spec.kernel = {kernel, kernel, kernel};
        p.spec.projection = in != out;
        p.cb1 = conv_block(prefix + ".cb1", in, out, kernel, cfg);
        p.cb2 = conv_block(prefix + ".cb2", out, out, kernel, cfg);
        if (p.spec.projection) p.proj = conv_block(prefix + ".proj", in, out, 1, cfg);
        return p;
    }

    // Transposed conv doubling spatial extents: kernel 3, stride 2, pad 1,
    // output_padding 1.
    std::pair<Tensor<S>, Tensor<S>> upsample(const std::string& prefix, std::int64_t in,
                                             std::int64_t out) {
        Tensor<S> w = tensor(prefix + ".w", {in, out, 3, 3, 3}, in * 27, false);
        Tensor<S> b = tensor(prefix + ".b", {out}, in * 27, true);
        return {w, b};
    }

private:
    ModelParams<S>& params_;
    Rng* rng_;
};

inline std::string level_name(const char* stem, std::int64_t k) {
    return std::string(stem) + std::to_string(k);
}

}  // namespace detail

template <typename S>
ModelParams<S> build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams<S> params;
    Rng rng(mix_seed(seed, 0x6e6574));  // distinct stream per purpose
    detail::ParamWalker<S> w(params, &rng);

    w.res_block("stem", cfg.in_channels, cfg.widths[0], cfg.stem_kernel, cfg);
    for (std::int64_t k = 1; k <= cfg.levels; ++k)
        w.res_block(detail::level_name("enc", k), cfg.widths[std::size_t(k - 1)],
                    cfg.widths[std::size_t(k)], 3, cfg);
    for (std::int64_t k = cfg.levels - 1; k >= 0; --k) {
        const std::int64_t wk = cfg.widths[std::size_t(k)];
        const std::string d = detail::level_name("dec", k);
        w.upsample(d + ".up", cfg.widths[std::size_t(k + 1)], wk);
        w.conv_block(d + ".cb1", 2 * wk, wk, 3, cfg);
        w.conv_block(d + ".cb2", wk, wk, 3, cfg);
    }
    for (std::int64_t k = 1; k <= cfg.levels - 1; ++k)
        w.conv_block(detail::level_name("path", k), cfg.widths[std::size_t(k)],
                     cfg.widths[0], 1, cfg);
    // plain 1x1x1 convolution (no normalization) ahead of the sigmoid
    w.tensor("head.w", {cfg.out_channels, cfg.widths[0], 1, 1, 1}, cfg.widths[0], false);
    w.tensor("head.b", {cfg.out_channels}, cfg.widths[0], true);
    return params;
}

template <typename S>
std::int64_t count_params(const ModelParams<S>& params) {
    std::int64_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

template <typename S>
void set_requires_grad(ModelParams<S>& params, bool on = true) {
    for (auto& [name, t] : params) t.set_requires_grad(on);
}

template <typename S>
void zero_grads(ModelParams<S>& params) {
    for (auto& [name, t] : params) t.zero_grad();
}

// Full forward pass: [N,in_channels,D,H,W] -> [N,out_channels,D,H,W] of
// probabilities in (0,1). Spatial extents must be divisible by 2^levels.
template <typename S>
Tensor<S> forward(const ModelParams<S>& params, const ModelConfig& cfg, const Tensor<S>& x) {
    cfg.validate();
    detail::check_rank5(x, "forward");
    require(x.shape()[1] == cfg.in_channels,
            "forward: input has " + std::to_string(x.shape()[1]) + " channels, model expects " +
                std::to_string(cfg.in_channels));
    const std::int64_t div = cfg.divisor();
    for (int a = 2; a < 5; ++a)
        require(x.shape()[std::size_t(a)] % div == 0,
                "forward: spatial extents " + shape_str(x.shape()) +
                    " must be divisible by " + std::to_string(div) +
                    "; pad the input volume first");

    // The walker only reads in view mode; the const_cast never mutates.
    detail::ParamWalker<S> w(const_cast<ModelParams<S>&>(params), nullptr);

    // Encoder: level k holds features at extent D / 2^k.
    std::vector<Tensor<S>> feats;
    feats.push_back(res_block(x, w.res_block("stem", cfg.in_channels, cfg.widths[0],
                                             cfg.stem_kernel, cfg)));
    for (std::int64_t k = 1; k <= cfg.levels; ++k) {
        auto pooled = maxpool3d(feats.back());
        feats.push_back(res_block(
            pooled, w.res_block(detail::level_name("enc", k), cfg.widths[std::size_t(k - 1)],
                                cfg.widths[std::size_t(k)], 3, cfg)));
        for (int a = 2; a < 5; ++a)
            require(feats.back().shape()[std::size_t(a)] == (x.shape()[std::size_t(a)] >> k),
                    "forward: encoder level " + std::to_string(k) + " extent mismatch");
    }

    // Decoder: upsample, concatenate the skip, run two conv blocks. The
    // outputs at the three lowest resolutions feed the upsampling paths.
    Tensor<S> y = feats[std::size_t(cfg.levels)];
    std::vector<Tensor<S>> dec_out(std::size_t(cfg.levels));
    for (std::int64_t k = cfg.levels - 1; k >= 0; --k) {
        const std::int64_t wk = cfg.widths[std::size_t(k)];
        const std::string d = detail::level_name("dec", k);
        auto [uw, ub] = w.upsample(d + ".up", cfg.widths[std::size_t(k + 1)], wk);
        Conv3dSpec up;
        up.in_channels = cfg.widths[std::size_t(k + 1)];
        up.out_channels = wk;
        up.stride = {2, 2, 2};
        up.output_padding = {1, 1, 1};
        y = conv3d_transposed(y, uw, std::optional<Tensor<S>>(ub), up);
        y = concat_channels(y, feats[std::size_t(k)]);
        y = conv_block(y, w.conv_block(d + ".cb1", 2 * wk, wk, 3, cfg));
        y = conv_block(y, w.conv_block(d + ".cb2", wk, wk, 3, cfg));
        dec_out[std::size_t(k)] = y;
    }

    // Upsampling paths: 1x1x1 block to head width, trilinear resize to full
    // resolution, summed onto the final decoder features.
    if (cfg.enable_paths) {
        const Triple full = {x.shape()[2], x.shape()[3], x.shape()[4]};
        for (std::int64_t k = 1; k <= cfg.levels - 1; ++k) {
            auto p = conv_block(dec_out[std::size_t(k)],
                                w.conv_block(detail::level_name("path", k),
                                             cfg.widths[std::size_t(k)], cfg.widths[0], 1,
                                             cfg));
            y = add(y, trilinear_resize(p, full));
        }
    }

    Tensor<S> hw = w.tensor("head.w", {cfg.out_channels, cfg.widths[0], 1, 1, 1},
                            cfg.widths[0], false);
    Tensor<S> hb = w.tensor("head.b", {cfg.out_channels}, cfg.widths[0], true);
    Conv3dSpec head;
    head.in_channels = cfg.widths[0];
    head.out_channels = cfg.out_channels;
    head.kernel = {1, 1, 1};
    head.padding = {0, 0, 0};
    return sigmoid(conv3d(y, hw, std::optional<Tensor<S>>(hb), head));
}

}  // namespace voxseg
