// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Squeeze-and-excitation normalization: per-(sample, channel) standardization
// whose scale and shift are produced by small excitation networks looking at
// the raw layer input. Plus the convolutional and residual blocks built on it.

#pragma once

#include <optional>

#include "voxseg/ops3d.hpp"
#include "voxseg/tensor.hpp"

namespace voxseg {

enum class SEActivation { Sigmoid, Tanh };

// Two fully connected layers squeezing C -> C/r -> C, with a bounded output
// activation: sigmoid for scale factors, tanh for shifts.
template <typename S>
struct SEBlockParams {
    Tensor<S> w1;  // [C/r, C]
    Tensor<S> b1;  // [C/r]
    Tensor<S> w2;  // [C, C/r]
    Tensor<S> b2;  // [C]
    std::int64_t reduction = 2;
    SEActivation out_activation = SEActivation::Sigmoid;

    std::int64_t channels() const { return w2.shape()[0]; }

    void validate() const {
        require(reduction >= 1, "se_block: reduction must be >= 1");
        const std::int64_t c = channels();
        require(c % reduction == 0, "se_block: channel count " + std::to_string(c) +
                                        " not divisible by reduction " +
                                        std::to_string(reduction));
        const std::int64_t hidden = c / reduction;
        require(w1.rank() == 2 && w1.shape()[0] == hidden && w1.shape()[1] == c,
                "se_block: w1 must be [C/r, C], got " + shape_str(w1.shape()));
        require(b1.rank() == 1 && b1.shape()[0] == hidden,
                "se_block: b1 must be [C/r], got " + shape_str(b1.shape()));
        require(w2.rank() == 2 && w2.shape()[1] == hidden,
                "se_block: w2 must be [C, C/r], got " + shape_str(w2.shape()));
        require(b2.rank() == 1 && b2.shape()[0] == c,
                "se_block: b2 must be [C], got " + shape_str(b2.shape()));
    }
};

// Pools each channel to a descriptor, then squeezes it through the two FC
// layers: activation(linear2(relu(linear1(gap(x))))). Output is one value
// per (sample, channel).
template <typename S>
Tensor<S> se_block(const Tensor<S>& x, const SEBlockParams<S>& p) {
    p.validate();
    detail::check_rank5(x, "se_block");
    require(x.shape()[1] == p.channels(),
            "se_block: input has " + std::to_string(x.shape()[1]) +
                " channels, block expects " + std::to_string(p.channels()));
    auto h = relu(linear(global_avg_pool(x), p.w1, p.b1));
    auto out = linear(h, p.w2, p.b2);
    return p.out_activation == SEActivation::Sigmoid ? sigmoid(out) : tanh_(out);
}

template <typename S>
struct SENormParams {
    SEBlockParams<S> gamma_block;  // sigmoid: scales in (0,1)
    SEBlockParams<S> beta_block;   // tanh: shifts in (-1,1)
    double epsilon = 1e-5;

    std::int64_t channels() const { return gamma_block.channels(); }

    void validate() const {
        gamma_block.validate();
        beta_block.validate();
        require(gamma_block.out_activation == SEActivation::Sigmoid,
                "se_norm: gamma block must use sigmoid");
        require(beta_block.out_activation == SEActivation::Tanh,
                "se_norm: beta block must use tanh");
        require(gamma_block.channels() == beta_block.channels(),
                "se_norm: gamma/beta blocks disagree on channel count");
        require(epsilon > 0, "se_norm: epsilon must be positive");
    }
};

// Standardize per (sample, channel), then scale by gamma and shift by beta,
// both computed from the raw pre-normalization input.
template <typename S>
Tensor<S> se_norm(const Tensor<S>& x, const SENormParams<S>& p) {
    p.validate();
    detail::check_rank5(x, "se_norm");
    require(x.shape()[1] == p.channels(),
            "se_norm: input has " + std::to_string(x.shape()[1]) +
                " channels, layer expects " + std::to_string(p.channels()));
    auto [mu, var] = channel_stats(x);
    auto inv_std = pow_(add_scalar(var, S(p.epsilon)), S(-0.5));
    auto normalized = channel_mul(channel_sub(x, mu), inv_std);
    auto gamma = se_block(x, p.gamma_block);
    auto beta = se_block(x, p.beta_block);
    return channel_add(channel_mul(normalized, gamma), beta);
}

// Plain instance normalization (standardize only, no learned terms); kept as
// an ablation baseline against se_norm.
template <typename S>
Tensor<S> instance_norm(const Tensor<S>& x, double epsilon = 1e-5) {
    detail::check_rank5(x, "instance_norm");
    require(epsilon > 0, "instance_norm: epsilon must be positive");
    auto [mu, var] = channel_stats(x);
    auto inv_std = pow_(add_scalar(var, S(epsilon)), S(-0.5));
    return channel_mul(channel_sub(x, mu), inv_std);
}

// Order of the activation relative to the normalization inside a block.
// ActThenNorm (conv -> relu -> se_norm) is the default; NormThenAct is the
// conventional alternative kept behind configuration.
enum class BlockOrder { ActThenNorm, NormThenAct };

template <typename S>
struct ConvBlockParams {
    Conv3dSpec spec;
    Tensor<S> w;
    std::optional<Tensor<S>> b;
    SENormParams<S> norm;
    BlockOrder order = BlockOrder::ActThenNorm;
};

// conv3d -> ReLU -> se_norm (or conv3d -> se_norm -> ReLU when configured).
// Stride-1 blocks with matched padding preserve spatial shape.
template <typename S>
Tensor<S> conv_block(const Tensor<S>& x, const ConvBlockParams<S>& p) {
    auto y = conv3d(x, p.w, p.b, p.spec);
    if (p.order == BlockOrder::ActThenNorm) return se_norm(relu(y), p.norm);
    return relu(se_norm(y, p.norm));
}

struct ResBlockSpec {
    std::int64_t in_channels = 0;
    std::int64_t out_channels = 0;
    Triple kernel = {3, 3, 3};
    bool projection = false;

    void validate() const {
        require(in_channels >= 1 && out_channels >= 1, "res_block: channel counts must be >= 1");
        require(projection == (in_channels != out_channels),
                "res_block: projection flag must equal (in_channels != out_channels)");
    }
};

template <typename S>
struct ResBlockParams {
    ResBlockSpec spec;
    ConvBlockParams<S> cb1;  // in -> out
    ConvBlockParams<S> cb2;  // out -> out
    // 1x1x1 conv_block shortcut, present iff spec.projection
    std::optional<ConvBlockParams<S>> proj;
};

// Residual layer: two stacked conv_blocks on the branch; shortcut is the
// identity when channel counts match, else a 1x1x1 projection conv_block.
template <typename S>
Tensor<S> res_block(const Tensor<S>& x, const ResBlockParams<S>& p) {
    p.spec.validate();
    require(bool(p.proj) == p.spec.projection,
            "res_block: projection parameters must be present iff spec.projection");
    auto branch = conv_block(conv_block(x, p.cb1), p.cb2);
    auto shortcut = p.proj ? conv_block(x, *p.proj) : x;
    require(branch.shape() == shortcut.shape(),
            "res_block: branch shape " + shape_str(branch.shape()) +
                " does not match shortcut shape " + shape_str(shortcut.shape()));
    return add(branch, shortcut);
}

// ---------------------------------------------------------------------------
// Parameter factories (deterministic given the Rng state)
// ---------------------------------------------------------------------------

namespace detail {

// Fan-in-scaled uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
template <typename S>
Tensor<S> fan_in_uniform(const Shape& shape, std::int64_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(double(fan_in));
    std::vector<S> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& e : v) e = S(rng.uniform(-bound, bound));
    return Tensor<S>::from_data(shape, std::move(v));
}

}  // namespace detail

// Hidden layer gets fan-in init; the final layer starts at zero so the block
// initially emits sigmoid(0)=0.5 or tanh(0)=0, an identity-like start.
template <typename S>
SEBlockParams<S> make_se_block(std::int64_t channels, std::int64_t reduction,
                               SEActivation act, Rng& rng) {
    require(channels % reduction == 0, "make_se_block: channels " +
                                           std::to_string(channels) +
                                           " not divisible by reduction " +
                                           std::to_string(reduction));
    const std::int64_t hidden = channels / reduction;
    SEBlockParams<S> p;
    p.reduction = reduction;
    p.out_activation = act;
    p.w1 = detail::fan_in_uniform<S>({hidden, channels}, channels, rng);
    p.b1 = Tensor<S>::zeros({hidden});
    p.w2 = Tensor<S>::zeros({channels, hidden});
    p.b2 = Tensor<S>::zeros({channels});
    return p;
}

template <typename S>
SENormParams<S> make_se_norm(std::int64_t channels, std::int64_t reduction, Rng& rng,
                             double epsilon = 1e-5) {
    SENormParams<S> p;
    p.gamma_block = make_se_block<S>(channels, reduction, SEActivation::Sigmoid, rng);
    p.beta_block = make_se_block<S>(channels, reduction, SEActivation::Tanh, rng);
    p.epsilon = epsilon;
    return p;
}

template <typename S>
ConvBlockParams<S> make_conv_block(std::int64_t in_channels, std::int64_t out_channels,
                                   const Triple& kernel, Rng& rng,
                                   BlockOrder order = BlockOrder::ActThenNorm,
                                   std::int64_t reduction = 2) {
    ConvBlockParams<S> p;
    p.spec.in_channels = in_channels;
    p.spec.out_channels = out_channels;
    p.spec.kernel = kernel;
    p.spec.padding = {kernel[0] / 2, kernel[1] / 2, kernel[2] / 2};
    p.spec.has_bias = true;
    const std::int64_t fan_in = in_channels * kernel[0] * kernel[1] * kernel[2];
    p.w = detail::fan_in_uniform<S>(
        {out_channels, in_channels, kernel[0], kernel[1], kernel[2]}, fan_in, rng);
    p.b = Tensor<S>::zeros({out_channels});
    p.norm = make_se_norm<S>(out_channels, reduction, rng);
    p.order = order;
    return p;
}

template <typename S>
ResBlockParams<S> make_res_block(const ResBlockSpec& spec, Rng& rng,
                                 BlockOrder order = BlockOrder::ActThenNorm,
                                 std::int64_t reduction = 2) {
    spec.validate();
    ResBlockParams<S> p;
    p.spec = spec;
    p.cb1 = make_conv_block<S>(spec.in_channels, spec.out_channels, spec.kernel, rng, order,
                               reduction);
    p.cb2 = make_conv_block<S>(spec.out_channels, spec.out_channels, spec.kernel, rng, order,
                               reduction);
    if (spec.projection)
        p.proj = make_conv_block<S>(spec.in_channels, spec.out_channels, {1, 1, 1}, rng,
                                    order, reduction);
    return p;
}

}  // namespace voxseg
