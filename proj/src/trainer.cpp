// Copyright (c) 2026 voxseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Training loop and checkpoint file format.

#include "voxseg/trainer.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace voxseg {
namespace {

constexpr char kMagic[8] = {'V', 'O', 'X', 'S', 'E', 'G', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

class ByteWriter {
  public:
    template <typename T>
    void pod(const T& v) {
        static_assert(std::is_trivially_copyable_v<T>);
        buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
    }
    void str(const std::string& s) {
        pod(std::uint32_t(s.size()));
        buf_.append(s);
    }
    void floats(const float* p, std::size_t n) {
        buf_.append(reinterpret_cast<const char*>(p), n * sizeof(float));
    }
    const std::string& buffer() const { return buf_; }

  private:
    std::string buf_;
};

class ByteReader {
  public:
    ByteReader(const char* data, std::size_t size, std::string path)
        : data_(data), size_(size), path_(std::move(path)) {}

    template <typename T>
    T pod() {
        static_assert(std::is_trivially_copyable_v<T>);
        T v;
        take(&v, sizeof v);
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint32_t>();
        std::string s(std::size_t(n), '\0');
        take(s.data(), s.size());
        return s;
    }
    std::vector<float> floats(std::size_t n) {
        std::vector<float> v(n);
        take(v.data(), n * sizeof(float));
        return v;
    }

  private:
    void take(void* out, std::size_t n) {
        require(pos_ + n <= size_, "checkpoint: truncated file " + path_);
        std::memcpy(out, data_ + pos_, n);
        pos_ += n;
    }

    const char* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
    std::string path_;
};

void write_model_config(ByteWriter& w, const ModelConfig& m) {
    w.pod(m.in_channels);
    w.pod(m.out_channels);
    w.pod(m.levels);
    w.pod(m.stem_kernel);
    w.pod(m.reduction);
    w.pod(std::uint8_t(m.order));
    w.pod(std::uint8_t(m.enable_paths));
    w.pod(std::uint64_t(m.widths.size()));
    for (auto x : m.widths) w.pod(x);
}

ModelConfig read_model_config(ByteReader& r) {
    ModelConfig m;
    m.in_channels = r.pod<std::int64_t>();
    m.out_channels = r.pod<std::int64_t>();
    m.levels = r.pod<std::int64_t>();
    m.stem_kernel = r.pod<std::int64_t>();
    m.reduction = r.pod<std::int64_t>();
    m.order = BlockOrder(r.pod<std::uint8_t>());
    m.enable_paths = r.pod<std::uint8_t>() != 0;
    m.widths.resize(r.pod<std::uint64_t>());
    for (auto& x : m.widths) x = r.pod<std::int64_t>();
    return m;
}

ModelParams<float> deep_copy(const ModelParams<float>& params) {
    ModelParams<float> out;
    for (const auto& [name, t] : params)
        out.emplace(name, TensorF::from_data(
                              t.shape(), std::vector<float>(t.values().begin(),
                                                            t.values().end())));
    return out;
}

// Mean DSC over full-volume forward passes. Volumes whose extents are not
// multiples of the pooling divisor are padded on the high side with
// background (PET 0, CT -1, matching the sampler's padding) and the
// prediction is read back from the un-padded region only.
double validation_dsc(const ModelParams<float>& params, const ModelConfig& mcfg,
                      const std::vector<PatientCase>& val_cases) {
    NoGradGuard guard;
    std::vector<MetricsReport> reports;
    for (const PatientCase& c : val_cases) {
        require(c.gtv.has_value(), "train: validation case " + c.case_id + " has no mask");
        require(c.ct.ct_normalized,
                "train: normalize the CT of validation case " + c.case_id + " first");
        Volume pet = c.pet;
        pet_zscore(pet);

        const auto& n = c.pet.dim;
        const std::int64_t div = mcfg.divisor();
        std::array<std::int64_t, 3> pd{};
        for (int a = 0; a < 3; ++a)
            pd[std::size_t(a)] = (n[std::size_t(a)] + div - 1) / div * div;
        const std::size_t numel = std::size_t(pd[0] * pd[1] * pd[2]);
        std::vector<float> px(numel, 0.0f), cx(numel, -1.0f);
        std::size_t i = 0;
        for (std::int64_t z = 0; z < pd[2]; ++z)
            for (std::int64_t y = 0; y < pd[1]; ++y)
                for (std::int64_t x = 0; x < pd[0]; ++x, ++i)
                    if (x < n[0] && y < n[1] && z < n[2]) {
                        px[i] = pet.at(x, y, z);
                        cx[i] = c.ct.at(x, y, z);
                    }
        const Shape shape{1, 1, pd[2], pd[1], pd[0]};
        const TensorF input = concat_channels(TensorF::from_data(shape, std::move(px)),
                                              TensorF::from_data(shape, std::move(cx)));
        const TensorF prob = forward(params, mcfg, input);

        std::vector<float> pred(std::size_t(c.pet.numel()));
        const auto pv = prob.values();
        i = 0;
        std::size_t j = 0;
        for (std::int64_t z = 0; z < pd[2]; ++z)
            for (std::int64_t y = 0; y < pd[1]; ++y)
                for (std::int64_t x = 0; x < pd[0]; ++x, ++i)
                    if (x < n[0] && y < n[1] && z < n[2])
                        pred[j++] = pv[i] > 0.5f ? 1.0f : 0.0f;
        const Shape vol_shape{1, 1, n[2], n[1], n[0]};
        reports.push_back(segmentation_metrics(
            TensorF::from_data(vol_shape, std::move(pred)), volume_to_tensor(*c.gtv)));
    }
    return aggregate_metrics(reports).mean.dsc;
}

std::string format_step_line(std::int64_t step, double epoch_fraction, double lr,
                             double dice, double focal, double total) {
    char line[160];
    std::snprintf(line, sizeof line,
                  "step=%lld epoch=%.4f lr=%.6e dice=%.6f focal=%.6f total=%.6f",
                  static_cast<long long>(step), epoch_fraction, lr, dice, focal, total);
    return line;
}

}  // namespace

void checkpoint_save(const Checkpoint& c, const std::string& path) {
    ByteWriter w;
    w.pod(kMagic);
    w.pod(kVersion);
    write_model_config(w, c.model);
    w.pod(c.step);

    w.pod(std::uint64_t(c.params.size()));
    for (const auto& [name, t] : c.params) {
        w.str(name);
        w.pod(std::uint64_t(t.rank()));
        for (auto d : t.shape()) w.pod(d);
        w.floats(t.values().data(), t.values().size());
    }

    w.pod(std::uint64_t(c.opt.m.size()));
    for (const auto& [name, m] : c.opt.m) {
        const auto it = c.opt.v.find(name);
        require(it != c.opt.v.end() && it->second.size() == m.size(),
                "checkpoint: optimizer moments out of sync for " + name);
        w.str(name);
        w.pod(std::uint64_t(m.size()));
        w.floats(m.data(), m.size());
        w.floats(it->second.data(), it->second.size());
    }
    w.pod(c.opt.step);

    const std::string& body = w.buffer();
    std::uint32_t crc = std::uint32_t(
        crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(body.data()),
              uInt(body.size())));

    std::ofstream out(path, std::ios::binary);
    require(out.good(), "checkpoint: cannot open " + path + " for writing");
    out.write(body.data(), std::streamsize(body.size()));
    out.write(reinterpret_cast<const char*>(&crc), sizeof crc);
    require(out.good(), "checkpoint: write failed for " + path);
}

Checkpoint checkpoint_load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "checkpoint: cannot open " + path);
    std::string file((std::istreambuf_iterator<char>(in)), {});
    require(file.size() > sizeof kMagic + sizeof kVersion + sizeof(std::uint32_t),
            "checkpoint: truncated file " + path);

    std::uint32_t stored;
    std::memcpy(&stored, file.data() + file.size() - 4, 4);
    const std::uint32_t actual = std::uint32_t(
        crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(file.data()),
              uInt(file.size() - 4)));
    require(stored == actual, "checkpoint: checksum mismatch (corrupt file) " + path);

    ByteReader r(file.data(), file.size() - 4, path);
    const auto magic = r.pod<std::array<char, 8>>();
    require(std::memcmp(magic.data(), kMagic, 8) == 0, "checkpoint: bad magic in " + path);
    const auto version = r.pod<std::uint32_t>();
    require(version == kVersion, "checkpoint: unsupported version " +
                                     std::to_string(version) + " in " + path);

    Checkpoint c;
    c.model = read_model_config(r);
    c.step = r.pod<std::int64_t>();

    const auto n_params = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < n_params; ++i) {
        const std::string name = r.str();
        Shape shape(r.pod<std::uint64_t>());
        std::int64_t numel = 1;
        for (auto& d : shape) {
            d = r.pod<std::int64_t>();
            numel *= d;
        }
        c.params.emplace(name,
                         TensorF::from_data(shape, r.floats(std::size_t(numel))));
    }

    const auto n_opt = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < n_opt; ++i) {
        const std::string name = r.str();
        const auto count = r.pod<std::uint64_t>();
        c.opt.m[name] = r.floats(std::size_t(count));
        c.opt.v[name] = r.floats(std::size_t(count));
    }
    c.opt.step = r.pod<std::int64_t>();
    return c;
}

TrainResult train(const ModelConfig& mcfg, const std::vector<PatientCase>& train_cases,
                  const std::vector<PatientCase>& val_cases, const TrainConfig& cfg,
                  const std::string& checkpoint_dir, std::ostream* log_stream,
                  const Checkpoint* resume) {
    mcfg.validate();
    cfg.validate();
    require(!train_cases.empty(), "train: the training set is empty");
    for (const PatientCase& c : train_cases)
        require(c.gtv.has_value(), "train: training case " + c.case_id + " has no mask");

    ModelParams<float> params;
    OptimizerStateF opt;
    std::int64_t start_step = 0;
    if (resume) {
        require(resume->model == mcfg,
                "train: checkpoint was written for a different model config");
        params = deep_copy(resume->params);
        opt = resume->opt;
        start_step = resume->step;
    } else {
        params = build_model<float>(mcfg, cfg.seed);
    }
    set_requires_grad(params, true);

    const std::int64_t n_train = std::int64_t(train_cases.size());
    const std::int64_t steps_per_epoch =
        cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : n_train;
    const std::int64_t total_steps = cfg.epochs * steps_per_epoch;
    require(start_step <= total_steps, "train: checkpoint is past the requested run");
    if (!checkpoint_dir.empty()) std::filesystem::create_directories(checkpoint_dir);

    TrainResult result;
    auto emit = [&](std::string line) {
        if (log_stream) *log_stream << line << '\n';
        result.log.push_back(std::move(line));
    };

    for (std::int64_t step = start_step; step < total_steps; ++step) {
        const double epoch_fraction = double(step) / double(steps_per_epoch);
        const double lr = cosine_lr(epoch_fraction, cfg);

        zero_grads(params);
        double dice_value = 0.0, focal_value = 0.0;
        TensorF batch_total;
        for (std::int64_t b = 0; b < cfg.batch_size; ++b) {
            // The patch is a function of the global patch index alone, so a
            // resumed run draws exactly what the uninterrupted run would.
            const std::int64_t patch_index = step * cfg.batch_size + b;
            const PatientCase& c = train_cases[std::size_t(patch_index % n_train)];
            Rng rng(mix_seed(mix_seed(cfg.seed, 0x73746570ULL),
                             std::uint64_t(patch_index)));
            const PatchSample s = sample_patch(c, cfg.sampler, rng);

            const TensorF x = concat_channels(s.pet, s.ct);
            const TensorF p = forward(params, mcfg, x);
            const TensorF dice = soft_dice_loss(s.label, p, cfg.loss);
            const TensorF focal = focal_loss(s.label, p, cfg.loss);
            dice_value += double(dice.item());
            focal_value += double(focal.item());
            const TensorF item_total = add(dice, focal);
            batch_total = b == 0 ? item_total : add(batch_total, item_total);
        }
        const TensorF loss = scale(batch_total, 1.0f / float(cfg.batch_size));
        const double loss_value = double(loss.item());
        dice_value /= double(cfg.batch_size);
        focal_value /= double(cfg.batch_size);

        if (!std::isfinite(loss_value)) {
            std::string note;
            if (!checkpoint_dir.empty()) {
                const std::string path = checkpoint_dir + "/diagnostic.ckpt";
                checkpoint_save({mcfg, step, params, opt}, path);
                note = "; diagnostic checkpoint at " + path;
            }
            throw Error("train: non-finite loss at step " + std::to_string(step) + note);
        }

        backward(loss);
        adam_step(params, opt, lr, cfg);

        result.step_total.push_back(loss_value);
        result.step_lr.push_back(lr);
        result.steps = step + 1;
        emit(format_step_line(step, epoch_fraction, lr, dice_value, focal_value,
                              loss_value));

        if ((step + 1) % steps_per_epoch == 0) {
            const std::int64_t epoch = (step + 1) / steps_per_epoch;
            if (!val_cases.empty() && epoch % cfg.val_every == 0) {
                const double dsc = validation_dsc(params, mcfg, val_cases);
                result.val_dsc.push_back(dsc);
                if (dsc > result.best_val_dsc) {
                    result.best_val_dsc = dsc;
                    result.best_params = deep_copy(params);
                    if (!checkpoint_dir.empty())
                        checkpoint_save({mcfg, step + 1, params, opt},
                                        checkpoint_dir + "/best.ckpt");
                }
                char line[96];
                std::snprintf(line, sizeof line, "epoch=%lld val_dsc=%.6f best=%.6f",
                              static_cast<long long>(epoch), dsc, result.best_val_dsc);
                emit(line);
            }
            if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 &&
                !checkpoint_dir.empty())
                checkpoint_save({mcfg, step + 1, params, opt},
                                checkpoint_dir + "/last.ckpt");
        }
    }

    zero_grads(params);
    set_requires_grad(params, false);
    result.params = std::move(params);
    if (result.best_params.empty()) result.best_params = deep_copy(result.params);
    return result;
}

}  // namespace voxseg
