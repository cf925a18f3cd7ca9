#include "desmoke/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "desmoke/error.hpp"
#include "desmoke/image_io.hpp"
#include "desmoke/smoke_synthesis.hpp"

namespace desmoke {

namespace F = torch::nn::functional;

namespace {

double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

int64_t uniform_index(std::mt19937_64& rng, int64_t n) {
    return std::min(n - 1, static_cast<int64_t>(uniform01(rng) * static_cast<double>(n)));
}

double jitter(std::mt19937_64& rng, double range) {
    return 1.0 - range + 2.0 * range * uniform01(rng);
}

torch::Tensor luma(const torch::Tensor& rgb) {
    return 0.299 * rgb.select(-3, 0) + 0.587 * rgb.select(-3, 1) + 0.114 * rgb.select(-3, 2);
}

torch::Tensor apply_jitter(const torch::Tensor& x, double b, double c, double s) {
    auto y = (x * b).clamp(0.0, 1.0);
    auto mean = luma(y).mean({-2, -1}, true).unsqueeze(-3);
    y = ((y - mean) * c + mean).clamp(0.0, 1.0);
    auto gray = luma(y).unsqueeze(-3);
    return ((y - gray) * s + gray).clamp(0.0, 1.0);
}

Batch to_device(const Batch& b, torch::Device device) {
    return {b.smoky.to(device), {b.targets.diff.to(device), b.targets.amb.to(device), b.targets.clean.to(device)}};
}

std::vector<int64_t> window_starts(int64_t n, int64_t window) {
    std::vector<int64_t> starts;
    if (n <= window) {
        return {0};
    }
    for (int64_t s = 0; s + window <= n; s += window) {
        starts.push_back(s);
    }
    if (starts.back() + window < n) {
        starts.push_back(n - window);
    }
    return starts;
}

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<ClipTensors> load_dataset(const fs::path& root) {
    auto dirs = synth::list_clip_dirs(root);
    if (dirs.empty() && fs::exists(root / "meta.json")) {
        dirs.push_back(root);
    }
    if (dirs.empty()) {
        throw DataError("no clip_* directories under " + root.string());
    }
    std::vector<ClipTensors> data;
    for (const auto& dir : dirs) {
        const auto clip = synth::read_clip(dir);
        ClipTensors c;
        c.name = dir.filename().string();
        c.smoky = io::frames_to_tensor(clip.smoky);
        c.clean = io::frames_to_tensor(clip.clean);
        c.diff = io::masks_to_tensor(clip.masks.diff);
        c.amb = io::masks_to_tensor(clip.masks.amb);
        if (c.smoky.sizes() != c.clean.sizes() || c.diff.size(1) != c.smoky.size(2) ||
            c.diff.size(2) != c.smoky.size(3) || c.amb.sizes() != c.diff.sizes()) {
            throw DataError("clip " + c.name + ": frame and mask sizes differ");
        }
        data.push_back(std::move(c));
    }
    return data;
}

torch::Tensor pool_masks(const torch::Tensor& masks, int64_t factor) {
    const auto h = masks.size(-2), w = masks.size(-1);
    auto flat = masks.reshape({-1, 1, h, w});
    auto pooled = F::avg_pool2d(flat, F::AvgPool2dFuncOptions(factor).ceil_mode(true));
    auto sizes = masks.sizes().vec();
    sizes[sizes.size() - 2] = pooled.size(2);
    sizes[sizes.size() - 1] = pooled.size(3);
    return pooled.view(sizes);
}

std::pair<torch::Tensor, torch::Tensor> photometric_distort(const torch::Tensor& smoky, const torch::Tensor& clean,
                                                            const PhotometricConfig& cfg, std::mt19937_64& rng) {
    const double b = jitter(rng, cfg.brightness);
    const double c = jitter(rng, cfg.contrast);
    const double s = jitter(rng, cfg.saturation);
    if (!cfg.enabled) {
        return {smoky, clean};
    }
    return {apply_jitter(smoky, b, c, s), apply_jitter(clean, b, c, s)};
}

Batch sample_batch(const std::vector<ClipTensors>& data, const TrainConfig& cfg, std::mt19937_64& rng) {
    const int64_t t = cfg.model.frame_window, crop = cfg.crop_size;
    std::vector<torch::Tensor> smoky, clean, diff, amb;
    for (int64_t i = 0; i < cfg.batch_size; ++i) {
        const auto& clip = data[static_cast<size_t>(uniform_index(rng, static_cast<int64_t>(data.size())))];
        const auto n = clip.smoky.size(0), h = clip.smoky.size(2), w = clip.smoky.size(3);
        if (n < t || h < crop || w < crop) {
            throw DataError("clip " + clip.name + ": smaller than the training window or crop");
        }
        const auto s = uniform_index(rng, n - t + 1);
        const auto y = uniform_index(rng, h - crop + 1);
        const auto x = uniform_index(rng, w - crop + 1);
        auto cut = [&](const torch::Tensor& v) { return v.narrow(0, s, t).narrow(-2, y, crop).narrow(-1, x, crop); };
        auto [sm, cl] = photometric_distort(cut(clip.smoky), cut(clip.clean), cfg.photometric, rng);
        smoky.push_back(sm);
        clean.push_back(cl);
        diff.push_back(pool_masks(cut(clip.diff), 4));
        amb.push_back(pool_masks(cut(clip.amb), 4));
    }
    return {torch::stack(smoky), {torch::stack(diff), torch::stack(amb), torch::stack(clean)}};
}

std::vector<Batch> evaluation_batches(const std::vector<ClipTensors>& data, int64_t frame_window) {
    std::vector<Batch> out;
    for (const auto& clip : data) {
        if (clip.smoky.size(2) % 32 != 0 || clip.smoky.size(3) % 32 != 0) {
            throw DataError("clip " + clip.name + ": evaluation needs frame sizes divisible by 32");
        }
        const auto n = clip.smoky.size(0);
        const auto len = std::min(n, frame_window);
        for (const auto s : window_starts(n, frame_window)) {
            auto cut = [&](const torch::Tensor& v) { return v.narrow(0, s, len).unsqueeze(0); };
            out.push_back({cut(clip.smoky), {pool_masks(cut(clip.diff), 4), pool_masks(cut(clip.amb), 4), cut(clip.clean)}});
        }
    }
    return out;
}

double poly_lr(double base_lr, int64_t iter, int64_t total, double power) {
    if (total <= 0 || iter >= total) {
        return 0.0;
    }
    return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(total), power);
}

LossBreakdown model_losses(DesmokeNet& model, const Batch& batch, const LossConfig& cfg) {
    auto out = model->forward(batch.smoky);
    const FineMasks fine{out.masks.diff_logits, out.masks.amb_logits, out.masks.diff, out.masks.amb};
    return compute_losses(out.local, fine, out.restored, batch.targets, cfg);
}

double mean_loss(DesmokeNet& model, const std::vector<Batch>& batches, const LossConfig& cfg) {
    torch::NoGradGuard no_grad;
    const auto device = model->parameters().front().device();
    double sum = 0.0;
    for (const auto& b : batches) {
        sum += model_losses(model, to_device(b, device), cfg).total.item<double>();
    }
    return batches.empty() ? 0.0 : sum / static_cast<double>(batches.size());
}

TrainResult train(const TrainConfig& cfg, const fs::path& data_dir, const fs::path& out,
                  const std::function<void(const TrainStep&)>& on_step, torch::Device device) {
    cfg.validate();
    const auto data = load_dataset(data_dir);
    torch::manual_seed(cfg.seed);
    TrainResult result;
    result.model = DesmokeNet(cfg.model);
    auto& model = result.model;
    model->to(device);
    model->train();

    fs::create_directories(out);
    {
        std::ofstream cfg_out(out / "config.json");
        cfg_out << nlohmann::json(cfg).dump(2) << "\n";
    }
    std::ofstream log(out / "train_log.csv");
    if (!log) {
        throw IoError("cannot write " + (out / "train_log.csv").string());
    }
    log << "iter,lr";
    for (const auto& [name, _] : LossBreakdown{}.items()) {
        log << "," << name;
    }
    log << "\n" << std::setprecision(9);

    torch::optim::AdamW opt(model->parameters(),
                            torch::optim::AdamWOptions(cfg.lr).weight_decay(cfg.weight_decay));
    std::mt19937_64 rng(cfg.seed);
    for (int64_t it = 0; it < cfg.total_iters; ++it) {
        const double lr = poly_lr(cfg.lr, it, cfg.total_iters, cfg.poly_power);
        for (auto& group : opt.param_groups()) {
            static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
        }
        const auto batch = to_device(sample_batch(data, cfg, rng), device);
        opt.zero_grad();
        auto losses = model_losses(model, batch, cfg.loss);
        losses.total.backward();
        torch::nn::utils::clip_grad_norm_(model->parameters(), cfg.grad_clip);
        opt.step();

        TrainStep step{it, lr, losses};
        log << it << "," << lr;
        for (const auto& [_, v] : losses.items()) {
            log << "," << v;
        }
        log << "\n";
        result.total_losses.push_back(losses.total.item<double>());
        if (on_step) {
            on_step(step);
        }
        if (cfg.checkpoint_interval > 0 && (it + 1) % cfg.checkpoint_interval == 0) {
            save_checkpoint(model, out / ("ckpt_" + std::to_string(it + 1) + ".pt"));
        }
    }
    log.flush();
    result.final_checkpoint = out / "final.pt";
    save_checkpoint(model, result.final_checkpoint);
    return result;
}

nlohmann::json infer_clip(DesmokeNet& model, const std::vector<cv::Mat>& frames, const fs::path& out,
                          torch::Device device) {
    if (frames.empty()) {
        throw DataError("no input frames for " + out.string());
    }
    torch::NoGradGuard no_grad;
    model->eval();
    model->reconstruction()->reset_counters();
    const auto input = io::frames_to_tensor(frames);
    const auto n = input.size(0), h = input.size(2), w = input.size(3);
    const auto window = std::min(n, model->config().frame_window);

    const auto starts = window_starts(n, window);
    const auto t_all = std::chrono::steady_clock::now();

    // Branch activation is decided once per clip from the mean density of
    // the fine masks over every frame.
    double diff_sum = 0.0, amb_sum = 0.0;
    int64_t counted = 0;
    for (const auto s : starts) {
        auto o = model->predict_masks(input.narrow(0, s, window).unsqueeze(0).to(device));
        const auto skip = counted - s;
        const auto keep = window - skip;
        diff_sum += o.masks.diff[0].narrow(0, skip, keep).sum().item<double>() / static_cast<double>(o.masks.diff[0][0].numel());
        amb_sum += o.masks.amb[0].narrow(0, skip, keep).sum().item<double>() / static_cast<double>(o.masks.amb[0][0].numel());
        counted += keep;
    }
    const double diff_density = diff_sum / static_cast<double>(n), amb_density = amb_sum / static_cast<double>(n);
    const double threshold = model->config().reconstruction.activation_threshold;
    const BranchActivation clip_flags{{diff_density >= threshold}, {amb_density >= threshold}};

    auto restored = torch::empty_like(input);
    auto diff = torch::empty({n, h, w});
    auto amb = torch::empty({n, h, w});
    auto windows = nlohmann::json::array();
    int64_t written = 0;
    for (const auto s : starts) {
        const auto t0 = std::chrono::steady_clock::now();
        auto x = input.narrow(0, s, window).unsqueeze(0).to(device);
        auto o = model->forward(x, nullptr, &clip_flags);
        auto upsample = [&](const torch::Tensor& m) {
            auto up = F::interpolate(m[0].unsqueeze(1), F::InterpolateFuncOptions()
                                                            .scale_factor(std::vector<double>{4.0, 4.0})
                                                            .mode(torch::kBilinear)
                                                            .align_corners(false));
            return up.squeeze(1).narrow(1, 0, h).narrow(2, 0, w).to(torch::kCPU);
        };
        const auto skip = written - s;
        const auto keep = window - skip;
        restored.narrow(0, written, keep).copy_(o.restored[0].to(torch::kCPU).narrow(0, skip, keep));
        diff.narrow(0, written, keep).copy_(upsample(o.masks.diff).narrow(0, skip, keep));
        amb.narrow(0, written, keep).copy_(upsample(o.masks.amb).narrow(0, skip, keep));
        written += keep;
        windows.push_back({{"start", s},
                           {"frames", window},
                           {"diff_active", static_cast<bool>(o.activation.diff.at(0))},
                           {"amb_active", static_cast<bool>(o.activation.amb.at(0))},
                           {"ms", ms_since(t0)}});
    }
    io::write_rgb_sequence(out / "desmoked", io::tensor_to_frames(restored));
    io::write_gray_sequence(out / "mask_diff", io::tensor_to_masks(diff));
    io::write_gray_sequence(out / "mask_amb", io::tensor_to_masks(amb));

    nlohmann::json record = {{"frames", n},
                             {"frame_window", window},
                             {"threshold", threshold},
                             {"diff_density", diff_density},
                             {"amb_density", amb_density},
                             {"diff_active", static_cast<bool>(clip_flags.diff[0])},
                             {"amb_active", static_cast<bool>(clip_flags.amb[0])},
                             {"windows", windows},
                             {"diff_calls", model->reconstruction()->diff_calls()},
                             {"amb_calls", model->reconstruction()->amb_calls()},
                             {"total_ms", ms_since(t_all)}};
    std::ofstream f(out / "activation.json");
    if (!f) {
        throw IoError("cannot write " + (out / "activation.json").string());
    }
    f << record.dump(2) << "\n";
    return record;
}

nlohmann::json infer(DesmokeNet& model, const fs::path& in, const fs::path& out, const InferOptions& opts,
                     torch::Device device) {
    if (!fs::is_directory(in)) {
        throw IoError("input directory does not exist: " + in.string());
    }
    auto frames_of = [&](const fs::path& dir) {
        return fs::is_directory(dir / opts.input_subdir) ? io::read_rgb_sequence(dir / opts.input_subdir)
                                                         : io::read_rgb_sequence(dir);
    };
    const auto clips = synth::list_clip_dirs(in);
    if (clips.empty()) {
        return infer_clip(model, frames_of(in), out, device);
    }
    nlohmann::json all = nlohmann::json::object();
    for (const auto& clip : clips) {
        const auto name = clip.filename().string();
        all[name] = infer_clip(model, frames_of(clip), out / name, device);
    }
    return {{"clips", all}};
}

}  // namespace desmoke
