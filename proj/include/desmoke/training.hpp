#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "desmoke/config.hpp"
#include "desmoke/losses.hpp"
#include "desmoke/model.hpp"

namespace desmoke {

namespace fs = std::filesystem;

/// One clip held in memory as tensors.
struct ClipTensors {
    std::string name;
    torch::Tensor smoky;  // (T, 3, H, W) in [0,1]
    torch::Tensor clean;
    torch::Tensor diff;  // (T, H, W) in [0,1]
    torch::Tensor amb;
};

/// Reads every clip_* directory under `root` (or `root` itself when it is a
/// clip). Throws DataError naming the offending clip.
std::vector<ClipTensors> load_dataset(const fs::path& root);

/// A training window batch: frames (B,T,3,H,W), masks pooled to stride 4.
struct Batch {
    torch::Tensor smoky;
    LossTargets targets;
};

/// Area-pools (..., H, W) masks by `factor`.
torch::Tensor pool_masks(const torch::Tensor& masks, int64_t factor);

/// Brightness, contrast and saturation jitter with one set of factors for the
/// whole window; returns {smoky, clean} both transformed.
std::pair<torch::Tensor, torch::Tensor> photometric_distort(const torch::Tensor& smoky, const torch::Tensor& clean,
                                                            const PhotometricConfig& cfg, std::mt19937_64& rng);

/// Random window, crop and photometric distortion per sample.
Batch sample_batch(const std::vector<ClipTensors>& data, const TrainConfig& cfg, std::mt19937_64& rng);

/// Every non-overlapping window of every clip at full size, without augmentation.
std::vector<Batch> evaluation_batches(const std::vector<ClipTensors>& data, int64_t frame_window);

/// lr * (1 - iter/total)^power; zero at and beyond `total`.
double poly_lr(double base_lr, int64_t iter, int64_t total, double power);

LossBreakdown model_losses(DesmokeNet& model, const Batch& batch, const LossConfig& cfg);

/// Mean L_total over `batches` without gradients.
double mean_loss(DesmokeNet& model, const std::vector<Batch>& batches, const LossConfig& cfg);

struct TrainStep {
    int64_t iter = 0;
    double lr = 0.0;
    LossBreakdown losses;
};

struct TrainResult {
    DesmokeNet model{nullptr};
    fs::path final_checkpoint;
    std::vector<double> total_losses;
};

/// Trains from scratch on the clips under `data`, writing train_log.csv,
/// config.json, ckpt_<iter>.pt every checkpoint_interval and final.pt into `out`.
TrainResult train(const TrainConfig& cfg, const fs::path& data, const fs::path& out,
                  const std::function<void(const TrainStep&)>& on_step = {},
                  torch::Device device = torch::kCPU);

struct InferOptions {
    /// Subdirectory holding the input frames when `in` is a clip directory.
    std::string input_subdir = "smoky";
};

/// Restores one clip's frames window by window. Writes desmoked/, mask_diff/,
/// mask_amb/ and activation.json under `out`; returns the activation record.
nlohmann::json infer_clip(DesmokeNet& model, const std::vector<cv::Mat>& frames, const fs::path& out,
                          torch::Device device = torch::kCPU);

/// `in` is a directory of frames, a clip directory or a root of clip_* directories.
nlohmann::json infer(DesmokeNet& model, const fs::path& in, const fs::path& out, const InferOptions& opts = {},
                     torch::Device device = torch::kCPU);

}  // namespace desmoke
