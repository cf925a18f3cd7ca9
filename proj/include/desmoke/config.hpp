#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace desmoke {

/// Encoder + trajectory attention. `widths` are c1..c4 for strides 32, 16, 8, 4.
struct PerceptionConfig {
    std::string backbone = "resnet18";
    std::vector<int64_t> widths = {48, 32, 24, 16};
    int64_t blocks_per_stage = 2;
    int64_t heads = 2;
    int64_t head_dim = 32;
    int64_t window = 7;
    int64_t points = 4;
    /// Optional backbone weights (torch archive); empty = random init.
    std::string pretrained;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PerceptionConfig, backbone, widths, blocks_per_stage,
                                                heads, head_dim, window, points, pretrained)

struct SegmentationConfig {
    int64_t num_queries = 100;
    int64_t dim = 64;
    int64_t heads = 4;
    int64_t ffn = 128;
    int64_t blocks = 3;
    int64_t weight_hidden = 8;
    double mask_threshold = 0.5;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SegmentationConfig, num_queries, dim, heads, ffn, blocks,
                                                weight_hidden, mask_threshold)

struct DisentangleConfig {
    double tau = 0.5;
    int64_t patch = 4;
    int64_t dim = 64;
    int64_t ffn = 128;
    int64_t refine_iters = 2;
    int64_t refine_heads = 4;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DisentangleConfig, tau, patch, dim, ffn, refine_iters,
                                                refine_heads)

struct ReconstructionConfig {
    int64_t composite_window = 3;
    double activation_threshold = 0.01;
    int64_t branch_channels = 16;
    int64_t offset_hidden = 16;
    int64_t gate_hidden = 16;
    std::vector<int64_t> dilation_rates = {1, 2, 3};
    int64_t decoder_channels = 32;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ReconstructionConfig, composite_window,
                                                activation_threshold, branch_channels, offset_hidden,
                                                gate_hidden, dilation_rates, decoder_channels)

struct ModelConfig {
    int64_t frame_window = 3;
    PerceptionConfig perception;
    SegmentationConfig segmentation;
    DisentangleConfig disentangle;
    ReconstructionConfig reconstruction;

    /// Throws ConfigError on inconsistent sizes.
    void validate() const;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, frame_window, perception, segmentation,
                                                disentangle, reconstruction)

struct LossConfig {
    double lambda_g = 2.0;
    double wing_omega = 0.1;
    double wing_epsilon = 0.01;
    double lambda_cls = 2.0;
    double lambda_bce = 5.0;
    double lambda_dice = 5.0;
    double lambda_rec = 1.0;
    double no_object_weight = 0.1;
    /// A ground-truth smoke type is present in a window when its peak density exceeds this.
    double presence_threshold = 0.05;

    void validate() const;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossConfig, lambda_g, wing_omega, wing_epsilon, lambda_cls,
                                                lambda_bce, lambda_dice, lambda_rec, no_object_weight,
                                                presence_threshold)

struct PhotometricConfig {
    bool enabled = true;
    double brightness = 0.2;
    double contrast = 0.2;
    double saturation = 0.2;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PhotometricConfig, enabled, brightness, contrast, saturation)

struct TrainConfig {
    int64_t crop_size = 96;
    int64_t batch_size = 2;
    double lr = 1e-4;
    double weight_decay = 0.05;
    double grad_clip = 0.01;
    int64_t total_iters = 2000;
    double poly_power = 0.9;
    PhotometricConfig photometric;
    std::uint64_t seed = 0;
    int64_t checkpoint_interval = 500;
    int64_t log_interval = 10;
    ModelConfig model;
    LossConfig loss;

    void validate() const;

    /// Named presets: "desk" (defaults) and "full_scale" (720x1080 recipe).
    static TrainConfig profile(const std::string& name);
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, crop_size, batch_size, lr, weight_decay,
                                                grad_clip, total_iters, poly_power, photometric, seed,
                                                checkpoint_interval, log_interval, model, loss)

/// Parses a JSON config file; a top-level "profile" key selects the base preset
/// that the remaining keys override.
TrainConfig load_train_config(const std::string& path);

}  // namespace desmoke
