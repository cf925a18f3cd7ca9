#pragma once

#include <array>
#include <memory>
#include <vector>

#include <torch/torch.h>

#include "desmoke/attention.hpp"
#include "desmoke/config.hpp"

namespace desmoke {

/// Four feature scales for a window of T frames, each (B, T, C_l, h_l, w_l).
/// levels[0] is f1 (stride 32, coarsest) ... levels[3] is f4 (stride 4).
struct FeaturePyramid {
    std::array<torch::Tensor, 4> levels;
    /// Reflect padding added to the input frames (bottom, right) before encoding.
    int64_t pad_h = 0;
    int64_t pad_w = 0;

    const torch::Tensor& f(int l) const { return levels.at(static_cast<size_t>(l - 1)); }
    int64_t frames() const { return levels[0].size(1); }
};

inline constexpr std::array<int64_t, 4> kPyramidStrides = {32, 16, 8, 4};

/// Interchangeable image encoder producing four scales (coarse -> fine) from
/// (N, 3, H, W) with H, W divisible by 32.
class Backbone : public torch::nn::Module {
public:
    virtual std::array<torch::Tensor, 4> encode(const torch::Tensor& images) = 0;
    virtual std::array<int64_t, 4> channels() const = 0;
};

/// ResNet-18 topology (two basic blocks per stage by default) with
/// configurable widths and GroupNorm.
class ResNetBackbone : public Backbone {
public:
    explicit ResNetBackbone(const PerceptionConfig& cfg);
    std::array<torch::Tensor, 4> encode(const torch::Tensor& images) override;
    std::array<int64_t, 4> channels() const override { return channels_; }

private:
    std::array<int64_t, 4> channels_{};
    torch::nn::Sequential stem_{nullptr};
    std::array<torch::nn::Sequential, 4> stages_{};  // stride 4, 8, 16, 32
};

std::shared_ptr<Backbone> make_backbone(const PerceptionConfig& cfg);

/// Temporal attention across frames at each location, followed by spatial
/// deformable attention within a local window. Both stages share the q/k/v
/// projection. Operates on one pyramid level (B, T, C, h, w).
class TrajectoryAttentionImpl : public torch::nn::Module {
public:
    TrajectoryAttentionImpl(int64_t channels, const PerceptionConfig& cfg);

    torch::Tensor forward(const torch::Tensor& x, nn::AttentionProbe* probe = nullptr);

    torch::Tensor temporal(const torch::Tensor& x, nn::AttentionProbe* probe = nullptr);
    torch::Tensor spatial(const torch::Tensor& x, nn::AttentionProbe* probe = nullptr);

    /// True when the window does not fit the map and dense attention is used.
    bool uses_full_attention(int64_t h, int64_t w) const { return window_ > h || window_ > w || h < 2 || w < 2; }

private:
    int64_t channels_, heads_, head_dim_, window_, points_;
    torch::nn::LayerNorm temporal_norm_{nullptr}, spatial_norm_{nullptr};
    torch::nn::Linear qkv_{nullptr};
    torch::nn::Linear temporal_out_{nullptr}, spatial_out_{nullptr};
    torch::nn::Linear offsets_{nullptr};
};
TORCH_MODULE(TrajectoryAttention);

class FeaturePerceptionImpl : public torch::nn::Module {
public:
    explicit FeaturePerceptionImpl(const PerceptionConfig& cfg);

    /// frames (B, T, 3, H, W) normalized; reflect-pads H, W up to multiples of 32.
    FeaturePyramid encode(const torch::Tensor& frames);
    FeaturePyramid trajectory_attention(const FeaturePyramid& pyr, nn::AttentionProbe* probe = nullptr);
    FeaturePyramid forward(const torch::Tensor& frames, nn::AttentionProbe* probe = nullptr);

    std::array<int64_t, 4> channels() const { return backbone_->channels(); }
    TrajectoryAttention& attention(int level) { return attention_.at(static_cast<size_t>(level - 1)); }

private:
    std::shared_ptr<Backbone> backbone_;
    std::array<TrajectoryAttention, 4> attention_{nullptr, nullptr, nullptr, nullptr};
};
TORCH_MODULE(FeaturePerception);

}  // namespace desmoke
