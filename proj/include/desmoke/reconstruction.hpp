#pragma once

#include <optional>
#include <vector>

#include <torch/torch.h>

#include "desmoke/config.hpp"
#include "desmoke/feature_perception.hpp"

namespace desmoke {

inline constexpr int64_t kOffsetChannels = 18;  // (dx, dy) for each 3x3 tap

/// Stacks each frame's mask with its neighbours: (B, T, h, w) -> (B, T, W, h, w).
/// Channel j of frame t holds frame clamp(t - W/2 + j, 0, T-1).
torch::Tensor temporal_composite(const torch::Tensor& masks, int64_t window);

/// Normalized x/y coordinate planes in [-1, 1], (N, 2, H, W).
torch::Tensor coord_channels(int64_t n, int64_t h, int64_t w, const torch::TensorOptions& opts);

/// 3x3 deformable convolution (stride 1, padding 1). `offset` is
/// (N, 18, H, W) with channels (2k, 2k+1) = (dx, dy) of tap k in row-major
/// kernel order. Taps are sampled bilinearly; outside the map reads zero.
torch::Tensor deform_conv2d(const torch::Tensor& input, const torch::Tensor& offset, const torch::Tensor& weight,
                            const torch::Tensor& bias = {});

/// sum_k gates[:, k] * conv3x3(input, weights[k], dilation = rates[k]).
torch::Tensor gated_dilated_conv(const torch::Tensor& input, const torch::Tensor& gates,
                                 const std::vector<torch::Tensor>& weights, const std::vector<torch::Tensor>& biases,
                                 const std::vector<int64_t>& rates);

/// CoordConv -> squeeze-excitation channel attention -> 1x1 projection to 18 offsets.
class OffsetPredictorImpl : public torch::nn::Module {
public:
    OffsetPredictorImpl(int64_t window, int64_t hidden);
    torch::Tensor forward(const torch::Tensor& composite);  // (N, W, h, w) -> (N, 18, h, w)

private:
    torch::nn::Conv2d coord_conv_{nullptr};
    torch::nn::Linear squeeze_{nullptr}, excite_{nullptr};
    torch::nn::Conv2d project_{nullptr};
};
TORCH_MODULE(OffsetPredictor);

class DiffusionBranchImpl : public torch::nn::Module {
public:
    DiffusionBranchImpl(int64_t in_channels, int64_t out_channels, int64_t window, int64_t hidden);

    /// features (N, C, h, w), composite (N, W, h, w) -> (N, out, h, w)
    torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& composite);

    torch::Tensor offsets(const torch::Tensor& composite) { return offsets_(composite); }
    const torch::Tensor& weight() const { return weight_; }
    const torch::Tensor& bias() const { return bias_; }

private:
    OffsetPredictor offsets_{nullptr};
    torch::Tensor weight_, bias_;
};
TORCH_MODULE(DiffusionBranch);

class AmbientBranchImpl : public torch::nn::Module {
public:
    AmbientBranchImpl(int64_t in_channels, int64_t out_channels, int64_t window, int64_t hidden,
                      std::vector<int64_t> rates);

    torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& composite);

    /// Per-pixel softmax over the K dilation rates, (N, K, h, w).
    torch::Tensor gates(const torch::Tensor& composite);
    const std::vector<torch::Tensor>& weights() const { return weights_; }
    const std::vector<torch::Tensor>& biases() const { return biases_; }
    const std::vector<int64_t>& rates() const { return rates_; }

private:
    std::vector<int64_t> rates_;
    torch::nn::Sequential gate_net_{nullptr};
    std::vector<torch::Tensor> weights_, biases_;
};
TORCH_MODULE(AmbientBranch);

/// Which branches ran for each window of the batch.
struct BranchActivation {
    std::vector<bool> diff;
    std::vector<bool> amb;
};

/// U-Net style decoder: stride 8 -> 4 (fuse f4 and branch features) -> 2 -> 1
/// (fuse input frame), predicting an RGB residual.
class DecoderImpl : public torch::nn::Module {
public:
    DecoderImpl(int64_t c_s8, int64_t c_s4, int64_t branch_channels, int64_t channels);

    /// All tensors frame-flattened: f3 (N, c8, h/2, w/2), f4 (N, c4, h, w),
    /// branch features (N, bc, h, w), frames (N, 3, H, W). Returns (N, 3, H, W).
    torch::Tensor forward(const torch::Tensor& f3, const torch::Tensor& f4, const torch::Tensor& f_diff,
                          const torch::Tensor& f_amb, const torch::Tensor& frames);

private:
    torch::nn::Conv2d in_{nullptr}, fuse1_{nullptr}, fuse2_{nullptr}, up2_{nullptr}, out1_{nullptr}, out2_{nullptr};
};
TORCH_MODULE(Decoder);

struct ReconstructionOutput {
    torch::Tensor restored;  // (B, T, 3, H, W) in [0,1]
    BranchActivation activation;
};

class ReconstructionImpl : public torch::nn::Module {
public:
    ReconstructionImpl(const ReconstructionConfig& cfg, const std::array<int64_t, 4>& channels);

    /// frames (B,T,3,H,W) in [0,1] at padded size; masks (B,T,h4,w4). Branch
    /// flags come from `forced` when given, otherwise from active() per window.
    ReconstructionOutput forward(const torch::Tensor& frames, const FeaturePyramid& pyr, const torch::Tensor& diff_masks,
                                 const torch::Tensor& amb_masks, const BranchActivation* forced = nullptr);

    /// Branch features for all frames, (B, T, bc, h4, w4).
    torch::Tensor diffusion_features(const FeaturePyramid& pyr, const torch::Tensor& diff_masks);
    torch::Tensor ambient_features(const FeaturePyramid& pyr, const torch::Tensor& amb_masks);

    /// Decodes with explicit branch features; an undefined tensor means the branch is off.
    torch::Tensor decode(const torch::Tensor& frames, const FeaturePyramid& pyr, const torch::Tensor& f_diff,
                         const torch::Tensor& f_amb);

    /// Per-window activation: mean mask density >= threshold.
    std::vector<bool> active(const torch::Tensor& masks) const;

    int64_t diff_calls() const { return diff_calls_; }
    int64_t amb_calls() const { return amb_calls_; }
    void reset_counters() { diff_calls_ = amb_calls_ = 0; }

    DiffusionBranch& diffusion() { return diffusion_; }
    AmbientBranch& ambient() { return ambient_; }

private:
    ReconstructionConfig cfg_;
    DiffusionBranch diffusion_{nullptr};
    AmbientBranch ambient_{nullptr};
    Decoder decoder_{nullptr};
    int64_t diff_calls_ = 0;
    int64_t amb_calls_ = 0;
};
TORCH_MODULE(Reconstruction);

}  // namespace desmoke
