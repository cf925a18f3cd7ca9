#pragma once

#include <filesystem>
#include <string>

#include <torch/torch.h>

#include "desmoke/config.hpp"
#include "desmoke/disentanglement.hpp"
#include "desmoke/feature_perception.hpp"
#include "desmoke/mask_segmentation.hpp"
#include "desmoke/reconstruction.hpp"

namespace desmoke {

struct ModelOutput {
    FeaturePyramid pyramid;
    LocalPredictions local;
    GlobalMasks coarse;
    RegionMasks regions;
    DisentangledMasks masks;
    torch::Tensor restored;  // (B, T, 3, H, W) in [0,1], cropped to the input size
    BranchActivation activation;
};

/// Feature perception -> mask segmentation + disentanglement -> dual-branch reconstruction.
class DesmokeNetImpl : public torch::nn::Module {
public:
    explicit DesmokeNetImpl(const ModelConfig& cfg);

    /// frames (B, T, 3, H, W) with values in [0,1]. `activation`, when given,
    /// overrides the per-window branch flags.
    ModelOutput forward(const torch::Tensor& frames, nn::AttentionProbe* probe = nullptr,
                        const BranchActivation* activation = nullptr);

    /// Everything up to the fine masks; `restored` and `activation` stay empty.
    ModelOutput predict_masks(const torch::Tensor& frames, nn::AttentionProbe* probe = nullptr);

    const ModelConfig& config() const { return cfg_; }
    FeaturePerception& perception() { return perception_; }
    MaskSegmentation& segmentation() { return segmentation_; }
    Disentanglement& disentanglement() { return disentanglement_; }
    Reconstruction& reconstruction() { return reconstruction_; }

private:
    ModelConfig cfg_;
    FeaturePerception perception_{nullptr};
    MaskSegmentation segmentation_{nullptr};
    Disentanglement disentanglement_{nullptr};
    Reconstruction reconstruction_{nullptr};
};
TORCH_MODULE(DesmokeNet);

inline constexpr int64_t kCheckpointFormatVersion = 1;

/// Writes parameters, buffers, the format version and the model config.
void save_checkpoint(DesmokeNet& model, const std::filesystem::path& path);

/// Rebuilds the model from the stored config and loads its weights. Throws
/// VersionError on a format mismatch or when weights do not fit the config.
DesmokeNet load_checkpoint(const std::filesystem::path& path);

/// Selected by the DESMOKE_DEVICE environment variable ("cpu" or "cuda"); defaults to cpu.
torch::Device select_device();

}  // namespace desmoke
