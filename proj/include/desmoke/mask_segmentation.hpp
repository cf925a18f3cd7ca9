#pragma once

#include <optional>

#include <torch/torch.h>

#include "desmoke/attention.hpp"
#include "desmoke/config.hpp"
#include "desmoke/feature_perception.hpp"

namespace desmoke {

/// Query classes. NoSmoke absorbs queries not matched to any smoke type.
enum class SmokeClass : int64_t { Diffusion = 0, Ambient = 1, NoSmoke = 2 };
inline constexpr int64_t kNumSmokeClasses = 3;

/// Per-query outputs for a batch of windows.
struct LocalPredictions {
    torch::Tensor mask_logits;  // (B, N, T, h4, w4)
    torch::Tensor masks;        // sigmoid(mask_logits)
    torch::Tensor type_logits;  // (B, N, 3)
    torch::Tensor type_probs;   // softmax(type_logits)
    torch::Tensor weights;      // (B, N), >= 0
};

/// Type-specific aggregated masks, (B, T, h4, w4) in [0,1].
struct GlobalMasks {
    torch::Tensor diff;
    torch::Tensor amb;
};

/// Attention-weighted aggregation of local masks into one mask per smoke type.
/// Each query belongs to argmax(type_probs); for a type with members S,
///   M_typ = sum_{i in S} w_i / sum_{j in S} w_j * m_i,
/// zero when S is empty and uniform over S when the weights sum to zero.
GlobalMasks aggregate_masks(const torch::Tensor& masks, const torch::Tensor& type_probs,
                            const torch::Tensor& weights);
GlobalMasks aggregate_masks(const LocalPredictions& local);

/// Masked cross-attention -> self-attention -> FFN, each with residual + LayerNorm.
class SegmentationBlockImpl : public torch::nn::Module {
public:
    SegmentationBlockImpl(int64_t dim, int64_t heads, int64_t ffn);

    torch::Tensor forward(const torch::Tensor& queries, const torch::Tensor& query_pos,
                          const torch::Tensor& memory, const torch::Tensor& memory_pos,
                          const std::optional<torch::Tensor>& allow, nn::AttentionProbe* probe);

private:
    nn::MultiHeadAttention cross_{nullptr}, self_{nullptr};
    torch::nn::Sequential ffn_{nullptr};
    torch::nn::LayerNorm norm_cross_{nullptr}, norm_self_{nullptr}, norm_ffn_{nullptr};
};
TORCH_MODULE(SegmentationBlock);

class MaskSegmentationImpl : public torch::nn::Module {
public:
    MaskSegmentationImpl(const SegmentationConfig& cfg, const std::array<int64_t, 4>& channels);

    /// Runs the cascaded blocks; block l attends to f_l (coarse -> fine),
    /// masked by the binarized mask predictions of the previous block.
    torch::Tensor run_blocks(const FeaturePyramid& pyr, nn::AttentionProbe* probe = nullptr);

    LocalPredictions predict_local(const torch::Tensor& query_states, const torch::Tensor& f4);

    /// Per-query mask logits (B, N, T, h4, w4) from the query states.
    torch::Tensor mask_logits(const torch::Tensor& query_states, const torch::Tensor& pixel_embedding);
    torch::Tensor pixel_embedding(const torch::Tensor& f4);

    std::pair<LocalPredictions, GlobalMasks> forward(const FeaturePyramid& pyr,
                                                     nn::AttentionProbe* probe = nullptr);

    int64_t num_queries() const { return cfg_.num_queries; }

private:
    SegmentationConfig cfg_;
    torch::nn::Embedding query_feat_{nullptr}, query_pos_{nullptr}, level_embed_{nullptr};
    torch::nn::ModuleList input_proj_{nullptr};
    torch::nn::ModuleList blocks_{nullptr};
    torch::nn::Sequential pixel_embed_{nullptr};
    torch::nn::LayerNorm decoder_norm_{nullptr};
    nn::Mlp mask_mlp_{nullptr}, type_mlp_{nullptr};
    torch::nn::Sequential weight_head_{nullptr};
};
TORCH_MODULE(MaskSegmentation);

}  // namespace desmoke
