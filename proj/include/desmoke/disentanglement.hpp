#pragma once

#include <utility>

#include <torch/torch.h>

#include "desmoke/attention.hpp"
#include "desmoke/config.hpp"
#include "desmoke/mask_segmentation.hpp"

namespace desmoke {

/// Mutually exclusive binary regions, float {0,1}, same shape as the input masks.
struct RegionMasks {
    torch::Tensor diff;  // diffusion only
    torch::Tensor amb;   // ambient only
    torch::Tensor ent;   // both
};

/// f4 restricted to each region, (B, T, C, h, w).
struct RegionFeatures {
    torch::Tensor diff;
    torch::Tensor amb;
    torch::Tensor ent;
};

struct DisentangledMasks {
    torch::Tensor diff_prime;  // coarse, after cross attention
    torch::Tensor amb_prime;
    torch::Tensor diff;  // fine, after refinement
    torch::Tensor amb;
    torch::Tensor diff_logits;  // safe_logit of the fine masks, for the loss
    torch::Tensor amb_logits;
};

/// Binarizes both masks at `tau` and splits their union into diffusion-only,
/// ambient-only and entangled regions; `f4` (B,T,C,h,w) is masked per region.
/// Masks are (B,T,h,w); `f4` may be undefined, in which case features are skipped.
std::pair<RegionMasks, RegionFeatures> select_regions(const torch::Tensor& diff_star, const torch::Tensor& amb_star,
                                                      const torch::Tensor& f4, double tau);

/// Smoke-type-aware cross attention. Queries and keys come from each type's
/// own region, values from the entangled region; the result is decoded to
/// patch logits, squashed by a sigmoid, kept only on entangled pixels and added
/// to the type's non-entangled coarse mask.
class CrossAttentionDisentangleImpl : public torch::nn::Module {
public:
    CrossAttentionDisentangleImpl(int64_t channels, const DisentangleConfig& cfg);

    std::pair<torch::Tensor, torch::Tensor> forward(const RegionFeatures& regions, const RegionMasks& masks,
                                                    const GlobalMasks& coarse, nn::AttentionProbe* probe = nullptr);

    /// Number of forward passes that actually ran the attention (no bypass).
    int64_t attention_calls() const { return attention_calls_; }

private:
    torch::Tensor embed(const torch::Tensor& region);  // (B,T,C,h,w) -> (B, T*P, dim)
    torch::Tensor to_mask(const torch::Tensor& tokens, int64_t b, int64_t t, int64_t h, int64_t w);

    DisentangleConfig cfg_;
    torch::nn::Conv2d patch_embed_{nullptr};
    torch::nn::Linear q_diff_{nullptr}, k_diff_{nullptr}, q_amb_{nullptr}, k_amb_{nullptr}, v_ent_{nullptr};
    nn::Mlp ffn_{nullptr};
    int64_t attention_calls_ = 0;
};
TORCH_MODULE(CrossAttentionDisentangle);

/// Self-attention refinement over patch tokens of [f4, M'_diff, M'_amb]. A
/// zero-initialized head drives a bounded residual on each mask, so the block
/// starts as the identity.
class MaskRefinementImpl : public torch::nn::Module {
public:
    MaskRefinementImpl(int64_t channels, const DisentangleConfig& cfg);

    /// Returns the fine masks {diff, amb} in [0,1].
    std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& diff_prime, const torch::Tensor& amb_prime,
                                                    const torch::Tensor& f4, nn::AttentionProbe* probe = nullptr);

private:
    DisentangleConfig cfg_;
    torch::nn::Conv2d patch_embed_{nullptr};
    torch::nn::ModuleList attn_{nullptr}, ffn_{nullptr}, norm1_{nullptr}, norm2_{nullptr};
    torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(MaskRefinement);

class DisentanglementImpl : public torch::nn::Module {
public:
    DisentanglementImpl(int64_t channels, const DisentangleConfig& cfg);

    DisentangledMasks forward(const GlobalMasks& coarse, const torch::Tensor& f4, RegionMasks* regions_out = nullptr,
                              nn::AttentionProbe* probe = nullptr);

    CrossAttentionDisentangle& cross() { return cross_; }
    MaskRefinement& refine() { return refine_; }

private:
    DisentangleConfig cfg_;
    CrossAttentionDisentangle cross_{nullptr};
    MaskRefinement refine_{nullptr};
};
TORCH_MODULE(Disentanglement);

/// Logit of p squeezed affinely into [1e-4, 1 - 1e-4]; finite with a
/// nonzero gradient everywhere on [0,1].
torch::Tensor safe_logit(const torch::Tensor& p);

/// prev + tanh(u) * (1 - prev) for u >= 0, prev + tanh(u) * prev otherwise.
/// Stays in [0,1] for prev in [0,1] and equals prev at u = 0.
torch::Tensor residual_blend(const torch::Tensor& prev, const torch::Tensor& u);

}  // namespace desmoke
