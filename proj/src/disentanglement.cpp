#include "desmoke/disentanglement.hpp"

#include <cmath>

namespace desmoke {

namespace F = torch::nn::functional;

namespace {

constexpr double kLogitMargin = 1e-4;

/// Zero-pads (..., h, w) on the bottom/right up to multiples of `patch`.
torch::Tensor pad_to_patch(const torch::Tensor& x, int64_t patch) {
    const auto h = x.size(-2), w = x.size(-1);
    const auto ph = (patch - h % patch) % patch, pw = (patch - w % patch) % patch;
    if (ph == 0 && pw == 0) return x;
    return F::pad(x, F::PadFuncOptions({0, pw, 0, ph}));
}

/// (B, T, Ph*Pw, patch*patch) logits -> (B, T, h, w), cropping padding.
torch::Tensor fold_patches(const torch::Tensor& tokens, int64_t b, int64_t t, int64_t h, int64_t w, int64_t patch,
                           int64_t channels) {
    const auto ph = (h + patch - 1) / patch, pw = (w + patch - 1) / patch;
    auto x = tokens.view({b, t, ph, pw, channels, patch, patch})
                 .permute({0, 1, 4, 2, 5, 3, 6})
                 .reshape({b, t, channels, ph * patch, pw * patch});
    return x.index({torch::indexing::Slice(), torch::indexing::Slice(), torch::indexing::Slice(),
                    torch::indexing::Slice(0, h), torch::indexing::Slice(0, w)});
}

}  // namespace

torch::Tensor safe_logit(const torch::Tensor& p) {
    return torch::logit(p * (1.0 - 2.0 * kLogitMargin) + kLogitMargin);
}

torch::Tensor residual_blend(const torch::Tensor& prev, const torch::Tensor& u) {
    auto step = torch::tanh(u);
    return prev + step * torch::where(u >= 0, 1.0 - prev, prev);
}

std::pair<RegionMasks, RegionFeatures> select_regions(const torch::Tensor& diff_star, const torch::Tensor& amb_star,
                                                      const torch::Tensor& f4, double tau) {
    TORCH_CHECK(diff_star.sizes() == amb_star.sizes(), "mask shapes differ: ", diff_star.sizes(), " vs ",
                amb_star.sizes());
    auto bd = diff_star.detach() >= tau;
    auto ba = amb_star.detach() >= tau;
    const auto dtype = diff_star.scalar_type();
    RegionMasks m{
        torch::logical_and(bd, torch::logical_not(ba)).to(dtype),
        torch::logical_and(ba, torch::logical_not(bd)).to(dtype),
        torch::logical_and(bd, ba).to(dtype),
    };
    RegionFeatures r;
    if (f4.defined()) {
        TORCH_CHECK(f4.dim() == 5 && f4.size(0) == diff_star.size(0) && f4.size(1) == diff_star.size(1) &&
                        f4.size(3) == diff_star.size(2) && f4.size(4) == diff_star.size(3),
                    "f4 ", f4.sizes(), " does not match mask ", diff_star.sizes());
        r.diff = f4 * m.diff.unsqueeze(2);
        r.amb = f4 * m.amb.unsqueeze(2);
        r.ent = f4 * m.ent.unsqueeze(2);
    }
    return {m, r};
}

CrossAttentionDisentangleImpl::CrossAttentionDisentangleImpl(int64_t channels, const DisentangleConfig& cfg)
    : cfg_(cfg) {
    const int64_t d = cfg.dim;
    patch_embed_ = register_module(
        "patch_embed", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, d, cfg.patch).stride(cfg.patch)));
    q_diff_ = register_module("q_diff", torch::nn::Linear(d, d));
    k_diff_ = register_module("k_diff", torch::nn::Linear(d, d));
    q_amb_ = register_module("q_amb", torch::nn::Linear(d, d));
    k_amb_ = register_module("k_amb", torch::nn::Linear(d, d));
    v_ent_ = register_module("v_ent", torch::nn::Linear(d, d));
    // FFN decodes straight into per-pixel logits of each patch.
    ffn_ = register_module("ffn", nn::Mlp(d, cfg.ffn, cfg.patch * cfg.patch, 2));
}

torch::Tensor CrossAttentionDisentangleImpl::embed(const torch::Tensor& region) {
    const auto b = region.size(0);
    auto e = patch_embed_(pad_to_patch(region.flatten(0, 1), cfg_.patch));  // (B*T, d, Ph, Pw)
    return e.flatten(2).transpose(1, 2).reshape({b, -1, cfg_.dim});
}

torch::Tensor CrossAttentionDisentangleImpl::to_mask(const torch::Tensor& tokens, int64_t b, int64_t t, int64_t h,
                                                     int64_t w) {
    auto logits = ffn_(tokens);  // (B, T*P, patch^2)
    return fold_patches(logits.view({b, t, -1, cfg_.patch * cfg_.patch}), b, t, h, w, cfg_.patch, 1).squeeze(2);
}

std::pair<torch::Tensor, torch::Tensor> CrossAttentionDisentangleImpl::forward(const RegionFeatures& regions,
                                                                              const RegionMasks& masks,
                                                                              const GlobalMasks& coarse,
                                                                              nn::AttentionProbe* probe) {
    auto diff_prime = coarse.diff * masks.diff;
    auto amb_prime = coarse.amb * masks.amb;
    if (masks.ent.sum().item<double>() == 0.0) {
        return {diff_prime, amb_prime};
    }
    ++attention_calls_;
    const auto b = regions.ent.size(0), t = regions.ent.size(1), h = regions.ent.size(3), w = regions.ent.size(4);
    auto e_diff = embed(regions.diff);
    auto e_amb = embed(regions.amb);
    auto v = v_ent_(embed(regions.ent));
    auto a_diff = nn::scaled_dot_attention(q_diff_(e_diff), k_diff_(e_diff), v, std::nullopt, probe);
    auto a_amb = nn::scaled_dot_attention(q_amb_(e_amb), k_amb_(e_amb), v, std::nullopt, probe);
    diff_prime = diff_prime + masks.ent * torch::sigmoid(to_mask(a_diff, b, t, h, w));
    amb_prime = amb_prime + masks.ent * torch::sigmoid(to_mask(a_amb, b, t, h, w));
    return {diff_prime, amb_prime};
}

MaskRefinementImpl::MaskRefinementImpl(int64_t channels, const DisentangleConfig& cfg) : cfg_(cfg) {
    const int64_t d = cfg.dim;
    patch_embed_ = register_module(
        "patch_embed", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels + 2, d, cfg.patch).stride(cfg.patch)));
    attn_ = register_module("attn", torch::nn::ModuleList());
    ffn_ = register_module("ffn", torch::nn::ModuleList());
    norm1_ = register_module("norm1", torch::nn::ModuleList());
    norm2_ = register_module("norm2", torch::nn::ModuleList());
    for (int64_t i = 0; i < cfg.refine_iters; ++i) {
        attn_->push_back(nn::MultiHeadAttention(d, cfg.refine_heads));
        ffn_->push_back(nn::Mlp(d, cfg.ffn, d, 2));
        norm1_->push_back(torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
        norm2_->push_back(torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
    }
    head_ = register_module("head", torch::nn::Linear(d, 2 * cfg.patch * cfg.patch));
    torch::NoGradGuard no_grad;
    head_->weight.zero_();
    head_->bias.zero_();
}

std::pair<torch::Tensor, torch::Tensor> MaskRefinementImpl::forward(const torch::Tensor& diff_prime,
                                                                   const torch::Tensor& amb_prime,
                                                                   const torch::Tensor& f4,
                                                                   nn::AttentionProbe* probe) {
    const auto b = f4.size(0), t = f4.size(1), h = f4.size(3), w = f4.size(4);
    auto x = torch::cat({f4, diff_prime.unsqueeze(2), amb_prime.unsqueeze(2)}, 2).flatten(0, 1);
    auto e = patch_embed_(pad_to_patch(x, cfg_.patch));  // (B*T, d, Ph, Pw)
    const auto ph = e.size(2), pw = e.size(3);
    auto tokens = e.flatten(2).transpose(1, 2).reshape({b, t * ph * pw, cfg_.dim});
    tokens = tokens + nn::sine_position_2d(ph, pw, cfg_.dim, tokens.options()).repeat({t, 1}).unsqueeze(0);
    for (int64_t i = 0; i < cfg_.refine_iters; ++i) {
        const auto idx = static_cast<size_t>(i);
        auto attn = attn_[idx]->as<nn::MultiHeadAttention>();
        auto ffn = ffn_[idx]->as<nn::Mlp>();
        tokens = norm1_[idx]->as<torch::nn::LayerNorm>()->forward(tokens + attn->forward(tokens, tokens, tokens,
                                                                                         std::nullopt, probe));
        tokens = norm2_[idx]->as<torch::nn::LayerNorm>()->forward(tokens + ffn->forward(tokens));
    }
    auto u = fold_patches(head_(tokens).view({b, t, ph * pw, 2 * cfg_.patch * cfg_.patch}), b, t, h, w, cfg_.patch, 2);
    return {residual_blend(diff_prime, u.select(2, 0)), residual_blend(amb_prime, u.select(2, 1))};
}

DisentanglementImpl::DisentanglementImpl(int64_t channels, const DisentangleConfig& cfg) : cfg_(cfg) {
    cross_ = register_module("cross", CrossAttentionDisentangle(channels, cfg));
    refine_ = register_module("refine", MaskRefinement(channels, cfg));
}

DisentangledMasks DisentanglementImpl::forward(const GlobalMasks& coarse, const torch::Tensor& f4,
                                               RegionMasks* regions_out, nn::AttentionProbe* probe) {
    auto [masks, features] = select_regions(coarse.diff, coarse.amb, f4, cfg_.tau);
    DisentangledMasks out;
    std::tie(out.diff_prime, out.amb_prime) = cross_(features, masks, coarse, probe);
    std::tie(out.diff, out.amb) = refine_(out.diff_prime, out.amb_prime, f4, probe);
    out.diff_logits = safe_logit(out.diff);
    out.amb_logits = safe_logit(out.amb);
    if (regions_out) {
        *regions_out = masks;
    }
    return out;
}

}  // namespace desmoke
