#include "desmoke/mask_segmentation.hpp"

namespace desmoke {

namespace F = torch::nn::functional;

GlobalMasks aggregate_masks(const torch::Tensor& masks, const torch::Tensor& type_probs,
                            const torch::Tensor& weights) {
    TORCH_CHECK(masks.dim() == 5, "masks must be (B,N,T,h,w)");
    TORCH_CHECK(type_probs.dim() == 3 && type_probs.size(2) == kNumSmokeClasses, "type_probs must be (B,N,3)");
    TORCH_CHECK(weights.dim() == 2, "weights must be (B,N)");
    const auto assigned = type_probs.argmax(-1);  // (B, N)

    auto aggregate = [&](SmokeClass cls) {
        auto member = (assigned == static_cast<int64_t>(cls)).to(masks.scalar_type());  // (B, N)
        auto w = weights * member;
        auto wsum = w.sum(1, /*keepdim=*/true);
        auto count = member.sum(1, /*keepdim=*/true);
        // Zero total weight with members present -> uniform over members.
        auto uniform = member / count.clamp_min(1.0);
        auto coeff = torch::where(wsum > 0, w / torch::where(wsum > 0, wsum, torch::ones_like(wsum)), uniform);
        return (coeff.view({coeff.size(0), coeff.size(1), 1, 1, 1}) * masks).sum(1);
    };
    return {aggregate(SmokeClass::Diffusion), aggregate(SmokeClass::Ambient)};
}

GlobalMasks aggregate_masks(const LocalPredictions& local) {
    return aggregate_masks(local.masks, local.type_probs, local.weights);
}

SegmentationBlockImpl::SegmentationBlockImpl(int64_t dim, int64_t heads, int64_t ffn) {
    cross_ = register_module("cross_attn", nn::MultiHeadAttention(dim, heads));
    self_ = register_module("self_attn", nn::MultiHeadAttention(dim, heads));
    ffn_ = register_module("ffn", torch::nn::Sequential(torch::nn::Linear(dim, ffn), torch::nn::ReLU(),
                                                        torch::nn::Linear(ffn, dim)));
    norm_cross_ = register_module("norm_cross", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    norm_self_ = register_module("norm_self", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    norm_ffn_ = register_module("norm_ffn", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
}

torch::Tensor SegmentationBlockImpl::forward(const torch::Tensor& queries, const torch::Tensor& query_pos,
                                             const torch::Tensor& memory, const torch::Tensor& memory_pos,
                                             const std::optional<torch::Tensor>& allow,
                                             nn::AttentionProbe* probe) {
    auto q = norm_cross_(queries + cross_(queries + query_pos, memory + memory_pos, memory, allow, probe));
    auto qp = q + query_pos;
    q = norm_self_(q + self_(qp, qp, q, std::nullopt, probe));
    return norm_ffn_(q + ffn_->forward(q));
}

MaskSegmentationImpl::MaskSegmentationImpl(const SegmentationConfig& cfg, const std::array<int64_t, 4>& channels)
    : cfg_(cfg) {
    const int64_t d = cfg.dim;
    query_feat_ = register_module("query_feat", torch::nn::Embedding(cfg.num_queries, d));
    query_pos_ = register_module("query_pos", torch::nn::Embedding(cfg.num_queries, d));
    level_embed_ = register_module("level_embed", torch::nn::Embedding(cfg.blocks, d));
    input_proj_ = register_module("input_proj", torch::nn::ModuleList());
    blocks_ = register_module("blocks", torch::nn::ModuleList());
    for (int64_t l = 0; l < cfg.blocks; ++l) {
        input_proj_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(channels[static_cast<size_t>(l)], d, 1)));
        blocks_->push_back(SegmentationBlock(d, cfg.heads, cfg.ffn));
    }
    pixel_embed_ = register_module(
        "pixel_embed", torch::nn::Sequential(torch::nn::Conv2d(torch::nn::Conv2dOptions(channels[3], d, 3).padding(1)),
                                             torch::nn::ReLU(), torch::nn::Conv2d(torch::nn::Conv2dOptions(d, d, 1))));
    decoder_norm_ = register_module("decoder_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
    mask_mlp_ = register_module("mask_mlp", nn::Mlp(d, d, d, 3));
    type_mlp_ = register_module("type_mlp", nn::Mlp(d, d, kNumSmokeClasses, 2));
    const int64_t wh = cfg.weight_hidden;
    weight_head_ = register_module(
        "weight_head",
        torch::nn::Sequential(torch::nn::Conv2d(torch::nn::Conv2dOptions(1, wh, 3).padding(1)), torch::nn::ReLU(),
                              torch::nn::Conv2d(torch::nn::Conv2dOptions(wh, 1, 3).padding(1))));
}

torch::Tensor MaskSegmentationImpl::pixel_embedding(const torch::Tensor& f4) {
    const auto b = f4.size(0), t = f4.size(1);
    auto e = pixel_embed_->forward(f4.flatten(0, 1));
    return e.view({b, t, e.size(1), e.size(2), e.size(3)});
}

torch::Tensor MaskSegmentationImpl::mask_logits(const torch::Tensor& query_states, const torch::Tensor& pixel) {
    auto embed = mask_mlp_(decoder_norm_(query_states));  // (B, N, d)
    return torch::einsum("bnd,btdhw->bnthw", {embed, pixel});
}

torch::Tensor MaskSegmentationImpl::run_blocks(const FeaturePyramid& pyr, nn::AttentionProbe* probe) {
    const auto& f4 = pyr.f(4);
    const auto b = f4.size(0), t = f4.size(1);
    const auto opts = f4.options();
    auto queries = query_feat_->weight.unsqueeze(0).expand({b, -1, -1});
    auto qpos = query_pos_->weight.unsqueeze(0).expand({b, -1, -1});
    torch::Tensor pixel;

    for (int64_t l = 0; l < cfg_.blocks; ++l) {
        const auto& feat = pyr.levels[static_cast<size_t>(l)];
        const auto h = feat.size(3), w = feat.size(4);
        auto mem = input_proj_[static_cast<size_t>(l)]->as<torch::nn::Conv2d>()->forward(feat.flatten(0, 1));
        mem = mem.view({b, t, cfg_.dim, h * w}).permute({0, 1, 3, 2}).reshape({b, t * h * w, cfg_.dim});
        auto pos = nn::sine_position_2d(h, w, cfg_.dim, opts).repeat({t, 1}).unsqueeze(0) +
                   level_embed_->weight[l].view({1, 1, cfg_.dim});

        std::optional<torch::Tensor> allow;
        if (l > 0) {
            if (!pixel.defined()) {
                pixel = pixel_embedding(f4);
            }
            torch::NoGradGuard no_grad;
            auto logits = mask_logits(queries, pixel);  // (B, N, T, h4, w4)
            auto n = logits.size(1);
            auto resized = F::interpolate(logits.flatten(0, 2).unsqueeze(1),
                                          F::InterpolateFuncOptions()
                                              .size(std::vector<int64_t>{h, w})
                                              .mode(torch::kBilinear)
                                              .align_corners(false));
            allow = (resized.sigmoid() >= cfg_.mask_threshold).view({b, n, t * h * w});
        }
        queries = blocks_[static_cast<size_t>(l)]->as<SegmentationBlock>()->forward(queries, qpos, mem, pos, allow,
                                                                                    probe);
    }
    return queries;
}

LocalPredictions MaskSegmentationImpl::predict_local(const torch::Tensor& query_states, const torch::Tensor& f4) {
    LocalPredictions out;
    out.mask_logits = mask_logits(query_states, pixel_embedding(f4));
    out.masks = torch::sigmoid(out.mask_logits);
    out.type_logits = type_mlp_(query_states);
    out.type_probs = torch::softmax(out.type_logits, -1);

    const auto b = out.masks.size(0), n = out.masks.size(1), t = out.masks.size(2);
    const auto h = out.masks.size(3), w = out.masks.size(4);
    auto score = weight_head_->forward(out.masks.reshape({b * n * t, 1, h, w}));
    out.weights = F::softplus(score.view({b, n, t * h * w}).mean(-1));
    return out;
}

std::pair<LocalPredictions, GlobalMasks> MaskSegmentationImpl::forward(const FeaturePyramid& pyr,
                                                                       nn::AttentionProbe* probe) {
    auto states = run_blocks(pyr, probe);
    auto local = predict_local(states, pyr.f(4));
    auto global = aggregate_masks(local);
    return {std::move(local), std::move(global)};
}

}  // namespace desmoke
