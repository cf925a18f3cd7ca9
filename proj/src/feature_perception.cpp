#include "desmoke/feature_perception.hpp"

#include <cmath>
#include <numbers>

#include "desmoke/error.hpp"

namespace desmoke {

namespace F = torch::nn::functional;

namespace {

int64_t norm_groups(int64_t channels) { return channels % 4 == 0 ? 4 : 1; }

class BasicBlockImpl : public torch::nn::Module {
public:
    BasicBlockImpl(int64_t in, int64_t out, int64_t stride) {
        conv1_ = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3)
                                                                .stride(stride)
                                                                .padding(1)
                                                                .bias(false)));
        norm1_ = register_module("norm1", torch::nn::GroupNorm(norm_groups(out), out));
        conv2_ = register_module("conv2",
                                 torch::nn::Conv2d(torch::nn::Conv2dOptions(out, out, 3).padding(1).bias(false)));
        norm2_ = register_module("norm2", torch::nn::GroupNorm(norm_groups(out), out));
        if (stride != 1 || in != out) {
            down_ = register_module(
                "down", torch::nn::Sequential(
                            torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).stride(stride).bias(false)),
                            torch::nn::GroupNorm(norm_groups(out), out)));
        }
    }

    torch::Tensor forward(const torch::Tensor& x) {
        auto y = torch::relu(norm1_(conv1_(x)));
        y = norm2_(conv2_(y));
        return torch::relu(y + (down_ ? down_->forward(x) : x));
    }

private:
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
    torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
    torch::nn::Sequential down_{nullptr};
};
TORCH_MODULE(BasicBlock);

torch::Tensor reference_grid(int64_t h, int64_t w, const torch::TensorOptions& opts) {
    auto ys = torch::arange(h, opts).view({h, 1}).expand({h, w});
    auto xs = torch::arange(w, opts).view({1, w}).expand({h, w});
    return torch::stack({xs, ys}, -1).reshape({h * w, 2});  // (hw, [x, y])
}

}  // namespace

ResNetBackbone::ResNetBackbone(const PerceptionConfig& cfg) {
    // widths are listed coarse -> fine; stages run fine -> coarse.
    const int64_t c_s4 = cfg.widths[3], c_s8 = cfg.widths[2], c_s16 = cfg.widths[1], c_s32 = cfg.widths[0];
    channels_ = {c_s32, c_s16, c_s8, c_s4};
    stem_ = register_module(
        "stem", torch::nn::Sequential(
                    torch::nn::Conv2d(torch::nn::Conv2dOptions(3, c_s4, 7).stride(2).padding(3).bias(false)),
                    torch::nn::GroupNorm(norm_groups(c_s4), c_s4), torch::nn::ReLU(),
                    torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(3).stride(2).padding(1))));
    const std::array<int64_t, 4> widths = {c_s4, c_s8, c_s16, c_s32};
    int64_t in = c_s4;
    for (size_t s = 0; s < 4; ++s) {
        torch::nn::Sequential stage;
        for (int64_t b = 0; b < cfg.blocks_per_stage; ++b) {
            const int64_t stride = (s > 0 && b == 0) ? 2 : 1;
            stage->push_back(BasicBlock(in, widths[s], stride));
            in = widths[s];
        }
        stages_[s] = register_module("layer" + std::to_string(s + 1), stage);
    }
}

std::array<torch::Tensor, 4> ResNetBackbone::encode(const torch::Tensor& images) {
    auto x = stem_->forward(images);
    std::array<torch::Tensor, 4> fine_to_coarse;
    for (size_t s = 0; s < 4; ++s) {
        x = stages_[s]->forward(x);
        fine_to_coarse[s] = x;
    }
    return {fine_to_coarse[3], fine_to_coarse[2], fine_to_coarse[1], fine_to_coarse[0]};
}

std::shared_ptr<Backbone> make_backbone(const PerceptionConfig& cfg) {
    if (cfg.backbone == "resnet18") {
        auto bb = std::make_shared<ResNetBackbone>(cfg);
        if (!cfg.pretrained.empty()) {
            torch::serialize::InputArchive archive;
            archive.load_from(cfg.pretrained);
            bb->load(archive);
        }
        return bb;
    }
    throw ConfigError("unknown backbone '" + cfg.backbone + "'");
}

TrajectoryAttentionImpl::TrajectoryAttentionImpl(int64_t channels, const PerceptionConfig& cfg)
    : channels_(channels),
      heads_(cfg.heads),
      head_dim_(cfg.head_dim),
      window_(cfg.window),
      points_(cfg.points) {
    const int64_t inner = heads_ * head_dim_;
    temporal_norm_ = register_module("temporal_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
    spatial_norm_ = register_module("spatial_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
    qkv_ = register_module("qkv", torch::nn::Linear(channels, 3 * inner));
    temporal_out_ = register_module("temporal_out", torch::nn::Linear(inner, channels));
    spatial_out_ = register_module("spatial_out", torch::nn::Linear(inner, channels));
    offsets_ = register_module("offsets", torch::nn::Linear(channels, heads_ * points_ * 2));

    // Sampling points start on a ring of radius 1.5 px around the query,
    // rotated per head; off-lattice so bilinear sampling is differentiable.
    torch::NoGradGuard no_grad;
    offsets_->weight.zero_();
    auto bias = torch::empty({heads_, points_, 2});
    const double half = window_ / 2.0;
    for (int64_t h = 0; h < heads_; ++h) {
        for (int64_t p = 0; p < points_; ++p) {
            const double a = 2.0 * std::numbers::pi * (static_cast<double>(p) / points_ +
                                                       static_cast<double>(h) / (heads_ * points_)) +
                             std::numbers::pi / 4.0;
            bias[h][p][0] = std::atanh(1.5 * std::cos(a) / half);
            bias[h][p][1] = std::atanh(1.5 * std::sin(a) / half);
        }
    }
    offsets_->bias.copy_(bias.reshape({-1}));
}

torch::Tensor TrajectoryAttentionImpl::temporal(const torch::Tensor& x, nn::AttentionProbe* probe) {
    const auto b = x.size(0), t = x.size(1), c = x.size(2), h = x.size(3), w = x.size(4);
    // (B*h*w, T, C): one temporal sequence per location.
    auto tokens = x.permute({0, 3, 4, 1, 2}).reshape({b * h * w, t, c});
    auto qkv = qkv_(temporal_norm_(tokens)).chunk(3, -1);
    auto q = nn::split_heads(qkv[0], heads_);
    auto k = nn::split_heads(qkv[1], heads_);
    auto v = nn::split_heads(qkv[2], heads_);
    auto attended = nn::merge_heads(nn::scaled_dot_attention(q, k, v, std::nullopt, probe));
    auto out = tokens + temporal_out_(attended);
    return out.reshape({b, h, w, t, c}).permute({0, 3, 4, 1, 2}).contiguous();
}

torch::Tensor TrajectoryAttentionImpl::spatial(const torch::Tensor& x, nn::AttentionProbe* probe) {
    const auto b = x.size(0), t = x.size(1), c = x.size(2), h = x.size(3), w = x.size(4);
    const auto n = b * t, hw = h * w;
    auto tokens = x.reshape({n, c, hw}).transpose(1, 2);  // (N, hw, C)
    auto normed = spatial_norm_(tokens);
    auto qkv = qkv_(normed).chunk(3, -1);
    auto q = nn::split_heads(qkv[0], heads_);  // (N, heads, hw, hd)
    auto k = nn::split_heads(qkv[1], heads_);
    auto v = nn::split_heads(qkv[2], heads_);

    torch::Tensor attended;
    if (uses_full_attention(h, w)) {
        attended = nn::scaled_dot_attention(q, k, v, std::nullopt, probe);
    } else {
        // Deformable sampling: each query samples `points_` locations within
        // +-window/2 of itself, per head.
        const double half = window_ / 2.0;
        auto offs = half * torch::tanh(offsets_(normed));  // (N, hw, heads*points*2)
        offs = offs.view({n, hw, heads_, points_, 2}).permute({0, 2, 1, 3, 4});  // (N, heads, hw, P, 2)
        auto pos = reference_grid(h, w, x.options()).view({1, 1, hw, 1, 2}) + offs;
        auto scale = torch::tensor({2.0 / (w - 1), 2.0 / (h - 1)}, x.options());
        auto grid = (pos * scale - 1.0).reshape({n * heads_, hw, points_, 2});

        auto as_image = [&](const torch::Tensor& t4) {  // (N, heads, hw, hd) -> (N*heads, hd, h, w)
            return t4.permute({0, 1, 3, 2}).reshape({n * heads_, head_dim_, h, w});
        };
        auto opts = F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kZeros).align_corners(true);
        auto ks = F::grid_sample(as_image(k), grid, opts);  // (N*heads, hd, hw, P)
        auto vs = F::grid_sample(as_image(v), grid, opts);
        auto qf = q.reshape({n * heads_, hw, head_dim_}).transpose(1, 2).unsqueeze(-1);  // (N*heads, hd, hw, 1)
        auto logits = (qf * ks).sum(1) / std::sqrt(static_cast<double>(head_dim_));    // (N*heads, hw, P)
        auto probs = torch::softmax(logits, -1);
        if (probe) {
            probe->record(probs);
        }
        auto out = (vs * probs.unsqueeze(1)).sum(-1);  // (N*heads, hd, hw)
        attended = out.view({n, heads_, head_dim_, hw}).permute({0, 1, 3, 2});  // (N, heads, hw, hd)
    }
    auto out = tokens + spatial_out_(nn::merge_heads(attended));
    return out.transpose(1, 2).reshape({b, t, c, h, w});
}

torch::Tensor TrajectoryAttentionImpl::forward(const torch::Tensor& x, nn::AttentionProbe* probe) {
    TORCH_CHECK(x.dim() == 5 && x.size(2) == channels_, "expected (B,T,", channels_, ",h,w), got ", x.sizes());
    return spatial(temporal(x, probe), probe);
}

FeaturePerceptionImpl::FeaturePerceptionImpl(const PerceptionConfig& cfg) {
    backbone_ = register_module("backbone", make_backbone(cfg));
    const auto ch = backbone_->channels();
    for (size_t l = 0; l < 4; ++l) {
        attention_[l] = register_module("attention" + std::to_string(l + 1), TrajectoryAttention(ch[l], cfg));
    }
}

FeaturePyramid FeaturePerceptionImpl::encode(const torch::Tensor& frames) {
    TORCH_CHECK(frames.dim() == 5 && frames.size(2) == 3, "expected (B,T,3,H,W), got ", frames.sizes());
    const auto b = frames.size(0), t = frames.size(1), h = frames.size(3), w = frames.size(4);
    if (t < 1) {
        throw ConfigError("encode needs at least one frame");
    }
    FeaturePyramid pyr;
    pyr.pad_h = (32 - h % 32) % 32;
    pyr.pad_w = (32 - w % 32) % 32;
    auto images = frames.reshape({b * t, 3, h, w});
    if (pyr.pad_h > 0 || pyr.pad_w > 0) {
        images = F::pad(images, F::PadFuncOptions({0, pyr.pad_w, 0, pyr.pad_h}).mode(torch::kReflect));
    }
    auto scales = backbone_->encode(images);
    for (size_t l = 0; l < 4; ++l) {
        const auto& s = scales[l];
        pyr.levels[l] = s.reshape({b, t, s.size(1), s.size(2), s.size(3)});
    }
    return pyr;
}

FeaturePyramid FeaturePerceptionImpl::trajectory_attention(const FeaturePyramid& pyr, nn::AttentionProbe* probe) {
    FeaturePyramid out = pyr;
    for (size_t l = 0; l < 4; ++l) {
        out.levels[l] = attention_[l](pyr.levels[l], probe);
    }
    return out;
}

FeaturePyramid FeaturePerceptionImpl::forward(const torch::Tensor& frames, nn::AttentionProbe* probe) {
    return trajectory_attention(encode(frames), probe);
}

}  // namespace desmoke
