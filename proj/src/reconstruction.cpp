#include "desmoke/reconstruction.hpp"

namespace desmoke {

namespace F = torch::nn::functional;

namespace {

torch::Tensor upsample_to(const torch::Tensor& x, int64_t h, int64_t w) {
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{h, w})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

torch::nn::Conv2d conv3x3(int64_t in, int64_t out) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1));
}

torch::Tensor kaiming_weight(int64_t out, int64_t in) {
    auto w = torch::empty({out, in, 3, 3});
    torch::nn::init::kaiming_uniform_(w, std::sqrt(5.0));
    return w;
}

}  // namespace

torch::Tensor temporal_composite(const torch::Tensor& masks, int64_t window) {
    TORCH_CHECK(masks.dim() == 4, "masks must be (B,T,h,w)");
    TORCH_CHECK(window >= 1 && window % 2 == 1, "composite window must be odd");
    const int64_t t = masks.size(1), half = window / 2;
    std::vector<torch::Tensor> frames;
    for (int64_t i = 0; i < t; ++i) {
        std::vector<torch::Tensor> channels;
        for (int64_t j = -half; j <= half; ++j) {
            channels.push_back(masks.select(1, std::clamp<int64_t>(i + j, 0, t - 1)));
        }
        frames.push_back(torch::stack(channels, 1));
    }
    return torch::stack(frames, 1);
}

torch::Tensor coord_channels(int64_t n, int64_t h, int64_t w, const torch::TensorOptions& opts) {
    auto ys = h > 1 ? torch::linspace(-1.0, 1.0, h, opts) : torch::zeros({1}, opts);
    auto xs = w > 1 ? torch::linspace(-1.0, 1.0, w, opts) : torch::zeros({1}, opts);
    auto gx = xs.view({1, 1, 1, w}).expand({n, 1, h, w});
    auto gy = ys.view({1, 1, h, 1}).expand({n, 1, h, w});
    return torch::cat({gx, gy}, 1);
}

torch::Tensor deform_conv2d(const torch::Tensor& input, const torch::Tensor& offset, const torch::Tensor& weight,
                            const torch::Tensor& bias) {
    TORCH_CHECK(input.dim() == 4, "input must be (N,C,H,W)");
    TORCH_CHECK(offset.dim() == 4 && offset.size(1) == kOffsetChannels, "offset must be (N,18,H,W), got ",
                offset.sizes());
    TORCH_CHECK(weight.dim() == 4 && weight.size(2) == 3 && weight.size(3) == 3, "weight must be (O,C,3,3)");
    const auto n = input.size(0), c = input.size(1), h = input.size(2), w = input.size(3);
    const auto opts = input.options();

    auto ys = torch::arange(h, opts).view({1, h, 1});
    auto xs = torch::arange(w, opts).view({1, 1, w});
    auto off = offset.view({n, 9, 2, h, w});
    std::vector<torch::Tensor> grids;
    for (int64_t k = 0; k < 9; ++k) {
        const double ky = static_cast<double>(k / 3 - 1), kx = static_cast<double>(k % 3 - 1);
        auto px = xs + kx + off.select(1, k).select(1, 0);  // (N, H, W)
        auto py = ys + ky + off.select(1, k).select(1, 1);
        // Pixel centres under align_corners=false.
        auto gx = (2.0 * px + 1.0) / static_cast<double>(w) - 1.0;
        auto gy = (2.0 * py + 1.0) / static_cast<double>(h) - 1.0;
        grids.push_back(torch::stack({gx, gy}, -1));
    }
    auto grid = torch::cat(grids, 1);  // (N, 9H, W, 2)
    auto sampled = F::grid_sample(input, grid,
                                  F::GridSampleFuncOptions()
                                      .mode(torch::kBilinear)
                                      .padding_mode(torch::kZeros)
                                      .align_corners(false));  // (N, C, 9H, W)
    sampled = sampled.view({n, c, 9, h, w});
    auto out = torch::einsum("nckhw,ock->nohw", {sampled, weight.reshape({weight.size(0), c, 9})});
    if (bias.defined()) {
        out = out + bias.view({1, -1, 1, 1});
    }
    return out;
}

torch::Tensor gated_dilated_conv(const torch::Tensor& input, const torch::Tensor& gates,
                                 const std::vector<torch::Tensor>& weights, const std::vector<torch::Tensor>& biases,
                                 const std::vector<int64_t>& rates) {
    TORCH_CHECK(weights.size() == rates.size() && biases.size() == rates.size(), "one weight/bias per rate");
    TORCH_CHECK(gates.size(1) == static_cast<int64_t>(rates.size()), "gate count must equal rate count");
    torch::Tensor out;
    for (size_t k = 0; k < rates.size(); ++k) {
        auto y = F::conv2d(input, weights[k],
                           F::Conv2dFuncOptions().bias(biases[k]).padding(rates[k]).dilation(rates[k]));
        auto term = gates.narrow(1, static_cast<int64_t>(k), 1) * y;
        out = out.defined() ? out + term : term;
    }
    return out;
}

OffsetPredictorImpl::OffsetPredictorImpl(int64_t window, int64_t hidden) {
    const int64_t reduced = std::max<int64_t>(1, hidden / 4);
    coord_conv_ = register_module("coord_conv", conv3x3(window + 2, hidden));
    squeeze_ = register_module("squeeze", torch::nn::Linear(hidden, reduced));
    excite_ = register_module("excite", torch::nn::Linear(reduced, hidden));
    project_ = register_module("project", torch::nn::Conv2d(torch::nn::Conv2dOptions(hidden, kOffsetChannels, 1)));
    // Offsets start at zero: the branch begins as a plain 3x3 convolution.
    torch::NoGradGuard no_grad;
    project_->weight.zero_();
    project_->bias.zero_();
}

torch::Tensor OffsetPredictorImpl::forward(const torch::Tensor& composite) {
    const auto n = composite.size(0), h = composite.size(2), w = composite.size(3);
    auto x = torch::relu(coord_conv_(torch::cat({composite, coord_channels(n, h, w, composite.options())}, 1)));
    auto s = torch::sigmoid(excite_(torch::relu(squeeze_(x.mean({2, 3})))));
    return project_(x * s.view({n, -1, 1, 1}));
}

DiffusionBranchImpl::DiffusionBranchImpl(int64_t in_channels, int64_t out_channels, int64_t window, int64_t hidden) {
    offsets_ = register_module("offsets", OffsetPredictor(window, hidden));
    weight_ = register_parameter("weight", kaiming_weight(out_channels, in_channels));
    bias_ = register_parameter("bias", torch::zeros({out_channels}));
}

torch::Tensor DiffusionBranchImpl::forward(const torch::Tensor& features, const torch::Tensor& composite) {
    return deform_conv2d(features, offsets_(composite), weight_, bias_);
}

AmbientBranchImpl::AmbientBranchImpl(int64_t in_channels, int64_t out_channels, int64_t window, int64_t hidden,
                                     std::vector<int64_t> rates)
    : rates_(std::move(rates)) {
    const auto k = static_cast<int64_t>(rates_.size());
    gate_net_ = register_module("gate_net",
                                torch::nn::Sequential(conv3x3(window, hidden), torch::nn::ReLU(), conv3x3(hidden, k)));
    for (size_t i = 0; i < rates_.size(); ++i) {
        weights_.push_back(register_parameter("weight" + std::to_string(i), kaiming_weight(out_channels, in_channels)));
        biases_.push_back(register_parameter("bias" + std::to_string(i), torch::zeros({out_channels})));
    }
}

torch::Tensor AmbientBranchImpl::gates(const torch::Tensor& composite) {
    return torch::softmax(gate_net_->forward(composite), 1);
}

torch::Tensor AmbientBranchImpl::forward(const torch::Tensor& features, const torch::Tensor& composite) {
    return gated_dilated_conv(features, gates(composite), weights_, biases_, rates_);
}

DecoderImpl::DecoderImpl(int64_t c_s8, int64_t c_s4, int64_t branch_channels, int64_t channels) {
    const int64_t half = std::max<int64_t>(1, channels / 2);
    in_ = register_module("stem", conv3x3(c_s8, channels));
    fuse1_ = register_module("fuse1", conv3x3(channels + c_s4 + 2 * branch_channels, channels));
    fuse2_ = register_module("fuse2", conv3x3(channels, channels));
    up2_ = register_module("up2", conv3x3(channels, half));
    out1_ = register_module("out1", conv3x3(half + 3, half));
    out2_ = register_module("out2", conv3x3(half, 3));
    // Identity restoration at initialization.
    torch::NoGradGuard no_grad;
    out2_->weight.zero_();
    out2_->bias.zero_();
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& f3, const torch::Tensor& f4, const torch::Tensor& f_diff,
                                   const torch::Tensor& f_amb, const torch::Tensor& frames) {
    const auto h4 = f4.size(2), w4 = f4.size(3);
    const auto h = frames.size(2), w = frames.size(3);
    auto x = torch::relu(in_(f3));
    x = upsample_to(x, h4, w4);
    x = torch::relu(fuse1_(torch::cat({x, f4, f_diff, f_amb}, 1)));
    x = torch::relu(fuse2_(x));
    x = torch::relu(up2_(upsample_to(x, 2 * h4, 2 * w4)));
    x = upsample_to(x, h, w);
    x = torch::relu(out1_(torch::cat({x, frames}, 1)));
    return out2_(x);
}

ReconstructionImpl::ReconstructionImpl(const ReconstructionConfig& cfg, const std::array<int64_t, 4>& channels)
    : cfg_(cfg) {
    const int64_t c_s4 = channels[3], c_s8 = channels[2];
    diffusion_ = register_module(
        "diffusion", DiffusionBranch(c_s4, cfg.branch_channels, cfg.composite_window, cfg.offset_hidden));
    ambient_ = register_module("ambient", AmbientBranch(c_s4, cfg.branch_channels, cfg.composite_window,
                                                        cfg.gate_hidden, cfg.dilation_rates));
    decoder_ = register_module("decoder", Decoder(c_s8, c_s4, cfg.branch_channels, cfg.decoder_channels));
}

std::vector<bool> ReconstructionImpl::active(const torch::Tensor& masks) const {
    auto density = masks.detach().flatten(1).mean(1).to(torch::kCPU, torch::kFloat64);
    std::vector<bool> out;
    for (int64_t b = 0; b < density.size(0); ++b) {
        out.push_back(density[b].item<double>() >= cfg_.activation_threshold);
    }
    return out;
}

torch::Tensor ReconstructionImpl::diffusion_features(const FeaturePyramid& pyr, const torch::Tensor& diff_masks) {
    const auto& f4 = pyr.f(4);
    const auto b = f4.size(0), t = f4.size(1);
    auto composite = temporal_composite(diff_masks, cfg_.composite_window).flatten(0, 1);
    auto out = diffusion_(f4.flatten(0, 1), composite);
    return out.view({b, t, out.size(1), out.size(2), out.size(3)});
}

torch::Tensor ReconstructionImpl::ambient_features(const FeaturePyramid& pyr, const torch::Tensor& amb_masks) {
    const auto& f4 = pyr.f(4);
    const auto b = f4.size(0), t = f4.size(1);
    auto composite = temporal_composite(amb_masks, cfg_.composite_window).flatten(0, 1);
    auto out = ambient_(f4.flatten(0, 1), composite);
    return out.view({b, t, out.size(1), out.size(2), out.size(3)});
}

torch::Tensor ReconstructionImpl::decode(const torch::Tensor& frames, const FeaturePyramid& pyr,
                                         const torch::Tensor& f_diff, const torch::Tensor& f_amb) {
    const auto& f4 = pyr.f(4);
    const auto b = f4.size(0), t = f4.size(1);
    auto zeros = [&] {
        return torch::zeros({b * t, cfg_.branch_channels, f4.size(3), f4.size(4)}, f4.options());
    };
    auto fd = f_diff.defined() ? f_diff.flatten(0, 1) : zeros();
    auto fa = f_amb.defined() ? f_amb.flatten(0, 1) : zeros();
    auto flat_frames = frames.flatten(0, 1);
    auto residual = decoder_(pyr.f(3).flatten(0, 1), f4.flatten(0, 1), fd, fa, flat_frames);
    auto restored = (flat_frames + residual).clamp(0.0, 1.0);
    return restored.view(frames.sizes());
}

ReconstructionOutput ReconstructionImpl::forward(const torch::Tensor& frames, const FeaturePyramid& pyr,
                                                 const torch::Tensor& diff_masks, const torch::Tensor& amb_masks,
                                                 const BranchActivation* forced) {
    ReconstructionOutput out;
    const auto b = frames.size(0);
    if (forced) {
        TORCH_CHECK(static_cast<int64_t>(forced->diff.size()) == b && static_cast<int64_t>(forced->amb.size()) == b,
                    "forced activation needs one flag per window");
        out.activation = *forced;
    } else {
        out.activation.diff = active(diff_masks);
        out.activation.amb = active(amb_masks);
    }

    auto as_gate = [&](const std::vector<bool>& flags) {
        std::vector<float> v(flags.begin(), flags.end());
        return torch::tensor(v).to(frames.options()).view({b, 1, 1, 1, 1});
    };
    auto any = [](const std::vector<bool>& flags) { return std::find(flags.begin(), flags.end(), true) != flags.end(); };
    const bool any_diff = any(out.activation.diff);
    const bool any_amb = any(out.activation.amb);
    if (!any_diff && !any_amb) {
        out.restored = frames;
        return out;
    }

    torch::Tensor f_diff, f_amb;
    if (any_diff) {
        ++diff_calls_;
        f_diff = diffusion_features(pyr, diff_masks) * as_gate(out.activation.diff);
    }
    if (any_amb) {
        ++amb_calls_;
        f_amb = ambient_features(pyr, amb_masks) * as_gate(out.activation.amb);
    }
    auto decoded = decode(frames, pyr, f_diff, f_amb);

    std::vector<bool> passthrough(static_cast<size_t>(b));
    for (size_t i = 0; i < passthrough.size(); ++i) {
        passthrough[i] = !out.activation.diff[i] && !out.activation.amb[i];
    }
    out.restored = any(passthrough) ? torch::where(as_gate(passthrough) > 0, frames, decoded) : decoded;
    return out;
}

}  // namespace desmoke
