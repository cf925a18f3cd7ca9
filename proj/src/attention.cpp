#include "desmoke/attention.hpp"

#include <cmath>

namespace desmoke::nn {

double AttentionProbe::max_row_sum_error() const {
    double worst = 0.0;
    for (const auto& m : maps) {
        const double err = (m.to(torch::kFloat64).sum(-1) - 1.0).abs().max().item<double>();
        worst = std::max(worst, err);
    }
    return worst;
}

torch::Tensor scaled_dot_attention(const torch::Tensor& q, const torch::Tensor& k,
                                   const torch::Tensor& v, const std::optional<torch::Tensor>& allow,
                                   AttentionProbe* probe) {
    auto logits = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(q.size(-1)));
    if (allow) {
        auto a = allow->to(torch::kBool).expand_as(logits);
        // Degenerate rows (nothing allowed) fall back to full attention.
        a = torch::logical_or(a, torch::logical_not(a.any(-1, /*keepdim=*/true)));
        logits = logits.masked_fill(torch::logical_not(a), -std::numeric_limits<double>::infinity());
    }
    auto probs = torch::softmax(logits, -1);
    if (probe) {
        probe->record(probs);
    }
    return torch::matmul(probs, v);
}

torch::Tensor split_heads(const torch::Tensor& x, int64_t heads) {
    const auto b = x.size(0), l = x.size(1);
    return x.reshape({b, l, heads, x.size(2) / heads}).permute({0, 2, 1, 3});
}

torch::Tensor merge_heads(const torch::Tensor& x) {
    const auto b = x.size(0), l = x.size(2);
    return x.permute({0, 2, 1, 3}).reshape({b, l, x.size(1) * x.size(3)});
}

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int64_t dim, int64_t heads) : dim_(dim), heads_(heads) {
    TORCH_CHECK(dim % heads == 0, "attention dim ", dim, " not divisible by heads ", heads);
    q_proj_ = register_module("q_proj", torch::nn::Linear(dim, dim));
    k_proj_ = register_module("k_proj", torch::nn::Linear(dim, dim));
    v_proj_ = register_module("v_proj", torch::nn::Linear(dim, dim));
    out_proj_ = register_module("out_proj", torch::nn::Linear(dim, dim));
}

torch::Tensor MultiHeadAttentionImpl::forward(const torch::Tensor& query, const torch::Tensor& key,
                                              const torch::Tensor& value,
                                              const std::optional<torch::Tensor>& allow,
                                              AttentionProbe* probe) {
    auto q = split_heads(q_proj_(query), heads_);
    auto k = split_heads(k_proj_(key), heads_);
    auto v = split_heads(v_proj_(value), heads_);
    std::optional<torch::Tensor> a;
    if (allow) {
        a = allow->dim() == 3 ? allow->unsqueeze(1) : *allow;
    }
    return out_proj_(merge_heads(scaled_dot_attention(q, k, v, a, probe)));
}

MlpImpl::MlpImpl(int64_t in, int64_t hidden, int64_t out, int64_t layers) {
    TORCH_CHECK(layers >= 1, "Mlp needs at least one layer");
    for (int64_t i = 0; i < layers; ++i) {
        const int64_t a = i == 0 ? in : hidden;
        const int64_t b = i == layers - 1 ? out : hidden;
        layers_->push_back(torch::nn::Linear(a, b));
    }
    register_module("layers", layers_);
}

torch::Tensor MlpImpl::forward(torch::Tensor x) {
    const auto n = layers_->size();
    for (size_t i = 0; i < n; ++i) {
        x = layers_[i]->as<torch::nn::Linear>()->forward(x);
        if (i + 1 < n) {
            x = torch::relu(x);
        }
    }
    return x;
}

torch::Tensor sine_position_2d(int64_t h, int64_t w, int64_t dim, const torch::TensorOptions& opts) {
    TORCH_CHECK(dim % 4 == 0, "positional dim must be divisible by 4");
    const int64_t quarter = dim / 4;
    auto freq = torch::exp(torch::arange(quarter, opts) * (-std::log(10000.0) / quarter));
    auto ys = torch::arange(h, opts).unsqueeze(1) * freq;  // (h, q)
    auto xs = torch::arange(w, opts).unsqueeze(1) * freq;  // (w, q)
    auto ey = torch::cat({ys.sin(), ys.cos()}, 1).unsqueeze(1).expand({h, w, 2 * quarter});
    auto ex = torch::cat({xs.sin(), xs.cos()}, 1).unsqueeze(0).expand({h, w, 2 * quarter});
    return torch::cat({ey, ex}, 2).reshape({h * w, dim});
}

}  // namespace desmoke::nn
