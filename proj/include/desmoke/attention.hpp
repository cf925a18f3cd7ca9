#pragma once

#include <optional>
#include <vector>

#include <torch/torch.h>

namespace desmoke::nn {

/// Collects softmax-normalized attention maps during a forward pass. The
/// normalized axis is always the last one.
struct AttentionProbe {
    std::vector<torch::Tensor> maps;

    void record(const torch::Tensor& probs) { maps.push_back(probs.detach()); }
    void clear() { maps.clear(); }

    /// max |sum(row) - 1| over every recorded map; 0 when nothing was recorded.
    double max_row_sum_error() const;
};

/// softmax(q k^T / sqrt(d)) v for q (..., Lq, D), k/v (..., Lk, D).
/// `allow` (broadcastable to (..., Lq, Lk)) masks keys out where false; a
/// query row with no allowed key attends to all keys instead.
torch::Tensor scaled_dot_attention(const torch::Tensor& q, const torch::Tensor& k,
                                   const torch::Tensor& v,
                                   const std::optional<torch::Tensor>& allow = std::nullopt,
                                   AttentionProbe* probe = nullptr);

class MultiHeadAttentionImpl : public torch::nn::Module {
public:
    MultiHeadAttentionImpl(int64_t dim, int64_t heads);

    /// query (B,Lq,dim), key/value (B,Lk,dim); allow (B,Lq,Lk) or (B,heads,Lq,Lk).
    torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& key,
                          const torch::Tensor& value,
                          const std::optional<torch::Tensor>& allow = std::nullopt,
                          AttentionProbe* probe = nullptr);

    int64_t heads() const { return heads_; }

private:
    int64_t dim_;
    int64_t heads_;
    torch::nn::Linear q_proj_{nullptr}, k_proj_{nullptr}, v_proj_{nullptr}, out_proj_{nullptr};
};
TORCH_MODULE(MultiHeadAttention);

/// Linear layers with ReLU between them.
class MlpImpl : public torch::nn::Module {
public:
    MlpImpl(int64_t in, int64_t hidden, int64_t out, int64_t layers);
    torch::Tensor forward(torch::Tensor x);

private:
    torch::nn::ModuleList layers_;
};
TORCH_MODULE(Mlp);

/// Fixed 2D sinusoidal encoding, (h*w, dim) row-major over (y, x). dim % 4 == 0.
torch::Tensor sine_position_2d(int64_t h, int64_t w, int64_t dim, const torch::TensorOptions& opts);

/// (B, L, heads*hd) -> (B, heads, L, hd)
torch::Tensor split_heads(const torch::Tensor& x, int64_t heads);
/// (B, heads, L, hd) -> (B, L, heads*hd)
torch::Tensor merge_heads(const torch::Tensor& x);

}  // namespace desmoke::nn
