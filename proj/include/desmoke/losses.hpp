#pragma once

#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "desmoke/config.hpp"
#include "desmoke/mask_segmentation.hpp"

namespace desmoke {

/// 4-neighbour Laplacian [[0,-1,0],[-1,4,-1],[0,-1,0]] with reflect padding
/// over the last two dims.
torch::Tensor highpass(const torch::Tensor& masks);

/// phi = 1 + lambda_g * (exp(gt) - 1), per pixel.
torch::Tensor density_modulation(const torch::Tensor& gt, double lambda_g);

/// omega * ln(1 + e/epsilon) for e < omega, e - C beyond, with C making the
/// two pieces meet at e = omega.
torch::Tensor wing(const torch::Tensor& err, double omega, double epsilon);

/// Smoke high-frequency wing loss: mean(phi(gt) * wing(|HP(pred) - HP(gt)|)).
/// Throws NumericError if either mask leaves [0,1].
torch::Tensor shwl(const torch::Tensor& pred, const torch::Tensor& gt, const LossConfig& cfg);

/// Soft Dice loss 1 - (2 sum(p g) + 1) / (sum p + sum g + 1), flattening all
/// but the first dim and averaging over it.
torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& target);

/// Supervision for a batch of windows. Masks are at the mask resolution of
/// the model, (B, T, h4, w4) in [0,1]; clean frames (B, T, 3, H, W).
struct LossTargets {
    torch::Tensor diff;
    torch::Tensor amb;
    torch::Tensor clean;
};

struct LossBreakdown {
    torch::Tensor total;
    torch::Tensor mul;
    torch::Tensor cls;
    torch::Tensor mask_bce;
    torch::Tensor mask_dice;
    torch::Tensor global_bce;
    torch::Tensor global_dice;
    torch::Tensor rec;
    torch::Tensor shwl_diff;
    torch::Tensor shwl_amb;

    /// Name/value pairs for logging.
    std::vector<std::pair<std::string, double>> items() const;
};

/// Query <-> ground-truth assignment for one window: (gt_index, query) pairs
/// and the class id of each ground-truth object.
struct Matching {
    std::vector<std::pair<int, int>> pairs;
    std::vector<int64_t> gt_classes;
};

/// Hungarian matching of queries to the smoke types present in window `b`,
/// with cost lambda_cls * (-p(class)) + lambda_bce * BCE + lambda_dice * Dice.
Matching match_queries(const LocalPredictions& local, const LossTargets& targets, int64_t b, const LossConfig& cfg);

/// Fine mask logits/probabilities per type, as produced by the disentanglement stage.
struct FineMasks {
    torch::Tensor diff_logits;
    torch::Tensor amb_logits;
    torch::Tensor diff;
    torch::Tensor amb;
};

/// Multi-task loss: matched classification CE + mask BCE/Dice over local
/// predictions, BCE/Dice on the fine masks, L1 reconstruction. `total` and
/// the SHWL fields are left undefined.
LossBreakdown multi_task_loss(const LocalPredictions& local, const FineMasks& fine, const torch::Tensor& restored,
                              const LossTargets& targets, const LossConfig& cfg);

/// L_mul + mean(shwl_terms). Throws NumericError naming the offending component.
torch::Tensor total_loss(const torch::Tensor& mul, const std::vector<torch::Tensor>& shwl_terms);

/// Full objective on model outputs; fills every field of the breakdown.
LossBreakdown compute_losses(const LocalPredictions& local, const FineMasks& fine, const torch::Tensor& restored,
                             const LossTargets& targets, const LossConfig& cfg);

}  // namespace desmoke
