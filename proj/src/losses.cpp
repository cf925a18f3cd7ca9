#include "desmoke/losses.hpp"

#include <cmath>

#include "desmoke/error.hpp"
#include "desmoke/hungarian.hpp"

namespace desmoke {

namespace F = torch::nn::functional;

namespace {

void require_finite(const torch::Tensor& t, const std::string& name) {
    if (!torch::isfinite(t.detach()).all().item<bool>()) {
        throw NumericError("loss component '" + name + "' is not finite");
    }
}

void require_unit_range(const torch::Tensor& t, const char* name) {
    auto d = t.detach();
    if (d.numel() > 0 && (d.min().item<double>() < 0.0 || d.max().item<double>() > 1.0)) {
        throw NumericError(std::string("shwl: ") + name + " must be normalized to [0,1]");
    }
}

}  // namespace

torch::Tensor highpass(const torch::Tensor& masks) {
    TORCH_CHECK(masks.dim() >= 2, "highpass needs at least 2 dims");
    const auto h = masks.size(-2), w = masks.size(-1);
    auto flat = masks.reshape({-1, 1, h, w});
    // Reflect padding needs at least 2 pixels per side.
    auto padded = (h > 1 && w > 1) ? F::pad(flat, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReflect))
                                   : F::pad(flat, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
    auto kernel = torch::tensor({0.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 0.0}, masks.options()).view({1, 1, 3, 3});
    return F::conv2d(padded, kernel).view(masks.sizes());
}

torch::Tensor density_modulation(const torch::Tensor& gt, double lambda_g) {
    return 1.0 + lambda_g * (torch::exp(gt) - 1.0);
}

torch::Tensor wing(const torch::Tensor& err, double omega, double epsilon) {
    const double c = omega - omega * std::log(1.0 + omega / epsilon);
    return torch::where(err < omega, omega * torch::log1p(err / epsilon), err - c);
}

torch::Tensor shwl(const torch::Tensor& pred, const torch::Tensor& gt, const LossConfig& cfg) {
    TORCH_CHECK(pred.sizes() == gt.sizes(), "shwl: shape mismatch ", pred.sizes(), " vs ", gt.sizes());
    require_unit_range(pred, "prediction");
    require_unit_range(gt, "ground truth");
    auto err = (highpass(pred) - highpass(gt)).abs();
    return (density_modulation(gt, cfg.lambda_g) * wing(err, cfg.wing_omega, cfg.wing_epsilon)).mean();
}

torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& target) {
    auto p = probs.flatten(1), g = target.flatten(1);
    auto num = 2.0 * (p * g).sum(1) + 1.0;
    auto den = p.sum(1) + g.sum(1) + 1.0;
    return (1.0 - num / den).mean();
}

std::vector<std::pair<std::string, double>> LossBreakdown::items() const {
    std::vector<std::pair<std::string, double>> out;
    auto add = [&](const char* name, const torch::Tensor& t) {
        out.emplace_back(name, t.defined() ? t.item<double>() : 0.0);
    };
    add("total", total);
    add("mul", mul);
    add("cls", cls);
    add("mask_bce", mask_bce);
    add("mask_dice", mask_dice);
    add("global_bce", global_bce);
    add("global_dice", global_dice);
    add("rec", rec);
    add("shwl_diff", shwl_diff);
    add("shwl_amb", shwl_amb);
    return out;
}

Matching match_queries(const LocalPredictions& local, const LossTargets& targets, int64_t b, const LossConfig& cfg) {
    torch::NoGradGuard no_grad;
    Matching m;
    std::vector<torch::Tensor> gt_masks;
    const std::array<std::pair<const torch::Tensor*, SmokeClass>, 2> types = {
        std::pair{&targets.diff, SmokeClass::Diffusion}, std::pair{&targets.amb, SmokeClass::Ambient}};
    for (const auto& [mask, cls] : types) {
        auto g = (*mask)[b];
        if (g.max().item<double>() > cfg.presence_threshold) {
            gt_masks.push_back(g.flatten());
            m.gt_classes.push_back(static_cast<int64_t>(cls));
        }
    }
    if (gt_masks.empty()) {
        return m;
    }
    auto logits = local.mask_logits[b].flatten(1);  // (N, P)
    auto probs = local.masks[b].flatten(1);
    auto type_probs = local.type_probs[b];  // (N, 3)
    const auto n = logits.size(0);
    std::vector<std::vector<double>> cost(gt_masks.size(), std::vector<double>(static_cast<size_t>(n)));
    for (size_t g = 0; g < gt_masks.size(); ++g) {
        auto target = gt_masks[g].unsqueeze(0).expand_as(logits);
        auto bce = F::binary_cross_entropy_with_logits(logits, target,
                                                       F::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kNone))
                       .mean(1);
        auto num = 2.0 * (probs * target).sum(1) + 1.0;
        auto den = probs.sum(1) + target.sum(1) + 1.0;
        auto dice = 1.0 - num / den;
        auto cls = -type_probs.select(1, m.gt_classes[g]);
        auto c = (cfg.lambda_cls * cls + cfg.lambda_bce * bce + cfg.lambda_dice * dice).to(torch::kCPU, torch::kFloat64);
        for (int64_t i = 0; i < n; ++i) {
            cost[g][static_cast<size_t>(i)] = c[i].item<double>();
        }
    }
    m.pairs = hungarian_match(cost);
    return m;
}

LossBreakdown multi_task_loss(const LocalPredictions& local, const FineMasks& fine, const torch::Tensor& restored,
                              const LossTargets& targets, const LossConfig& cfg) {
    TORCH_CHECK(fine.diff.sizes() == targets.diff.sizes() && fine.amb.sizes() == targets.amb.sizes(),
                "fine masks ", fine.diff.sizes(), " do not match targets ", targets.diff.sizes());
    TORCH_CHECK(restored.sizes() == targets.clean.sizes(), "restored ", restored.sizes(), " does not match clean ",
                targets.clean.sizes());
    const auto b = local.type_logits.size(0), n = local.type_logits.size(1);
    const auto opts = local.type_logits.options();

    auto class_targets = torch::full({b, n}, static_cast<int64_t>(SmokeClass::NoSmoke), torch::kLong);
    std::vector<torch::Tensor> matched_logits, matched_probs, matched_gt;
    for (int64_t i = 0; i < b; ++i) {
        const auto m = match_queries(local, targets, i, cfg);
        for (const auto& [g, q] : m.pairs) {
            class_targets[i][q] = m.gt_classes[static_cast<size_t>(g)];
            matched_logits.push_back(local.mask_logits[i][q]);
            matched_probs.push_back(local.masks[i][q]);
            const auto& src = m.gt_classes[static_cast<size_t>(g)] == static_cast<int64_t>(SmokeClass::Diffusion)
                                  ? targets.diff
                                  : targets.amb;
            matched_gt.push_back(src[i]);
        }
    }
    auto class_weight = torch::tensor({1.0, 1.0, cfg.no_object_weight}, opts);
    LossBreakdown out;
    out.cls = F::cross_entropy(local.type_logits.reshape({b * n, kNumSmokeClasses}),
                               class_targets.to(opts.device()).flatten(),
                               F::CrossEntropyFuncOptions().weight(class_weight));
    if (matched_logits.empty()) {
        out.mask_bce = torch::zeros({}, opts);
        out.mask_dice = torch::zeros({}, opts);
    } else {
        auto ml = torch::stack(matched_logits), mp = torch::stack(matched_probs), mg = torch::stack(matched_gt);
        out.mask_bce = F::binary_cross_entropy_with_logits(ml, mg);
        out.mask_dice = dice_loss(mp, mg);
    }
    out.global_bce = 0.5 * (F::binary_cross_entropy_with_logits(fine.diff_logits, targets.diff) +
                            F::binary_cross_entropy_with_logits(fine.amb_logits, targets.amb));
    out.global_dice = 0.5 * (dice_loss(fine.diff, targets.diff) + dice_loss(fine.amb, targets.amb));
    out.rec = (restored - targets.clean).abs().mean();
    out.mul = cfg.lambda_cls * out.cls + cfg.lambda_bce * (out.mask_bce + out.global_bce) +
              cfg.lambda_dice * (out.mask_dice + out.global_dice) + cfg.lambda_rec * out.rec;
    return out;
}

torch::Tensor total_loss(const torch::Tensor& mul, const std::vector<torch::Tensor>& shwl_terms) {
    require_finite(mul, "L_mul");
    if (shwl_terms.empty()) {
        return mul;
    }
    torch::Tensor sum;
    for (size_t i = 0; i < shwl_terms.size(); ++i) {
        require_finite(shwl_terms[i], "shwl[" + std::to_string(i) + "]");
        sum = sum.defined() ? sum + shwl_terms[i] : shwl_terms[i];
    }
    return mul + sum / static_cast<double>(shwl_terms.size());
}

LossBreakdown compute_losses(const LocalPredictions& local, const FineMasks& fine, const torch::Tensor& restored,
                             const LossTargets& targets, const LossConfig& cfg) {
    auto out = multi_task_loss(local, fine, restored, targets, cfg);
    out.shwl_diff = shwl(fine.diff, targets.diff, cfg);
    out.shwl_amb = shwl(fine.amb, targets.amb, cfg);
    out.total = total_loss(out.mul, {out.shwl_diff, out.shwl_amb});
    return out;
}

}  // namespace desmoke
