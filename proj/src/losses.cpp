#include "eta/losses.hpp"

namespace eta::losses {

using ad::Shape;
using ad::Var;

Var action_loss(Var pred_residuals, Var expert_residuals) {
    if (pred_residuals.shape() != Shape{14, 2} || expert_residuals.shape() != Shape{14, 2}) {
        throw DimensionError("action_loss: residuals must be 14x2, got " +
                             ad::shape_str(pred_residuals.shape()) + " and " +
                             ad::shape_str(expert_residuals.shape()));
    }
    return ad::mean(ad::sabs(ad::sub(pred_residuals, expert_residuals)));
}

Var mask_loss(Var mask_logits, const world::PatchMask& gt_mask) {
    if (mask_logits.shape() != Shape{world::kMaskRows, world::kMaskCols}) {
        throw DimensionError("mask_loss: logits must be 4x8, got " + ad::shape_str(mask_logits.shape()));
    }
    Var targets = mask_logits.tape()->leaf(gt_mask.to_tensor());
    return ad::mean(ad::bce_with_logits(mask_logits, targets));
}

Var forecast_loss(Var gt_feat, Var pred_feat) {
    if (gt_feat.shape() != pred_feat.shape()) {
        throw DimensionError("forecast_loss: shape mismatch " + ad::shape_str(gt_feat.shape()) + " vs " +
                             ad::shape_str(pred_feat.shape()));
    }
    if (!gt_feat.tape()->is_stop_grad(gt_feat)) {
        throw ContractError("forecast_loss: ground-truth features must be StopGrad-wrapped");
    }
    return ad::mean(ad::sabs(ad::sub(gt_feat, pred_feat)));
}

Var total_base(Var action_l, Var mask_l, const LossWeights& w) {
    return ad::add(action_l, ad::scale(mask_l, w.lambda_mask));
}

double total_base(double action_l, double mask_l, const LossWeights& w) {
    return action_l + w.lambda_mask * mask_l;
}

Var total_async(Var action_l, Var mask_l, models::MaskSource mask_source, Var forecast_l,
                const LossWeights& w) {
    if (mask_source != models::MaskSource::small_model) {
        throw ContractError("total_async: mask loss must be applied to small-model tokens");
    }
    return ad::add(ad::add(action_l, ad::scale(mask_l, w.lambda_mask)),
                   ad::scale(forecast_l, w.lambda_forecast));
}

double total_async(double action_l, double mask_l, double forecast_l, const LossWeights& w) {
    return action_l + w.lambda_mask * mask_l + w.lambda_forecast * forecast_l;
}

}  // namespace eta::losses
