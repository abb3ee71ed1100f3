#pragma once

#include "eta/models.hpp"
#include "eta/tensor.hpp"
#include "eta/world.hpp"

namespace eta::losses {

struct LossWeights {
    double lambda_mask = 1.0 / 16.0;
    double lambda_forecast = 0.5;
};

// mean |pred - expert| over all 28 residual components
ad::Var action_loss(ad::Var pred_residuals, ad::Var expert_residuals);

// mean binary cross-entropy with logits over the 32 patches
ad::Var mask_loss(ad::Var mask_logits, const world::PatchMask& gt_mask);

// mean |gt - pred| over all token components; gt must be StopGrad-wrapped
// (collapse prevention depends on it, so a bare gt is a hard failure)
ad::Var forecast_loss(ad::Var gt_feat, ad::Var pred_feat);

ad::Var total_base(ad::Var action_l, ad::Var mask_l, const LossWeights& w);
double total_base(double action_l, double mask_l, const LossWeights& w);

// async total; mask logits must come from the small model's tokens
ad::Var total_async(ad::Var action_l, ad::Var mask_l, models::MaskSource mask_source, ad::Var forecast_l,
                    const LossWeights& w);
double total_async(double action_l, double mask_l, double forecast_l, const LossWeights& w);

}  // namespace eta::losses
