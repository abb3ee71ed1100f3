#pragma once

#include <string>
#include <vector>

#include "eta/params.hpp"
#include "eta/tensor.hpp"
#include "eta/world.hpp"

namespace eta::models {

struct EncoderConfig {
    int depth = 6;
    int dim = 32;
    int heads = 4;
    int patch = 8;
    int mlp_ratio = 2;
    bool pool = true;
};

// small encoder keeps the paper's depth ratio: a third of the large one
inline int small_depth_for(int large_depth) { return std::max(1, large_depth / 3); }

struct ModelConfig {
    int dim = 32;
    int heads = 4;
    int large_depth = 6;
    int mlp_ratio = 2;
    int forecast_depth = 2;
    int decoder_depth = 2;
    static constexpr int kCondDim = 5;     // speed + 2 target waypoints
    static constexpr int kQueries = 14;    // 10 path + 4 waypoint queries
    static constexpr int kPatchInput = world::kFrameChannels * world::kPatchSize * world::kPatchSize;

    EncoderConfig large_cfg() const { return {large_depth, dim, heads, world::kPatchSize, mlp_ratio, true}; }
    EncoderConfig small_cfg() const {
        return {small_depth_for(large_depth), dim, heads, world::kPatchSize, mlp_ratio, true};
    }
};

struct TokenInfo {
    int tile = 0;
    int row = 0;
    int col = 0;
};

// N x D token matrix with spatial provenance.
struct TokenGrid {
    ad::Var tokens;
    std::vector<TokenInfo> info;
    bool pooled = false;
};

constexpr int kPrePoolTokens = 32;  // 2 tiles x 4x4 patches
constexpr int kPooledTokens = 8;    // 2 tiles x 2x2 after 2x2 mean pooling

struct EncoderOut {
    TokenGrid pooled;   // 8 x D
    TokenGrid prepool;  // 32 x D, patch resolution (feeds the mask head)
};

// canonical provenance layouts produced by encode_frame
std::vector<TokenInfo> pooled_token_info();
std::vector<TokenInfo> prepool_token_info();

enum class MaskSource { small_model, large_model };

struct ActionOut {
    ad::Var residuals;    // 14 x 2
    ad::Var mask_logits;  // 4 x 8, PatchMask layout
    MaskSource mask_source;
};

// Fresh parameter set for all four networks, namespaced "large." / "small." /
// "forecast." / "action.". Truncated-normal(0.02) weights, zero biases, and a
// zero action output head (so an untrained model emits the degenerate plan).
ad::ParamStore init_params(const ModelConfig& cfg, Rng& rng);

// Shared encoder: split the frame into two 32x32 tiles, patchify (16 tokens
// per tile), add 2D positional + tile embeddings, run pre-norm transformer
// blocks, then 2x2 mean-pool per tile (32 -> 8 tokens, a factor of 4).
EncoderOut encode_frame(ad::Tape& tape, ad::BoundParams& params, const std::string& prefix,
                        const world::FrameTensor& frame, const EncoderConfig& cfg);

inline EncoderOut encode_large(ad::Tape& t, ad::BoundParams& p, const world::FrameTensor& f,
                               const ModelConfig& cfg) {
    return encode_frame(t, p, "large.", f, cfg.large_cfg());
}
inline EncoderOut encode_small(ad::Tape& t, ad::BoundParams& p, const world::FrameTensor& f,
                               const ModelConfig& cfg) {
    return encode_frame(t, p, "small.", f, cfg.small_cfg());
}

// Forecast current-step features from the previous step's pooled features,
// conditioned on the action emitted then and the conditioning vector:
// concatenate along the feature dimension, project back to D, then a
// 2-layer transformer encoder.
TokenGrid forecast(ad::Tape& tape, ad::BoundParams& params, const TokenGrid& feat_prev,
                   const ad::Tensor& action_prev_residuals, const ad::Tensor& cond_prev,
                   const ModelConfig& cfg);

// Action decoder: concatenate the token grids (1 grid for the base model,
// 2 for the async model), prepend a projected conditioning token, run
// decoder blocks over 14 learned queries, and emit per-query 2D residuals.
// Mask logits are scaled dot products between the queries and the pre-pool
// patch tokens, max-pooled over queries.
ActionOut predict_action(ad::Tape& tape, ad::BoundParams& params, const std::vector<TokenGrid>& feats,
                         const ad::Tensor& cond, const TokenGrid& mask_tokens, MaskSource mask_source,
                         const ModelConfig& cfg);

// 14x2 residual tensor -> plan (cumulative sums per group).
world::ActionPlan reconstruct_action(const ad::Tensor& residuals);

}  // namespace eta::models
