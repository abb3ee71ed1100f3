#include "eta/models.hpp"

#include <cmath>

namespace eta::models {

using ad::BoundParams;
using ad::ParamStore;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

Tensor trunc_normal(Shape shape, Rng& rng, double stddev = 0.02) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) {
        double v = rng.normal() * stddev;
        v = std::max(-2.0 * stddev, std::min(2.0 * stddev, v));
        t[i] = v;
    }
    return t;
}

void init_linear(ParamStore& store, const std::string& prefix, int64_t in, int64_t out, Rng& rng,
                 bool zero = false) {
    store.insert(prefix + ".w", zero ? Tensor({in, out}) : trunc_normal({in, out}, rng));
    store.insert(prefix + ".b", Tensor({1, out}));
}

void init_layer_norm(ParamStore& store, const std::string& prefix, int64_t dim) {
    store.insert(prefix + ".g", Tensor::full({1, dim}, 1.0));
    store.insert(prefix + ".b", Tensor({1, dim}));
}

void init_attention(ParamStore& store, const std::string& prefix, int64_t dim, Rng& rng) {
    init_linear(store, prefix + ".wq", dim, dim, rng);
    init_linear(store, prefix + ".wk", dim, dim, rng);
    init_linear(store, prefix + ".wv", dim, dim, rng);
    init_linear(store, prefix + ".wo", dim, dim, rng);
}

void init_encoder_block(ParamStore& store, const std::string& prefix, int64_t dim, int mlp_ratio,
                        Rng& rng) {
    init_layer_norm(store, prefix + ".ln1", dim);
    init_attention(store, prefix + ".attn", dim, rng);
    init_layer_norm(store, prefix + ".ln2", dim);
    init_linear(store, prefix + ".mlp.fc1", dim, dim * mlp_ratio, rng);
    init_linear(store, prefix + ".mlp.fc2", dim * mlp_ratio, dim, rng);
}

void init_encoder(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg, Rng& rng) {
    init_linear(store, prefix + "embed", ModelConfig::kPatchInput, cfg.dim, rng);
    store.insert(prefix + "pos", trunc_normal({16, cfg.dim}, rng));
    store.insert(prefix + "tile", trunc_normal({2, cfg.dim}, rng));
    for (int i = 0; i < cfg.depth; ++i) {
        init_encoder_block(store, prefix + "blk" + std::to_string(i), cfg.dim, cfg.mlp_ratio, rng);
    }
    init_layer_norm(store, prefix + "ln_out", cfg.dim);
}

Var linear(BoundParams& p, const std::string& prefix, Var x) {
    return ad::linear(x, p(prefix + ".w"), p(prefix + ".b"));
}

Var layer_norm(BoundParams& p, const std::string& prefix, Var x) {
    return ad::layer_norm_affine(x, p(prefix + ".g"), p(prefix + ".b"));
}

Var mlp(BoundParams& p, const std::string& prefix, Var x) {
    return linear(p, prefix + ".fc2", ad::gelu(linear(p, prefix + ".fc1", x)));
}

// multi-head scaled dot-product attention; q_in attends over kv_in
Var attention(BoundParams& p, const std::string& prefix, Var q_in, Var kv_in, int heads) {
    Var q = linear(p, prefix + ".wq", q_in);
    Var k = linear(p, prefix + ".wk", kv_in);
    Var v = linear(p, prefix + ".wv", kv_in);
    return linear(p, prefix + ".wo", ad::mha_core(q, k, v, heads));
}

Var encoder_block(BoundParams& p, const std::string& prefix, Var x, int heads) {
    Var xn = layer_norm(p, prefix + ".ln1", x);
    x = ad::add(x, attention(p, prefix + ".attn", xn, xn, heads));
    x = ad::add(x, mlp(p, prefix + ".mlp", layer_norm(p, prefix + ".ln2", x)));
    return x;
}

Var decoder_block(BoundParams& p, const std::string& prefix, Var q, Var memory, int heads) {
    Var qn = layer_norm(p, prefix + ".ln1", q);
    q = ad::add(q, attention(p, prefix + ".self", qn, qn, heads));
    q = ad::add(q, attention(p, prefix + ".cross", layer_norm(p, prefix + ".ln2", q), memory, heads));
    q = ad::add(q, mlp(p, prefix + ".mlp", layer_norm(p, prefix + ".ln3", q)));
    return q;
}

// token order: tile-major, then row-major within the 4x4 tile grid
Tensor patchify(const world::FrameTensor& frame) {
    constexpr int kTileW = world::kFrameWidth / 2;
    constexpr int kGrid = kTileW / world::kPatchSize;  // 4
    Tensor patches({kPrePoolTokens, ModelConfig::kPatchInput});
    int64_t tok = 0;
    for (int tile = 0; tile < 2; ++tile) {
        for (int r = 0; r < kGrid; ++r) {
            for (int c = 0; c < kGrid; ++c) {
                int64_t idx = 0;
                for (int ch = 0; ch < world::kFrameChannels; ++ch) {
                    for (int py = 0; py < world::kPatchSize; ++py) {
                        for (int px = 0; px < world::kPatchSize; ++px) {
                            const int v = r * world::kPatchSize + py;
                            const int u = tile * kTileW + c * world::kPatchSize + px;
                            patches.at(tok, idx++) = frame.at(ch, v, u);
                        }
                    }
                }
                ++tok;
            }
        }
    }
    return patches;
}

}  // namespace

std::vector<TokenInfo> pooled_token_info() {
    std::vector<TokenInfo> info;
    for (int tile = 0; tile < 2; ++tile)
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 2; ++c) info.push_back({tile, r, c});
    return info;
}

std::vector<TokenInfo> prepool_token_info() {
    std::vector<TokenInfo> info;
    for (int tile = 0; tile < 2; ++tile)
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) info.push_back({tile, r, c});
    return info;
}

ParamStore init_params(const ModelConfig& cfg, Rng& rng) {
    ParamStore store;
    init_encoder(store, "large.", cfg.large_cfg(), rng);
    init_encoder(store, "small.", cfg.small_cfg(), rng);

    const int64_t dim = cfg.dim;
    const int64_t ctx = 2 * ModelConfig::kQueries + ModelConfig::kCondDim;  // 33
    init_linear(store, "forecast.proj", dim + ctx, dim, rng);
    for (int i = 0; i < cfg.forecast_depth; ++i) {
        init_encoder_block(store, "forecast.blk" + std::to_string(i), dim, cfg.mlp_ratio, rng);
    }

    init_linear(store, "action.cond", ModelConfig::kCondDim, dim, rng);
    store.insert("action.src", trunc_normal({2, dim}, rng));
    store.insert("action.queries", trunc_normal({ModelConfig::kQueries, dim}, rng));
    for (int i = 0; i < cfg.decoder_depth; ++i) {
        const std::string prefix = "action.blk" + std::to_string(i);
        init_layer_norm(store, prefix + ".ln1", dim);
        init_attention(store, prefix + ".self", dim, rng);
        init_layer_norm(store, prefix + ".ln2", dim);
        init_attention(store, prefix + ".cross", dim, rng);
        init_layer_norm(store, prefix + ".ln3", dim);
        init_linear(store, prefix + ".mlp.fc1", dim, dim * cfg.mlp_ratio, rng);
        init_linear(store, prefix + ".mlp.fc2", dim * cfg.mlp_ratio, dim, rng);
    }
    init_linear(store, "action.head", dim, 2, rng, /*zero=*/true);
    store.insert("action.mask_q.w", trunc_normal({dim, dim}, rng));
    store.insert("action.mask_k.w", trunc_normal({dim, dim}, rng));
    return store;
}

EncoderOut encode_frame(Tape& tape, BoundParams& params, const std::string& prefix,
                        const world::FrameTensor& frame, const EncoderConfig& cfg) {
    if (frame.t.shape() != Shape{world::kFrameChannels, world::kFrameHeight, world::kFrameWidth}) {
        throw DimensionError("encode_frame: frame must be 4x32x64, got " + ad::shape_str(frame.t.shape()));
    }
    Var patches = tape.leaf(patchify(frame));
    Var x = ad::add(ad::matmul(patches, params(prefix + "embed.w")), params(prefix + "embed.b"));
    Var pos = params(prefix + "pos");
    x = ad::add(x, ad::concat_rows({pos, pos}));
    Var tiles = params(prefix + "tile");
    x = ad::add(x, ad::concat_rows({ad::repeat_rows(ad::slice_rows(tiles, 0, 1), 16),
                                    ad::repeat_rows(ad::slice_rows(tiles, 1, 1), 16)}));
    for (int i = 0; i < cfg.depth; ++i) {
        x = encoder_block(params, prefix + "blk" + std::to_string(i), x, cfg.heads);
    }
    x = layer_norm(params, prefix + "ln_out", x);

    EncoderOut out;
    out.prepool.tokens = x;
    out.prepool.pooled = false;
    out.prepool.info = prepool_token_info();

    if (!cfg.pool) {
        out.pooled = out.prepool;
        return out;
    }
    std::vector<std::vector<int64_t>> groups;
    for (int tile = 0; tile < 2; ++tile) {
        for (int R = 0; R < 2; ++R) {
            for (int C = 0; C < 2; ++C) {
                std::vector<int64_t> members;
                for (int dr = 0; dr < 2; ++dr)
                    for (int dc = 0; dc < 2; ++dc)
                        members.push_back(tile * 16 + (2 * R + dr) * 4 + (2 * C + dc));
                groups.push_back(std::move(members));
                out.pooled.info.push_back({tile, R, C});
            }
        }
    }
    out.pooled.tokens = ad::mean_row_groups(x, groups);
    out.pooled.pooled = true;
    return out;
}

TokenGrid forecast(Tape& tape, BoundParams& params, const TokenGrid& feat_prev,
                   const Tensor& action_prev_residuals, const Tensor& cond_prev,
                   const ModelConfig& cfg) {
    if (!feat_prev.pooled) throw ContractError("forecast: expects a post-pool token grid");
    const int64_t n = feat_prev.tokens.value().rows();
    if (action_prev_residuals.shape() != Shape{ModelConfig::kQueries, 2}) {
        throw DimensionError("forecast: action residuals must be 14x2, got " +
                             ad::shape_str(action_prev_residuals.shape()));
    }
    if (cond_prev.shape() != Shape{1, ModelConfig::kCondDim}) {
        throw DimensionError("forecast: conditioning must be 1x5, got " + ad::shape_str(cond_prev.shape()));
    }
    Tensor ctx({1, 2 * ModelConfig::kQueries + ModelConfig::kCondDim});
    for (int64_t i = 0; i < action_prev_residuals.numel(); ++i) ctx[i] = action_prev_residuals[i];
    for (int64_t i = 0; i < cond_prev.numel(); ++i) ctx[2 * ModelConfig::kQueries + i] = cond_prev[i];

    Var x = ad::concat_cols({feat_prev.tokens, ad::repeat_rows(tape.leaf(ctx), n)});
    x = linear(params, "forecast.proj", x);
    for (int i = 0; i < cfg.forecast_depth; ++i) {
        x = encoder_block(params, "forecast.blk" + std::to_string(i), x, cfg.heads);
    }
    TokenGrid out;
    out.tokens = x;
    out.info = feat_prev.info;
    out.pooled = true;
    return out;
}

ActionOut predict_action(Tape& tape, BoundParams& params, const std::vector<TokenGrid>& feats,
                         const Tensor& cond, const TokenGrid& mask_tokens, MaskSource mask_source,
                         const ModelConfig& cfg) {
    if (feats.empty() || feats.size() > 2) {
        throw ContractError("predict_action: expects 1 (base) or 2 (async) token grids, got " +
                            std::to_string(feats.size()));
    }
    const int64_t dim = cfg.dim;
    for (const TokenGrid& g : feats) {
        if (g.tokens.value().cols() != dim) {
            throw DimensionError("predict_action: token dim mismatch, expected " + std::to_string(dim) +
                                 ", got " + ad::shape_str(g.tokens.value().shape()));
        }
    }
    if (cond.shape() != Shape{1, ModelConfig::kCondDim}) {
        throw DimensionError("predict_action: conditioning must be 1x5, got " + ad::shape_str(cond.shape()));
    }
    if (mask_tokens.pooled || mask_tokens.tokens.value().rows() != kPrePoolTokens) {
        throw ContractError("predict_action: mask tokens must be the 32 pre-pool patch tokens");
    }

    Var src = params("action.src");
    std::vector<Var> parts;
    parts.push_back(linear(params, "action.cond", tape.leaf(cond)));
    for (size_t i = 0; i < feats.size(); ++i) {
        Var emb = ad::repeat_rows(ad::slice_rows(src, static_cast<int64_t>(i), 1),
                                  feats[i].tokens.value().rows());
        parts.push_back(ad::add(feats[i].tokens, emb));
    }
    Var memory = ad::concat_rows(std::span<const Var>(parts));

    Var q = params("action.queries");
    for (int i = 0; i < cfg.decoder_depth; ++i) {
        q = decoder_block(params, "action.blk" + std::to_string(i), q, memory, cfg.heads);
    }

    ActionOut out;
    out.residuals = linear(params, "action.head", q);

    Var qm = ad::matmul(q, params("action.mask_q.w"));
    Var km = ad::matmul(mask_tokens.tokens, params("action.mask_k.w"));
    Var scores = ad::scale(ad::matmul(qm, ad::transpose(km)), 1.0 / std::sqrt(static_cast<double>(dim)));
    Var pooled = ad::col_max(scores);  // 1 x 32, token order
    // reorder token-major columns into the 4x8 patch-grid layout
    Tensor perm({kPrePoolTokens, kPrePoolTokens});
    for (int64_t tok = 0; tok < kPrePoolTokens; ++tok) {
        const TokenInfo& ti = mask_tokens.info[static_cast<size_t>(tok)];
        const int64_t grid = ti.row * world::kMaskCols + ti.tile * 4 + ti.col;
        perm.at(tok, grid) = 1.0;
    }
    out.mask_logits = ad::reshape(ad::matmul(pooled, tape.leaf(perm)),
                                  {world::kMaskRows, world::kMaskCols});
    out.mask_source = mask_source;
    return out;
}

world::ActionPlan reconstruct_action(const Tensor& residuals) {
    return world::reconstruct_action(world::residuals_from_tensor(residuals));
}

}  // namespace eta::models
