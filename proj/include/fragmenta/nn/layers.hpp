#pragma once
// Feature layers: patch embedders, ring-graph residual aggregation, gated
// fusion, kernelized linear attention and the searching head.

#include "fragmenta/nn/tensor.hpp"

#include <cstdint>
#include <vector>

namespace fragmenta::nn {

struct ContourEmbedWeights {
    Var w_conv, b_conv, w_fc, b_fc;
};

struct TextureEmbedWeights {
    Var w1, b1, w2, b2;
};

struct GcnWeights {
    Var w, b;
};

struct FusionWeights {
    Var w_g, b_g; // (2D x D), (1 x D)
};

struct AttentionWeights {
    Var wq, wk, wv;     // D x D
    Var w1, b1, w2, b2; // feed-forward D -> F -> D
};

struct SearchHeadWeights {
    Var w_point, b_point; // 2D -> D
    Var w_out, b_out;     // D -> d_search
};

inline constexpr double kLeakySlope = 0.2;

/// conv 3x3 -> leaky -> spatial mean -> affine to D.
inline Var patch_embed_contour(Var patches, int size, int channels, const ContourEmbedWeights& p) {
    const Eigen::Index positions = static_cast<Eigen::Index>(size - 2) * (size - 2);
    Var h = leaky_relu(conv3x3_valid(patches, size, channels, p.w_conv, p.b_conv), kLeakySlope);
    return affine(spatial_mean_pool(h, positions), p.w_fc, p.b_fc);
}

/// conv 3x3 -> leaky -> conv 3x3 -> leaky -> spatial mean.
inline Var patch_embed_texture(Var patches, int size, const TextureEmbedWeights& p) {
    const Eigen::Index mid = p.w1.cols();
    Var h = leaky_relu(conv3x3_valid(patches, size, 3, p.w1, p.b1), kLeakySlope);
    h = leaky_relu(conv3x3_valid(h, size - 2, static_cast<int>(mid), p.w2, p.b2), kLeakySlope);
    const Eigen::Index positions = static_cast<Eigen::Index>(size - 4) * (size - 4);
    return spatial_mean_pool(h, positions);
}

/// h + leaky(mean_{N(v) u {v}}(h) W + b)
inline Var gcn_layer(Var h, std::size_t ring_k, const GcnWeights& p) {
    return add(h, leaky_relu(affine(ring_mean(h, ring_k), p.w, p.b), kLeakySlope));
}

struct FusionOutput {
    Var fused;
    Var gate;
};

/// w = sigmoid([f_t | f_c] W_g + b_g); f_f = w * f_t + (1 - w) * f_c
inline FusionOutput self_gated_fusion(Var f_t, Var f_c, const FusionWeights& p) {
    require_same_shape(f_t.value(), f_c.value(), "self_gated_fusion");
    Var gate = sigmoid(affine(concat_cols(f_t, f_c), p.w_g, p.b_g));
    Var fused = add(f_c, hadamard(gate, sub(f_t, f_c)));
    return {fused, gate};
}

/// Kernelized attention phi(Q)(phi(K)^T V) / (phi(Q) sum phi(K)^T) over the
/// unmasked keys, with phi = elu + 1.
inline Var kernel_attention(Var h, const std::vector<std::uint8_t>& mask, Var wq, Var wk, Var wv) {
    Var q = elu_plus_one(matmul(h, wq));
    Var k = mask_rows(elu_plus_one(matmul(h, wk)), mask);
    Var v = matmul(h, wv);
    Var kv = matmul_tn(k, v);             // D x D
    Var numer = matmul(q, kv);            // L x D
    Var denom = matmul_nt(q, col_sum(k)); // L x 1
    return row_div(numer, denom);
}

/// Attention with residual, then a residual two-layer feed-forward block.
inline Var linear_attention_layer(Var h, const std::vector<std::uint8_t>& mask, const AttentionWeights& p) {
    Var attended = add(h, kernel_attention(h, mask, p.wq, p.wk, p.wv));
    Var ff = affine(leaky_relu(affine(attended, p.w1, p.b1), kLeakySlope), p.w2, p.b2);
    return add(attended, ff);
}

/// [f_c | f_t] -> per-point affine -> masked mean -> affine to d_search.
inline Var search_head(Var f_c_enc, Var f_t_enc, const std::vector<std::uint8_t>& mask, const SearchHeadWeights& p) {
    require_same_shape(f_c_enc.value(), f_t_enc.value(), "search_head");
    Var per_point = affine(concat_cols(f_c_enc, f_t_enc), p.w_point, p.b_point);
    return affine(masked_mean_rows(per_point, mask), p.w_out, p.b_out);
}

} // namespace fragmenta::nn
