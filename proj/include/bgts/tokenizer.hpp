// Episode -> token tensor via temporal patching and random Fourier features.
//
// Covariate patches map to e = [cos(Wq+b); sin(Wq+b)]. The target channel adds
// an indicator term V*m where m marks positions the model must treat as
// unknown (forecast horizon, masked history, final-patch padding). Covariate
// channels carry all-zero masks, so a single code path handles both.
#pragma once

#include <vector>

#include "bgts/data.hpp"
#include "bgts/tensor.hpp"

namespace bgts {

inline int patch_count(int len, int patch_len) {
    check<ContractError>(patch_len >= 1 && len >= 1, "patch_count: degenerate sizes");
    return (len + patch_len - 1) / patch_len;
}

// Splits a series into ceil(len/P) patches, zero-padding only the tail.
inline std::vector<std::vector<double>> patch(std::span<const double> series, int patch_len) {
    const int s = patch_count(static_cast<int>(series.size()), patch_len);
    std::vector<std::vector<double>> out(s, std::vector<double>(patch_len, 0.0));
    for (size_t t = 0; t < series.size(); ++t) out[t / patch_len][t % patch_len] = series[t];
    return out;
}

// Learnable tokenizer parameters bound into a graph. Weights are stored
// input-major: w is (P, D/2), v is (P, D).
struct TokenizerTensors {
    Tensor w, b, v;
    int patch_len = 0;
    int embed_dim = 0;
};

// e = [cos(Wq+b); sin(Wq+b)] for a batch of patches (N, P).
inline Tensor rff_encode(const Tensor& patches, const TokenizerTensors& tok) {
    Tensor phi = linear(patches, tok.w, tok.b);
    return concat({cos(phi), sin(phi)}, -1);
}

// Adds the mask indicator term V*m to the Fourier features.
inline Tensor encode_target_patch(const Tensor& patches, const Tensor& masks, const TokenizerTensors& tok) {
    check<ShapeError>(masks.shape() == patches.shape(),
                      "encode_target_patch: mask shape " + shape_str(masks.shape()) + " != patch shape " +
                          shape_str(patches.shape()));
    return add(rff_encode(patches, tok), linear(masks, tok.v));
}

struct TokenTensor {
    Tensor values;   // (C+1, S, M+1, D)
    int patches = 0; // S
    int pad = 0;     // zero-padded tail positions in the final patch
};

// Token row order is (c, s, v) with the target as the last variable slot.
inline TokenTensor tokenize(const Episode& ep, const TokenizerTensors& tok) {
    const int rows = ep.T + ep.H;
    const int p_len = tok.patch_len;
    const int s_count = patch_count(rows, p_len);
    const int n_slices = ep.C + 1;
    const int n_vars = ep.M + 1;
    const int64_t n_tokens = static_cast<int64_t>(n_slices) * s_count * n_vars;

    std::vector<double> patches(n_tokens * p_len, 0.0);
    std::vector<double> masks(n_tokens * p_len, 0.0);
    for (int c = 0; c < n_slices; ++c) {
        const EpisodeSlice& slice = ep.slices[c];
        for (int s = 0; s < s_count; ++s)
            for (int v = 0; v < n_vars; ++v) {
                const int64_t row = (static_cast<int64_t>(c) * s_count + s) * n_vars + v;
                double* pv = patches.data() + row * p_len;
                double* mv = masks.data() + row * p_len;
                auto channel = slice.channel(v, rows);
                for (int i = 0; i < p_len; ++i) {
                    const int t = s * p_len + i;
                    if (t < rows) {
                        pv[i] = channel[t];
                        if (v == ep.M) mv[i] = slice.target_mask[t] ? 1.0 : 0.0;
                    } else if (v == ep.M) {
                        mv[i] = 1.0;  // padding treated as horizon
                    }
                }
            }
    }
    const Shape flat{static_cast<int>(n_tokens), p_len};
    Tensor pt = constant(flat, std::move(patches));
    Tensor mt = constant(flat, std::move(masks));
    Tensor tokens = encode_target_patch(pt, mt, tok);
    TokenTensor out;
    out.values = reshape(tokens, {n_slices, s_count, n_vars, tok.embed_dim});
    out.patches = s_count;
    out.pad = s_count * p_len - rows;
    return out;
}

}  // namespace bgts
