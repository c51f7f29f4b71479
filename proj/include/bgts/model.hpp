// Stacked 3D attention model: variable / temporal / context attention per
// block (post-norm residuals), binned prediction head, checkpoint io.
//
// Token layout is (C+1, S, M+1, D) with the target series in the last
// variable slot. Temporal attention uses RoPE; variable attention adds
// learnable per-variable embeddings before QKV; context attention has no
// positional terms and reduces in canonical value order, which makes the
// target output bit-invariant under context permutation.
#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bgts/data.hpp"
#include "bgts/rng.hpp"
#include "bgts/serialize.hpp"
#include "bgts/tensor.hpp"
#include "bgts/tokenizer.hpp"

namespace bgts {

enum class ModelMode { ThreeD, TwoD };

inline std::string to_string(ModelMode m) { return m == ModelMode::ThreeD ? "3d" : "2d"; }
inline ModelMode mode_from_string(const std::string& s) {
    if (s == "3d") return ModelMode::ThreeD;
    if (s == "2d") return ModelMode::TwoD;
    throw ConfigError("unknown model mode '" + s + "' (expected 2d or 3d)");
}

struct ModelConfig {
    int blocks = 2;        // L
    int n_heads = 4;
    int embed_dim = 32;    // D, even; divisible by n_heads; head dim even
    int ffn_dim = 128;
    int bins = 201;        // K
    double value_lo = -10.0;
    double value_hi = 10.0;
    ModelMode mode = ModelMode::ThreeD;
    int patch_len = 8;     // P
    int head_hidden = 128;
    int t_max = 256;       // sizes the wide (2D-mode) tokenizer projection
    int h_max = 64;        // sizes the 2D-mode unpatch projection
    int m_max = 16;        // variable-embedding table rows minus one

    int wide_len() const { return t_max + h_max; }

    void validate() const {
        check<ConfigError>(embed_dim % 2 == 0, "model config: embed_dim must be even");
        check<ConfigError>(embed_dim % n_heads == 0, "model config: embed_dim not divisible by n_heads");
        check<ConfigError>((embed_dim / n_heads) % 2 == 0, "model config: head dim must be even for RoPE");
        check<ConfigError>(bins >= 2, "model config: need at least 2 bins");
        check<ConfigError>(value_hi > value_lo, "model config: empty value range");
        check<ConfigError>(blocks >= 1 && patch_len >= 1 && head_hidden >= 1, "model config: degenerate sizes");
        check<ConfigError>(t_max >= 1 && h_max >= 1 && m_max >= 0, "model config: degenerate maxima");
    }

    static ModelConfig desk() { return ModelConfig{}; }

    static ModelConfig paper() {
        ModelConfig c;
        c.blocks = 12;
        c.n_heads = 6;
        c.embed_dim = 192;
        c.ffn_dim = 768;
        c.bins = 5000;
        c.patch_len = 8;
        c.head_hidden = 1024;
        c.t_max = kMaxLookback;
        c.h_max = kMaxHorizon;
        c.m_max = kMaxCovariates;
        return c;
    }

    nlohmann::json to_json() const {
        return {{"blocks", blocks},       {"n_heads", n_heads},   {"embed_dim", embed_dim},
                {"ffn_dim", ffn_dim},     {"bins", bins},         {"value_lo", value_lo},
                {"value_hi", value_hi},   {"mode", to_string(mode)}, {"patch_len", patch_len},
                {"head_hidden", head_hidden}, {"t_max", t_max},   {"h_max", h_max},
                {"m_max", m_max}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.blocks = j.value("blocks", c.blocks);
        c.n_heads = j.value("n_heads", c.n_heads);
        c.embed_dim = j.value("embed_dim", c.embed_dim);
        c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
        c.bins = j.value("bins", c.bins);
        c.value_lo = j.value("value_lo", c.value_lo);
        c.value_hi = j.value("value_hi", c.value_hi);
        c.mode = mode_from_string(j.value("mode", std::string("3d")));
        c.patch_len = j.value("patch_len", c.patch_len);
        c.head_hidden = j.value("head_hidden", c.head_hidden);
        c.t_max = j.value("t_max", c.t_max);
        c.h_max = j.value("h_max", c.h_max);
        c.m_max = j.value("m_max", c.m_max);
        c.validate();
        return c;
    }
};

inline std::vector<double> bin_centers(const ModelConfig& cfg) {
    std::vector<double> h(cfg.bins);
    const double w = (cfg.value_hi - cfg.value_lo) / cfg.bins;
    for (int i = 0; i < cfg.bins; ++i) h[i] = cfg.value_lo + (i + 0.5) * w;
    return h;
}

// ---------------------------------------------------------------------------
// parameters

struct ParamArray {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

class ModelParams {
  public:
    ModelParams() = default;

    static std::vector<std::pair<std::string, Shape>> array_specs(const ModelConfig& c) {
        const int d = c.embed_dim, half = c.embed_dim / 2;
        std::vector<std::pair<std::string, Shape>> specs;
        specs.push_back({"tok.w", {c.patch_len, half}});
        specs.push_back({"tok.b", {half}});
        specs.push_back({"tok.v", {c.patch_len, d}});
        specs.push_back({"tok.w_wide", {c.wide_len(), half}});
        specs.push_back({"tok.b_wide", {half}});
        specs.push_back({"tok.v_wide", {c.wide_len(), d}});
        specs.push_back({"var_embed", {c.m_max + 1, d}});
        for (int l = 0; l < c.blocks; ++l) {
            const std::string blk = "blk" + std::to_string(l) + ".";
            for (const char* axis : {"var.", "tem.", "ctx."}) {
                for (const char* w : {"wq", "wk", "wv", "wo"}) specs.push_back({blk + axis + w, {d, d}});
                for (const char* b : {"bq", "bk", "bv", "bo"}) specs.push_back({blk + axis + b, {d}});
                specs.push_back({blk + axis + "ln_g", {d}});
                specs.push_back({blk + axis + "ln_b", {d}});
            }
            specs.push_back({blk + "ffn.w1", {d, c.ffn_dim}});
            specs.push_back({blk + "ffn.b1", {c.ffn_dim}});
            specs.push_back({blk + "ffn.w2", {c.ffn_dim, d}});
            specs.push_back({blk + "ffn.b2", {d}});
            specs.push_back({blk + "ffn.ln_g", {d}});
            specs.push_back({blk + "ffn.ln_b", {d}});
        }
        specs.push_back({"head.unpatch_w", {d, c.patch_len * d}});
        specs.push_back({"head.unpatch_b", {c.patch_len * d}});
        specs.push_back({"head.unpatch2d_w", {d, c.h_max * d}});
        specs.push_back({"head.unpatch2d_b", {c.h_max * d}});
        specs.push_back({"head.w1", {d, c.head_hidden}});
        specs.push_back({"head.b1", {c.head_hidden}});
        specs.push_back({"head.w2", {c.head_hidden, c.bins}});
        specs.push_back({"head.b2", {c.bins}});
        return specs;
    }

    static int64_t param_count(const ModelConfig& c) {
        int64_t n = 0;
        for (const auto& [name, shape] : array_specs(c)) n += numel(shape);
        return n;
    }

    static ModelParams init(const ModelConfig& cfg, const Rng& root) {
        cfg.validate();
        ModelParams p;
        p.config_ = cfg;
        Rng rng = root.split("param-init");
        for (const auto& [name, shape] : array_specs(cfg)) {
            ParamArray arr;
            arr.name = name;
            arr.shape = shape;
            arr.data.assign(static_cast<size_t>(numel(shape)), 0.0);
            Rng local = rng.split(name);
            const bool is_bias = name.ends_with(".b") || name.ends_with("b1") || name.ends_with("b2") ||
                                 name.ends_with("bq") || name.ends_with("bk") || name.ends_with("bv") ||
                                 name.ends_with("bo") || name.ends_with("ln_b") || name.ends_with("unpatch_b") ||
                                 name.ends_with("unpatch2d_b");
            if (name.ends_with("ln_g")) {
                std::fill(arr.data.begin(), arr.data.end(), 1.0);
            } else if (name == "tok.v" || name == "tok.v_wide") {
                // zero-init: the mask signal is learned
            } else if (name == "tok.b" || name == "tok.b_wide") {
                const double std = name == "tok.b" ? 1.0 / std::sqrt(cfg.patch_len) : 1.0 / std::sqrt(cfg.wide_len());
                for (double& v : arr.data) v = local.normal(0.0, std);
            } else if (is_bias) {
                // zeros
            } else if (name == "var_embed") {
                for (double& v : arr.data) v = local.normal(0.0, 0.02);
            } else {
                double std = 1.0 / std::sqrt(static_cast<double>(shape[0]));
                if (name == "head.w2") std *= 0.2;  // keep initial forecasts diffuse
                for (double& v : arr.data) v = local.normal(0.0, std);
            }
            p.index_[name] = p.arrays_.size();
            p.arrays_.push_back(std::move(arr));
        }
        return p;
    }

    const ModelConfig& config() const { return config_; }
    std::vector<ParamArray>& arrays() { return arrays_; }
    const std::vector<ParamArray>& arrays() const { return arrays_; }

    ParamArray& at(const std::string& name) {
        auto it = index_.find(name);
        check<ContractError>(it != index_.end(), "model params: no array named '" + name + "'");
        return arrays_[it->second];
    }
    const ParamArray& at(const std::string& name) const { return const_cast<ModelParams*>(this)->at(name); }

    int64_t count() const {
        int64_t n = 0;
        for (const ParamArray& a : arrays_) n += static_cast<int64_t>(a.data.size());
        return n;
    }

    static ModelParams from_records(const ModelConfig& cfg, const std::vector<ArrayRecord>& records) {
        ModelParams p;
        p.config_ = cfg;
        for (const auto& [name, shape] : array_specs(cfg)) {
            const ArrayRecord* rec = nullptr;
            for (const ArrayRecord& r : records)
                if (r.name == name) {
                    rec = &r;
                    break;
                }
            check<FormatError>(rec != nullptr, "checkpoint: missing parameter '" + name + "'");
            check<FormatError>(rec->shape == shape, "checkpoint: parameter '" + name + "' has shape " +
                                                        shape_str(rec->shape) + ", expected " + shape_str(shape));
            ParamArray arr;
            arr.name = name;
            arr.shape = shape;
            arr.data = rec->data;
            p.index_[name] = p.arrays_.size();
            p.arrays_.push_back(std::move(arr));
        }
        return p;
    }

  private:
    ModelConfig config_;
    std::vector<ParamArray> arrays_;
    std::map<std::string, size_t> index_;
};

// ---------------------------------------------------------------------------
// graph binding

struct AttnParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo, ln_g, ln_b;
};
struct FfnParams {
    Tensor w1, b1, w2, b2, ln_g, ln_b;
};
struct BlockParams {
    AttnParams var, tem, ctx;
    FfnParams ffn;
};

struct BoundModel {
    TokenizerTensors tok3d, tok2d;
    Tensor var_embed;
    std::vector<BlockParams> blocks;
    Tensor unpatch_w, unpatch_b, unpatch2d_w, unpatch2d_b;
    Tensor head_w1, head_b1, head_w2, head_b2;
    std::vector<Tensor> leaves;  // ordered like ModelParams::arrays()
    const ModelConfig* cfg = nullptr;
};

// Bind parameter arrays as graph leaves (training) or free constants
// (inference). With a null graph, intermediates are released as handles die.
inline BoundModel bind_model(const ModelParams& params, Graph* g, bool trainable = true) {
    const ModelConfig& cfg = params.config();
    std::map<std::string, size_t> order;
    std::vector<Tensor> leaves;
    for (const ParamArray& a : params.arrays()) {
        order[a.name] = leaves.size();
        leaves.push_back(g ? g->leaf(a.shape, a.data, trainable) : constant(a.shape, a.data));
    }
    auto get = [&](const std::string& name) { return leaves[order.at(name)]; };
    BoundModel m;
    m.cfg = &cfg;
    m.tok3d = {get("tok.w"), get("tok.b"), get("tok.v"), cfg.patch_len, cfg.embed_dim};
    m.tok2d = {get("tok.w_wide"), get("tok.b_wide"), get("tok.v_wide"), cfg.wide_len(), cfg.embed_dim};
    m.var_embed = get("var_embed");
    for (int l = 0; l < cfg.blocks; ++l) {
        const std::string blk = "blk" + std::to_string(l) + ".";
        BlockParams bp;
        auto bind_attn = [&](const std::string& axis) {
            AttnParams a;
            a.wq = get(blk + axis + "wq");
            a.bq = get(blk + axis + "bq");
            a.wk = get(blk + axis + "wk");
            a.bk = get(blk + axis + "bk");
            a.wv = get(blk + axis + "wv");
            a.bv = get(blk + axis + "bv");
            a.wo = get(blk + axis + "wo");
            a.bo = get(blk + axis + "bo");
            a.ln_g = get(blk + axis + "ln_g");
            a.ln_b = get(blk + axis + "ln_b");
            return a;
        };
        bp.var = bind_attn("var.");
        bp.tem = bind_attn("tem.");
        bp.ctx = bind_attn("ctx.");
        bp.ffn = {get(blk + "ffn.w1"), get(blk + "ffn.b1"), get(blk + "ffn.w2"),
                  get(blk + "ffn.b2"), get(blk + "ffn.ln_g"), get(blk + "ffn.ln_b")};
        m.blocks.push_back(std::move(bp));
    }
    m.unpatch_w = get("head.unpatch_w");
    m.unpatch_b = get("head.unpatch_b");
    m.unpatch2d_w = get("head.unpatch2d_w");
    m.unpatch2d_b = get("head.unpatch2d_b");
    m.head_w1 = get("head.w1");
    m.head_b1 = get("head.b1");
    m.head_w2 = get("head.w2");
    m.head_b2 = get("head.b2");
    m.leaves = std::move(leaves);
    return m;
}

// ---------------------------------------------------------------------------
// forward

// Attention-weight capture request for one (layer, axis).
struct AttnCapture {
    int layer = -1;
    int axis = -1;  // 0 variable, 1 temporal, 2 context
    std::vector<double> weights;  // (B, heads, L, L)
    int batch = 0, len = 0;
};

namespace detail {

inline Tensor attention_sublayer(const Tensor& x, const AttnParams& p, int n_heads, bool use_rope,
                                 bool sorted_reduce, const Tensor& embed, std::vector<double>* capture) {
    Tensor attn_in = embed.defined() ? add_tiled(x, embed) : x;
    Tensor q = linear(attn_in, p.wq, p.bq);
    Tensor k = linear(attn_in, p.wk, p.bk);
    Tensor v = linear(attn_in, p.wv, p.bv);
    if (use_rope) {
        q = rope(q, n_heads);
        k = rope(k, n_heads);
    }
    AttentionOpts opts;
    opts.sorted_reduce = sorted_reduce;
    opts.capture_weights = capture;
    Tensor a = attention(q, k, v, n_heads, opts);
    Tensor o = linear(a, p.wo, p.bo);
    return layernorm(add(x, o), p.ln_g, p.ln_b);
}

inline Tensor ffn_sublayer(const Tensor& x, const FfnParams& p) {
    Tensor h = linear(gelu(linear(x, p.w1, p.b1)), p.w2, p.b2);
    return layernorm(add(x, h), p.ln_g, p.ln_b);
}

}  // namespace detail

// One 3D block over tokens (C+1, S, M+1, D): variable -> temporal -> context
// attention, then FFN, post-norm residuals throughout.
inline Tensor block(const Tensor& tokens, const BlockParams& bp, const Tensor& var_embed_rows, int n_heads,
                    int layer_index = -1, AttnCapture* capture = nullptr) {
    const Shape& s4 = tokens.shape();
    check<ShapeError>(s4.size() == 4, "block: expects (C+1,S,M+1,D) tokens, got " + shape_str(s4));
    const int n_c = s4[0], n_s = s4[1], n_v = s4[2], d = s4[3];
    check<ContractError>(n_s >= 1, "block: empty temporal axis");
    auto want = [&](int axis) {
        return capture && capture->layer == layer_index && capture->axis == axis ? &capture->weights : nullptr;
    };

    // variable axis
    Tensor x = reshape(tokens, {n_c * n_s, n_v, d});
    if (auto* c = want(0)) { capture->batch = n_c * n_s; capture->len = n_v; (void)c; }
    x = detail::attention_sublayer(x, bp.var, n_heads, false, true, var_embed_rows, want(0));

    // temporal axis
    x = reshape(x, {n_c, n_s, n_v, d});
    x = transpose(x, {0, 2, 1, 3});
    x = reshape(x, {n_c * n_v, n_s, d});
    if (want(1)) { capture->batch = n_c * n_v; capture->len = n_s; }
    x = detail::attention_sublayer(x, bp.tem, n_heads, true, false, Tensor(), want(1));
    x = reshape(x, {n_c, n_v, n_s, d});
    x = transpose(x, {0, 2, 1, 3});

    // context axis
    x = transpose(x, {1, 2, 0, 3});
    x = reshape(x, {n_s * n_v, n_c, d});
    if (want(2)) { capture->batch = n_s * n_v; capture->len = n_c; }
    x = detail::attention_sublayer(x, bp.ctx, n_heads, false, true, Tensor(), want(2));
    x = reshape(x, {n_s, n_v, n_c, d});
    x = transpose(x, {2, 0, 1, 3});

    return detail::ffn_sublayer(x, bp.ffn);
}

// Full forward to per-horizon-step logits (H, K).
inline Tensor model_logits(const Episode& ep, const BoundModel& m, ModelMode mode, AttnCapture* capture = nullptr) {
    const ModelConfig& cfg = *m.cfg;
    check<ConfigError>(ep.M <= cfg.m_max, "model: episode has " + std::to_string(ep.M) +
                                              " covariates, table allows " + std::to_string(cfg.m_max));
    for (int id : ep.column_ids)
        check<ContractError>(id >= 0 && id <= cfg.m_max, "model: variable id " + std::to_string(id) + " out of range");
    const int rows = ep.T + ep.H;
    TokenTensor tt;
    if (mode == ModelMode::TwoD) {
        check<ConfigError>(rows <= cfg.wide_len(), "model: window " + std::to_string(rows) +
                                                       " exceeds 2D-mode capacity " + std::to_string(cfg.wide_len()));
        check<ConfigError>(ep.H <= cfg.h_max, "model: horizon exceeds 2D-mode capacity");
        tt = tokenize(ep, m.tok2d);
    } else {
        tt = tokenize(ep, m.tok3d);
    }

    std::vector<int> ids = ep.column_ids;
    ids.push_back(0);  // target slot
    Tensor embed_rows = gather(m.var_embed, ids);

    Tensor x = tt.values;
    for (int l = 0; l < cfg.blocks; ++l) x = block(x, m.blocks[l], embed_rows, cfg.n_heads, l, capture);

    const int n_c = ep.C + 1, n_v = ep.M + 1, d = cfg.embed_dim;
    Tensor steps;  // (H, D) per-step latents of the target slice horizon
    if (mode == ModelMode::TwoD) {
        Tensor target = slice(slice(slice(x, 0, n_c - 1, 1), 2, n_v - 1, 1), 1, 0, 1);  // (1,1,1,D)
        target = reshape(target, {1, d});
        Tensor u = linear(target, m.unpatch2d_w, m.unpatch2d_b);  // (1, h_max*D)
        u = reshape(u, {cfg.h_max, d});
        steps = slice(u, 0, 0, ep.H);
    } else {
        const int p_lo = ep.T / cfg.patch_len;
        const int p_hi = (ep.T + ep.H - 1) / cfg.patch_len;
        const int n_hp = p_hi - p_lo + 1;
        Tensor target = slice(slice(x, 0, n_c - 1, 1), 2, n_v - 1, 1);  // (1,S,1,D)
        target = reshape(target, {tt.patches, d});
        Tensor hp = slice(target, 0, p_lo, n_hp);                        // (n_hp, D)
        Tensor u = linear(hp, m.unpatch_w, m.unpatch_b);                 // (n_hp, P*D)
        u = reshape(u, {n_hp * cfg.patch_len, d});
        std::vector<int> step_rows(ep.H);
        for (int i = 0; i < ep.H; ++i) {
            const int pos = ep.T + i;
            step_rows[i] = (pos / cfg.patch_len - p_lo) * cfg.patch_len + pos % cfg.patch_len;
        }
        steps = gather(u, step_rows);
    }
    Tensor hidden = gelu(linear(steps, m.head_w1, m.head_b1));
    return linear(hidden, m.head_w2, m.head_b2);  // (H, K)
}

// ---------------------------------------------------------------------------
// forecasts

struct BinnedForecast {
    int horizon = 0;
    int bins = 0;
    std::vector<double> probs;  // H x K, row-major
    NormStats stats;
    double value_lo = -10.0, value_hi = 10.0;

    std::span<const double> row(int t) const { return std::span(probs).subspan(static_cast<size_t>(t) * bins, bins); }
    double bin_center(int i) const { return value_lo + (i + 0.5) * (value_hi - value_lo) / bins; }
};

inline BinnedForecast forecast_from_probs(const std::vector<double>& probs, const Episode& ep,
                                          const ModelConfig& cfg) {
    BinnedForecast f;
    f.horizon = ep.H;
    f.bins = cfg.bins;
    f.probs = probs;
    f.stats = ep.target_slice().target_stats;
    f.value_lo = cfg.value_lo;
    f.value_hi = cfg.value_hi;
    return f;
}

inline BinnedForecast forward(const Episode& ep, const ModelParams& params, const ModelConfig& cfg,
                              AttnCapture* capture = nullptr) {
    BoundModel m = bind_model(params, nullptr, false);
    Tensor logits = model_logits(ep, m, cfg.mode, capture);
    Tensor probs = softmax(logits, -1);
    return forecast_from_probs(probs.value(), ep, cfg);
}

inline BinnedForecast forward_2d(const Episode& ep, const ModelParams& params, const ModelConfig& cfg) {
    BoundModel m = bind_model(params, nullptr, false);
    Tensor logits = model_logits(ep, m, ModelMode::TwoD);
    Tensor probs = softmax(logits, -1);
    return forecast_from_probs(probs.value(), ep, cfg);
}

struct PointQuantiles {
    std::vector<double> point;                   // length H, denormalized
    std::vector<std::vector<double>> quantiles;  // one length-H row per level, denormalized
};

inline PointQuantiles point_and_quantiles(const BinnedForecast& f, const std::vector<double>& levels) {
    check<ContractError>(!levels.empty(), "point_and_quantiles: no levels");
    for (size_t i = 0; i < levels.size(); ++i) {
        check<ContractError>(levels[i] > 0.0 && levels[i] < 1.0, "point_and_quantiles: level outside (0,1)");
        if (i) check<ContractError>(levels[i] > levels[i - 1], "point_and_quantiles: levels must increase");
    }
    PointQuantiles out;
    out.point.resize(f.horizon);
    out.quantiles.assign(levels.size(), std::vector<double>(f.horizon));
    for (int t = 0; t < f.horizon; ++t) {
        auto p = f.row(t);
        double mean = 0.0;
        for (int i = 0; i < f.bins; ++i) mean += p[i] * f.bin_center(i);
        out.point[t] = f.stats.denormalize(mean);
        double cdf = 0.0;
        size_t q = 0;
        for (int i = 0; i < f.bins && q < levels.size(); ++i) {
            cdf += p[i];
            while (q < levels.size() && cdf >= levels[q] - 1e-15) {
                out.quantiles[q][t] = f.stats.denormalize(f.bin_center(i));
                ++q;
            }
        }
        for (; q < levels.size(); ++q) out.quantiles[q][t] = f.stats.denormalize(f.bin_center(f.bins - 1));
    }
    return out;
}

// Softmaxed attention rows at (layer, axis) for the target slice; one row per
// head. Axis 0 queries variable slots at the last patch, axis 1 queries
// patches of the target variable, axis 2 queries context slices.
inline std::vector<std::vector<double>> dump_attention(const Episode& ep, const ModelParams& params,
                                                       const ModelConfig& cfg, int layer, int axis,
                                                       int query_position) {
    check<ContractError>(layer >= 0 && layer < cfg.blocks, "dump_attention: layer out of range");
    check<ContractError>(axis >= 0 && axis <= 2, "dump_attention: axis out of range (0=var,1=temporal,2=context)");
    AttnCapture cap;
    cap.layer = layer;
    cap.axis = axis;
    forward(ep, params, cfg, &cap);
    const int rows_total = ep.T + ep.H;
    const int s_count = cfg.mode == ModelMode::TwoD ? 1 : patch_count(rows_total, cfg.patch_len);
    const int n_v = ep.M + 1, n_c = ep.C + 1;
    int b = 0, q = 0;
    if (axis == 0) {  // variable axis at (c=target, s=last patch)
        check<ContractError>(query_position >= 0 && query_position < n_v, "dump_attention: query out of range");
        b = (n_c - 1) * s_count + (s_count - 1);
        q = query_position;
    } else if (axis == 1) {  // temporal axis at (c=target, v=target)
        check<ContractError>(query_position >= 0 && query_position < s_count, "dump_attention: query out of range");
        b = (n_c - 1) * n_v + (n_v - 1);
        q = query_position;
    } else {  // context axis at (s=last patch, v=target)
        check<ContractError>(query_position >= 0 && query_position < n_c, "dump_attention: query out of range");
        b = (s_count - 1) * n_v + (n_v - 1);
        q = query_position;
    }
    std::vector<std::vector<double>> out(cfg.n_heads);
    const int len = cap.len;
    for (int h = 0; h < cfg.n_heads; ++h) {
        const int64_t off = ((static_cast<int64_t>(b) * cfg.n_heads + h) * len + q) * len;
        out[h].assign(cap.weights.begin() + off, cap.weights.begin() + off + len);
    }
    return out;
}

// ---------------------------------------------------------------------------
// checkpoint io

inline void save_model(const ModelParams& params, const std::string& path, bool f32 = false) {
    nlohmann::json config;
    config["kind"] = "model";
    config["model"] = params.config().to_json();
    std::vector<ArrayRecord> records;
    for (const ParamArray& a : params.arrays()) records.push_back({a.name, a.shape, f32, a.data});
    write_container(path, config, records);
}

inline std::pair<ModelConfig, ModelParams> load_model(const std::string& path) {
    Container c = read_container(path);
    check<FormatError>(c.config.contains("model"), "checkpoint: missing model config block");
    ModelConfig cfg = ModelConfig::from_json(c.config["model"]);
    return {cfg, ModelParams::from_records(cfg, c.records)};
}

}  // namespace bgts
