// Adaptive inference: 2D/3D modes, stochastic perturbation ensemble,
// rolling-validation configuration selection, forecast assembly.
#pragma once

#include <ctime>
#include <vector>

#include "bgts/datagen.hpp"
#include "bgts/metrics.hpp"
#include "bgts/model.hpp"
#include "bgts/retrieval.hpp"

namespace bgts {

enum class InfMode { TwoD, ThreeD, Ensemble2D3D };
enum class ContextSource { RetrievalY, RetrievalX, RetrievalXY, Uniform };
enum class FeaturePolicy { None, RunningIndex, BlankColumn, Calendar };

inline std::string to_string(InfMode m) {
    switch (m) {
        case InfMode::TwoD: return "2d";
        case InfMode::ThreeD: return "3d";
        default: return "ensemble";
    }
}
inline InfMode inf_mode_from_string(const std::string& s) {
    if (s == "2d") return InfMode::TwoD;
    if (s == "3d") return InfMode::ThreeD;
    if (s == "ensemble") return InfMode::Ensemble2D3D;
    throw ConfigError("unknown inference mode '" + s + "' (expected 2d, 3d, or ensemble)");
}

inline std::string to_string(ContextSource s) {
    switch (s) {
        case ContextSource::RetrievalY: return "y";
        case ContextSource::RetrievalX: return "x";
        case ContextSource::RetrievalXY: return "xy";
        default: return "uniform";
    }
}
inline ContextSource context_source_from_string(const std::string& s) {
    if (s == "uniform") return ContextSource::Uniform;
    return static_cast<ContextSource>(static_cast<int>(space_from_string(s)));
}

inline std::string to_string(FeaturePolicy p) {
    switch (p) {
        case FeaturePolicy::None: return "none";
        case FeaturePolicy::RunningIndex: return "running_index";
        case FeaturePolicy::BlankColumn: return "blank_column";
        default: return "calendar";
    }
}
inline FeaturePolicy feature_policy_from_string(const std::string& s) {
    if (s == "none") return FeaturePolicy::None;
    if (s == "running_index") return FeaturePolicy::RunningIndex;
    if (s == "blank_column") return FeaturePolicy::BlankColumn;
    if (s == "calendar") return FeaturePolicy::Calendar;
    throw ConfigError("unknown feature policy '" + s + "'");
}

struct InferenceConfig {
    InfMode mode = InfMode::ThreeD;
    int c_mult = 4;  // lookback = c_mult * horizon, in [2,14]
    FeaturePolicy feature_policy = FeaturePolicy::None;
    bool revin = false;
    int n_passes = 1;               // 2-4 for the stochastic ensemble
    bool shuffle_covariates = false;
    double history_mask_frac = 0.0;  // 0.2 in the stochastic ensemble
    int k_ctx = 4;
    ContextSource source = ContextSource::RetrievalY;

    void validate() const {
        check<ConfigError>(c_mult >= 2 && c_mult <= 14, "inference config: c_mult outside [2,14]");
        check<ConfigError>(n_passes >= 1 && n_passes <= 4, "inference config: n_passes outside [1,4]");
        check<ConfigError>(history_mask_frac >= 0.0 && history_mask_frac <= 1.0,
                           "inference config: history_mask_frac outside [0,1]");
        check<ConfigError>(k_ctx >= 0, "inference config: negative k_ctx");
    }

    nlohmann::json to_json() const {
        return {{"mode", to_string(mode)},
                {"c_mult", c_mult},
                {"feature_policy", to_string(feature_policy)},
                {"revin", revin},
                {"n_passes", n_passes},
                {"shuffle_covariates", shuffle_covariates},
                {"history_mask_frac", history_mask_frac},
                {"k_ctx", k_ctx},
                {"source", to_string(source)}};
    }

    static InferenceConfig from_json(const nlohmann::json& j) {
        InferenceConfig c;
        c.mode = inf_mode_from_string(j.value("mode", std::string("3d")));
        c.c_mult = j.value("c_mult", c.c_mult);
        c.feature_policy = feature_policy_from_string(j.value("feature_policy", std::string("none")));
        c.revin = j.value("revin", c.revin);
        c.n_passes = j.value("n_passes", c.n_passes);
        c.shuffle_covariates = j.value("shuffle_covariates", c.shuffle_covariates);
        c.history_mask_frac = j.value("history_mask_frac", c.history_mask_frac);
        c.k_ctx = j.value("k_ctx", c.k_ctx);
        c.source = context_source_from_string(j.value("source", std::string("y")));
        c.validate();
        return c;
    }
};

// Default candidate grid for rolling-validation selection.
inline std::vector<InferenceConfig> default_candidates() {
    std::vector<InferenceConfig> out;
    for (InfMode mode : {InfMode::ThreeD, InfMode::TwoD, InfMode::Ensemble2D3D})
        for (int c_mult : {2, 4, 8}) {
            InferenceConfig c;
            c.mode = mode;
            c.c_mult = c_mult;
            out.push_back(c);
        }
    return out;
}

// ---------------------------------------------------------------------------
// feature policies

inline SeriesRecord apply_feature_policy(const SeriesRecord& rec, FeaturePolicy policy) {
    switch (policy) {
        case FeaturePolicy::None:
            return rec;
        case FeaturePolicy::RunningIndex:
            return add_time_index(rec);
        case FeaturePolicy::BlankColumn: {
            SeriesRecord out = rec;
            out.covariate_names.push_back("blank");
            out.known_future_cols.push_back(static_cast<int>(out.covariates.size()));
            out.covariates.emplace_back(rec.length(), 0.0);
            return out;
        }
        case FeaturePolicy::Calendar: {
            SeriesRecord out = rec;
            const char* names[4] = {"cal_year", "cal_month", "cal_day", "cal_hour"};
            std::vector<std::vector<double>> cols(4, std::vector<double>(rec.length()));
            for (int64_t t = 0; t < rec.length(); ++t) {
                const time_t ts = static_cast<time_t>(rec.timestamps[t]);
                std::tm tm{};
                gmtime_r(&ts, &tm);
                cols[0][t] = tm.tm_year + 1900;
                cols[1][t] = tm.tm_mon + 1;
                cols[2][t] = tm.tm_mday;
                cols[3][t] = tm.tm_hour;
            }
            for (int i = 0; i < 4; ++i) {
                out.covariate_names.push_back(names[i]);
                out.known_future_cols.push_back(static_cast<int>(out.covariates.size()));
                out.covariates.push_back(std::move(cols[i]));
            }
            return out;
        }
    }
    return rec;
}

// ---------------------------------------------------------------------------
// episode perturbations

inline void shuffle_episode_covariates(Episode& ep, Rng& rng) {
    if (ep.M < 2) return;
    std::vector<int> perm(ep.M);
    for (int i = 0; i < ep.M; ++i) perm[i] = i;
    rng.shuffle(perm);
    const int rows = ep.T + ep.H;
    for (EpisodeSlice& slice : ep.slices) {
        std::vector<double> values = slice.values;
        std::vector<NormStats> stats = slice.cov_stats;
        for (int m = 0; m < ep.M; ++m) {
            auto src = std::span(values).subspan(static_cast<size_t>(perm[m]) * rows, rows);
            std::copy(src.begin(), src.end(), slice.channel(m, rows).begin());
            slice.cov_stats[m] = stats[perm[m]];
        }
    }
    std::vector<int> ids = ep.column_ids;
    for (int m = 0; m < ep.M; ++m) ep.column_ids[m] = ids[perm[m]];
}

// Masks round(frac*T) history positions of the query's target channel; the
// model sees them through the tokenizer's mask channel rather than as zeros.
inline void mask_history(Episode& ep, double frac, Rng& rng) {
    const int n_mask = static_cast<int>(std::lround(frac * ep.T));
    if (n_mask <= 0) return;
    EpisodeSlice& target = ep.target_slice();
    auto tch = target.channel(ep.M, ep.T + ep.H);
    for (int pos : rng.sample_without_replacement(ep.T, n_mask)) {
        tch[pos] = 0.0;
        target.target_mask[pos] = 1;
    }
}

// ---------------------------------------------------------------------------
// forward passes

// One perturbed forward pass in the requested 2D/3D mode. With shuffling off
// and mask fraction zero this is exactly the plain forward.
inline BinnedForecast stochastic_pass(const Episode& ep, const ModelParams& params, const ModelConfig& mcfg,
                                      ModelMode mode, const InferenceConfig& icfg, Rng& rng) {
    const Episode* input = &ep;
    Episode perturbed;
    if (icfg.shuffle_covariates || icfg.history_mask_frac > 0.0) {
        perturbed = ep;
        if (icfg.shuffle_covariates) shuffle_episode_covariates(perturbed, rng);
        if (icfg.history_mask_frac > 0.0) mask_history(perturbed, icfg.history_mask_frac, rng);
        input = &perturbed;
    }
    BoundModel m = bind_model(params, nullptr, false);
    Tensor logits = model_logits(*input, m, mode);
    Tensor probs = softmax(logits, -1);
    return forecast_from_probs(probs.value(), ep, mcfg);
}

// Mean of n_passes stochastic passes; stays a valid distribution per step.
inline BinnedForecast mode_forecast(const Episode& ep, const ModelParams& params, const ModelConfig& mcfg,
                                    ModelMode mode, const InferenceConfig& icfg, Rng& rng) {
    check<ContractError>(icfg.n_passes >= 1, "mode_forecast: n_passes must be >= 1");
    BinnedForecast acc = stochastic_pass(ep, params, mcfg, mode, icfg, rng);
    for (int p = 1; p < icfg.n_passes; ++p) {
        BinnedForecast f = stochastic_pass(ep, params, mcfg, mode, icfg, rng);
        for (size_t i = 0; i < acc.probs.size(); ++i) acc.probs[i] += f.probs[i];
    }
    const double inv = 1.0 / icfg.n_passes;
    for (double& v : acc.probs) v *= inv;
    return acc;
}

// Elementwise mean of the 2D-mode and 3D-mode probability matrices.
inline BinnedForecast ensemble_2d3d(const Episode& ep, const ModelParams& params, const ModelConfig& mcfg,
                                    const InferenceConfig& icfg, Rng& rng) {
    BinnedForecast f2 = mode_forecast(ep, params, mcfg, ModelMode::TwoD, icfg, rng);
    BinnedForecast f3 = mode_forecast(ep, params, mcfg, ModelMode::ThreeD, icfg, rng);
    for (size_t i = 0; i < f2.probs.size(); ++i) f2.probs[i] = 0.5 * (f2.probs[i] + f3.probs[i]);
    return f2;
}

inline BinnedForecast run_config(const Episode& ep, const ModelParams& params, const ModelConfig& mcfg,
                                 const InferenceConfig& icfg, Rng& rng) {
    switch (icfg.mode) {
        case InfMode::TwoD: return mode_forecast(ep, params, mcfg, ModelMode::TwoD, icfg, rng);
        case InfMode::ThreeD: return mode_forecast(ep, params, mcfg, ModelMode::ThreeD, icfg, rng);
        default: return ensemble_2d3d(ep, params, mcfg, icfg, rng);
    }
}

// ---------------------------------------------------------------------------
// episode construction for a record's held-out tail

struct PreparedEpisode {
    Episode episode;
    bool short_supply = false;
    bool no_contexts = false;
    int lookback = 0;
};

// Builds the inference episode whose target window is the last T+H rows of
// the record. Falls back to a context-free episode when the history cannot
// host a retrieval index.
inline PreparedEpisode prepare_episode(const SeriesRecord& record, const ModelConfig& mcfg,
                                       const InferenceConfig& icfg, int horizon) {
    icfg.validate();
    check<ConfigError>(horizon >= 1, "prepare_episode: horizon must be >= 1");
    const SeriesRecord rec = apply_feature_policy(record, icfg.feature_policy);
    int T = icfg.c_mult * horizon;
    if (icfg.mode != InfMode::ThreeD) T = std::min(T, mcfg.wide_len() - horizon);
    T = std::min<int>(T, static_cast<int>(rec.length()) - horizon);
    T = std::max(T, 2);
    check<DataError>(rec.length() >= T + horizon, "prepare_episode: series '" + rec.item_id +
                                                      "' too short for lookback " + std::to_string(T) +
                                                      " + horizon " + std::to_string(horizon));
    if (icfg.mode != InfMode::ThreeD)
        check<ConfigError>(T + horizon <= mcfg.wide_len(),
                           "prepare_episode: window exceeds the 2D-mode capacity");
    const int64_t target_start = rec.length() - T - horizon;
    Instance target = make_instance(rec, target_start, T, horizon, true);

    PreparedEpisode out;
    out.lookback = T;
    std::vector<Instance> contexts;
    if (icfg.k_ctx > 0) {
        try {
            if (icfg.source == ContextSource::Uniform) {
                contexts = uniform_contexts(rec, T, horizon, icfg.k_ctx);
            } else {
                const SpaceMode space = static_cast<SpaceMode>(static_cast<int>(icfg.source));
                RetrievalIndex index = RetrievalIndex::build(rec, T, horizon, space);
                auto res = index.query_at(target_start, icfg.k_ctx);
                out.short_supply = res.short_supply;
                contexts = std::move(res.instances);
            }
        } catch (const DataError&) {
            out.no_contexts = true;  // degenerate single-slice episode
        }
    }
    out.episode = build_episode(target, contexts, EpisodeMode::Infer,
                                icfg.revin ? NormScheme::SharedTarget : NormScheme::PerSlice);
    return out;
}

// ---------------------------------------------------------------------------
// cross-config combination

// Reassigns the probability mass of `src` onto the bin grid of `ref` in raw
// units (bins treated uniform within their width). Needed because configs
// with different lookbacks normalize on different stats.
inline std::vector<double> remap_probs_to_frame(const BinnedForecast& src, const BinnedForecast& ref) {
    if (src.stats.mean == ref.stats.mean && src.stats.std == ref.stats.std) return src.probs;
    std::vector<double> out(ref.probs.size(), 0.0);
    const double ref_w = (ref.value_hi - ref.value_lo) / ref.bins;
    const double src_w = (src.value_hi - src.value_lo) / src.bins;
    const int k = ref.bins;
    for (int t = 0; t < src.horizon; ++t) {
        auto p = src.row(t);
        double* orow = out.data() + static_cast<size_t>(t) * k;
        for (int i = 0; i < src.bins; ++i) {
            if (p[i] == 0.0) continue;
            // source bin edges in raw units, then in the reference's frame,
            // in units of reference bin indices
            const double raw_lo = src.stats.denormalize(src.value_lo + i * src_w);
            const double raw_hi = src.stats.denormalize(src.value_lo + (i + 1) * src_w);
            double a = (ref.stats.normalize(raw_lo) - ref.value_lo) / ref_w;
            double b = (ref.stats.normalize(raw_hi) - ref.value_lo) / ref_w;
            if (a > b) std::swap(a, b);
            if (b - a < 1e-12) {  // degenerate width: point mass at the midpoint
                orow[std::clamp(static_cast<int>(std::floor(0.5 * (a + b))), 0, k - 1)] += p[i];
                continue;
            }
            const double inv_span = 1.0 / (b - a);
            if (a < 0.0) orow[0] += p[i] * (std::min(b, 0.0) - a) * inv_span;  // clamp below range
            if (b > k) orow[k - 1] += p[i] * (b - std::max(a, static_cast<double>(k))) * inv_span;  // clamp above
            const double lo_clip = std::max(a, 0.0), hi_clip = std::min(b, static_cast<double>(k));
            for (int j = std::max(0, static_cast<int>(std::floor(lo_clip))); j < k; ++j) {
                const double lo = std::max(lo_clip, static_cast<double>(j));
                const double hi = std::min(hi_clip, static_cast<double>(j + 1));
                if (hi <= lo) break;
                orow[j] += p[i] * (hi - lo) * inv_span;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// rolling-validation selection

struct EnsembleSelection {
    std::vector<InferenceConfig> chosen;       // sorted by validation SQL
    std::vector<double> validation_sql;        // aligned with chosen
    bool fallback = false;                     // all candidates failed
    bool degenerate = false;                   // fewer than 2 usable candidates

    nlohmann::json to_json() const {
        auto arr = nlohmann::json::array();
        for (size_t i = 0; i < chosen.size(); ++i)
            arr.push_back({{"config", chosen[i].to_json()}, {"validation_sql", validation_sql[i]}});
        return {{"chosen", arr}, {"fallback", fallback}, {"degenerate", degenerate}};
    }
};

inline SeriesRecord truncate_record(const SeriesRecord& rec, int64_t n) {
    check<ContractError>(n >= 1 && n <= rec.length(), "truncate_record: bad length");
    SeriesRecord out = rec;
    out.timestamps.resize(n);
    out.target.resize(n);
    for (auto& col : out.covariates) col.resize(n);
    return out;
}

// Scores every candidate on validation windows rolled back by the given
// offsets and keeps the best 2..9 of them.
inline EnsembleSelection select_configs(const SeriesRecord& record, const ModelParams& params,
                                        const ModelConfig& mcfg, const std::vector<InferenceConfig>& candidates,
                                        int horizon, Rng& rng, const std::vector<int>& offsets = {2, 5},
                                        int seasonality = 1) {
    check<ContractError>(!candidates.empty(), "select_configs: no candidates");
    struct Scored {
        double sql;
        size_t idx;
    };
    std::vector<Scored> scored;
    for (size_t ci = 0; ci < candidates.size(); ++ci) {
        Rng crng = rng.split("candidate").split(static_cast<uint64_t>(ci));
        double total = 0.0;
        int n_ok = 0;
        for (int off : offsets) {
            if (record.length() < off + 2 * horizon + mcfg.patch_len) continue;
            try {
                const SeriesRecord trunc = truncate_record(record, record.length() - off);
                PreparedEpisode prep = prepare_episode(trunc, mcfg, candidates[ci], horizon);
                BinnedForecast f = run_config(prep.episode, params, mcfg, candidates[ci], crng);
                PointQuantiles pq = point_and_quantiles(f, default_quantile_levels());
                const int64_t n = trunc.length();
                std::vector<double> truth(trunc.target.end() - horizon, trunc.target.end());
                std::vector<double> history(trunc.target.begin(), trunc.target.end() - horizon);
                auto ql = quantile_losses(truth, pq.quantiles, default_quantile_levels(), history, seasonality);
                (void)n;
                if (ql.sql) {
                    total += *ql.sql;
                    n_ok++;
                }
            } catch (const DataError&) {
                // offset unusable for this candidate; skip
            }
        }
        if (n_ok > 0) scored.push_back({total / n_ok, ci});
    }
    EnsembleSelection sel;
    if (scored.empty()) {
        sel.fallback = true;
        sel.degenerate = true;
        InferenceConfig fallback;
        fallback.k_ctx = 0;
        sel.chosen.push_back(fallback);
        sel.validation_sql.push_back(std::nan(""));
        return sel;
    }
    std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
        if (a.sql != b.sql) return a.sql < b.sql;
        return a.idx < b.idx;
    });
    const size_t n_take = std::min<size_t>(scored.size(), 9);
    sel.degenerate = n_take < 2;
    for (size_t i = 0; i < n_take; ++i) {
        sel.chosen.push_back(candidates[scored[i].idx]);
        sel.validation_sql.push_back(scored[i].sql);
    }
    return sel;
}

// ---------------------------------------------------------------------------
// final forecast

struct ForecastResult {
    BinnedForecast combined;
    PointQuantiles pq;
    bool short_supply = false;
    bool no_contexts = false;
};

// Runs every selected config on the record's held-out tail and averages the
// probability matrices uniformly (remapped into the first config's frame).
inline ForecastResult forecast(const SeriesRecord& record, const ModelParams& params, const ModelConfig& mcfg,
                               const EnsembleSelection& selection, int horizon, Rng& rng) {
    check<ContractError>(!selection.chosen.empty(), "forecast: empty selection");
    ForecastResult out;
    BinnedForecast ref;
    std::vector<double> acc;
    int n = 0;
    for (size_t i = 0; i < selection.chosen.size(); ++i) {
        Rng crng = rng.split("forecast").split(static_cast<uint64_t>(i));
        PreparedEpisode prep = prepare_episode(record, mcfg, selection.chosen[i], horizon);
        out.short_supply = out.short_supply || prep.short_supply;
        out.no_contexts = out.no_contexts || prep.no_contexts;
        BinnedForecast f = run_config(prep.episode, params, mcfg, selection.chosen[i], crng);
        if (n == 0) {
            ref = f;
            acc = f.probs;
        } else {
            const std::vector<double> mapped = remap_probs_to_frame(f, ref);
            for (size_t j = 0; j < acc.size(); ++j) acc[j] += mapped[j];
        }
        ++n;
    }
    const double inv = 1.0 / n;
    for (double& v : acc) v *= inv;
    ref.probs = std::move(acc);
    out.combined = ref;
    out.pq = point_and_quantiles(out.combined, default_quantile_levels());
    return out;
}

}  // namespace bgts
