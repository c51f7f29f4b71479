// Episode sampling, context-overfitting augmentation, and the CRPS training
// loop with resumable checkpoints.
#pragma once

#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "bgts/loss.hpp"
#include "bgts/model.hpp"
#include "bgts/retrieval.hpp"

namespace bgts {

struct TrainingDivergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IntRange {
    int lo = 0, hi = 0;
    int sample(Rng& rng) const { return static_cast<int>(rng.uniform_int(lo, hi)); }
};

struct TrainConfig {
    int64_t steps = 1000;
    int batch_size = 2;
    double lr = 3e-4;  // cosine-decayed to zero
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    double clip_norm = 1.0;
    double p_overfit = 0.2;       // context-overfitting probability per episode
    double p_2d = 0.25;           // fraction of batches trained in 2D mode
    int designated_targets = 1;   // target designations per sampled slice pool
    IntRange c_range{2, 4};       // contexts per episode
    IntRange t_range{96, 192};
    IntRange h_range{24, 48};
    IntRange m_range{0, 2};       // covariate columns per batch
    uint64_t seed = 1;

    void validate() const {
        check<ConfigError>(steps >= 1 && batch_size >= 1, "train config: degenerate steps/batch");
        check<ConfigError>(p_overfit >= 0.0 && p_overfit <= 1.0, "train config: p_overfit outside [0,1]");
        check<ConfigError>(p_2d >= 0.0 && p_2d <= 1.0, "train config: p_2d outside [0,1]");
        check<ConfigError>(designated_targets >= 1, "train config: designated_targets must be >= 1");
        check<ConfigError>(c_range.lo >= 0 && c_range.hi >= c_range.lo && c_range.hi <= kMaxContexts,
                           "train config: context range outside [0," + std::to_string(kMaxContexts) + "]");
        check<ConfigError>(t_range.lo >= 1 && t_range.hi >= t_range.lo && t_range.hi <= kMaxLookback,
                           "train config: lookback range invalid");
        check<ConfigError>(h_range.lo >= 1 && h_range.hi >= h_range.lo && h_range.hi <= kMaxHorizon,
                           "train config: horizon range invalid");
        check<ConfigError>(m_range.lo >= 0 && m_range.hi >= m_range.lo && m_range.hi <= kMaxCovariates,
                           "train config: covariate range invalid");
        check<ConfigError>(lr > 0.0 && clip_norm > 0.0, "train config: lr/clip must be positive");
    }

    nlohmann::json to_json() const {
        return {{"steps", steps},
                {"batch_size", batch_size},
                {"lr", lr},
                {"beta1", beta1},
                {"beta2", beta2},
                {"adam_eps", adam_eps},
                {"clip_norm", clip_norm},
                {"p_overfit", p_overfit},
                {"p_2d", p_2d},
                {"designated_targets", designated_targets},
                {"c_range", {c_range.lo, c_range.hi}},
                {"t_range", {t_range.lo, t_range.hi}},
                {"h_range", {h_range.lo, h_range.hi}},
                {"m_range", {m_range.lo, m_range.hi}},
                {"seed", seed}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        c.steps = j.value("steps", c.steps);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.lr = j.value("lr", c.lr);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.adam_eps = j.value("adam_eps", c.adam_eps);
        c.clip_norm = j.value("clip_norm", c.clip_norm);
        c.p_overfit = j.value("p_overfit", c.p_overfit);
        c.p_2d = j.value("p_2d", c.p_2d);
        c.designated_targets = j.value("designated_targets", c.designated_targets);
        auto range = [&](const char* key, IntRange def) {
            if (!j.contains(key)) return def;
            return IntRange{j[key][0], j[key][1]};
        };
        c.c_range = range("c_range", c.c_range);
        c.t_range = range("t_range", c.t_range);
        c.h_range = range("h_range", c.h_range);
        c.m_range = range("m_range", c.m_range);
        c.seed = j.value("seed", c.seed);
        c.validate();
        return c;
    }
};

// ---------------------------------------------------------------------------
// index cache (indexes are rebuildable; not part of the训 state)

class IndexCache {
  public:
    explicit IndexCache(size_t capacity = 16) : capacity_(capacity) {}

    const RetrievalIndex& get(const SeriesRecord& rec, size_t rec_id, int T, int H, SpaceMode space) {
        const Key key{rec_id, T, H, space};
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        if (cache_.size() >= capacity_ && !fifo_.empty()) {
            cache_.erase(fifo_.front());
            fifo_.pop_front();
        }
        auto [ins, ok] = cache_.emplace(key, RetrievalIndex::build(rec, T, H, space));
        fifo_.push_back(key);
        return ins->second;
    }

  private:
    struct Key {
        size_t rec;
        int t, h;
        SpaceMode space;
        bool operator<(const Key& o) const {
            return std::tie(rec, t, h, space) < std::tie(o.rec, o.t, o.h, o.space);
        }
    };
    size_t capacity_;
    std::map<Key, RetrievalIndex> cache_;
    std::deque<Key> fifo_;
};

// ---------------------------------------------------------------------------
// batch assembly

struct TrainBatch {
    std::vector<Episode> episodes;
    ModelMode mode = ModelMode::ThreeD;
    double overfit_fraction = 0.0;
    int skipped = 0;  // episodes dropped for retrieval short supply
};

// Copies a verbatim tail segment from one context slice into the query's
// lookback and redirects supervision to that context's future. No-op with
// probability 1-p_overfit or when the episode has no contexts.
inline void apply_context_overfit(Episode& ep, Rng& rng, const TrainConfig& cfg, int patch_len) {
    if (ep.C < 1) return;
    if (!rng.bernoulli(cfg.p_overfit)) return;
    const int rows = ep.T + ep.H;
    const int j = static_cast<int>(rng.uniform_int(0, ep.C - 1));
    const int max_len = std::max(patch_len, ep.T / 4);
    const int seg = static_cast<int>(std::min<int64_t>(rng.uniform_int(patch_len, max_len), ep.T));
    EpisodeSlice& source = ep.slices[j];
    EpisodeSlice& target = ep.target_slice();
    auto src = source.channel(ep.M, rows);
    auto dst = target.channel(ep.M, rows);
    for (int t = ep.T - seg; t < ep.T; ++t) {
        dst[t] = src[t];
        target.target_mask[t] = source.target_mask[t];
    }
    for (int t = 0; t < ep.H; ++t) ep.supervision[t] = src[ep.T + t];
    ep.overfit_marked = true;
}

// Draws (C,T,H,M) for the batch, assembles retrieval-based episodes in train
// mode. Deterministic under the supplied rng.
inline TrainBatch sample_batch(const std::vector<SeriesRecord>& records, IndexCache& cache,
                               const TrainConfig& cfg, const ModelConfig& mcfg, Rng& rng) {
    check<ContractError>(!records.empty(), "sample_batch: no records");
    TrainBatch batch;
    batch.mode = rng.bernoulli(cfg.p_2d) ? ModelMode::TwoD : ModelMode::ThreeD;
    const int c_draw = cfg.c_range.sample(rng);
    int t_draw = cfg.t_range.sample(rng);
    int h_draw = cfg.h_range.sample(rng);
    if (batch.mode == ModelMode::TwoD) {
        h_draw = std::min(h_draw, mcfg.h_max);
        t_draw = std::min(t_draw, mcfg.wide_len() - h_draw);
    }
    const int m_draw = cfg.m_range.sample(rng);

    int n_overfit = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
        const size_t rec_id = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(records.size()) - 1));
        const SeriesRecord& rec = records[rec_id];
        int T = t_draw, H = h_draw;
        // shrink the window when the record cannot host an index at (T,H)
        if (rec.length() < 2 * (T + H)) {
            H = std::min<int>(H, std::max<int>(1, static_cast<int>(rec.length() / 8)));
            T = std::max<int>(mcfg.patch_len, static_cast<int>(rec.length() / 2) - H);
        }
        if (rec.length() < 2 * (T + H)) {
            batch.skipped++;
            continue;
        }
        const int m_take = std::min<int>(m_draw, rec.num_covariates());
        std::vector<int> cols = rng.sample_without_replacement(rec.num_covariates(), m_take);
        std::sort(cols.begin(), cols.end());

        const RetrievalIndex& index = cache.get(rec, rec_id, T, H, SpaceMode::Y);
        const int64_t ref = rng.uniform_int(0, rec.length() - T - H);
        const int k_ctx = c_draw + 1;
        TrainingPool pool = training_pool(index, ref, k_ctx, rng);

        std::vector<int64_t> slice_starts = pool.context_starts;
        slice_starts.push_back(pool.target_start);
        const int n_slices = static_cast<int>(slice_starts.size());
        const int n_designate = std::min(cfg.designated_targets, n_slices);
        // each designation yields one episode over the same slice pool
        std::vector<int> designated(n_slices);
        for (int i = 0; i < n_slices; ++i) designated[i] = i;
        if (n_designate < n_slices) {
            // the pool's own target is one designation; extras come from the contexts
            designated = rng.sample_without_replacement(n_slices - 1, n_designate - 1);
            designated.push_back(n_slices - 1);
        }
        for (int d = 0; d < n_designate; ++d) {
            const int tgt = designated[d];
            std::vector<Instance> contexts;
            for (int i = 0; i < n_slices; ++i)
                if (i != tgt) contexts.push_back(make_instance(rec, slice_starts[i], T, H, true, &cols));
            Instance target = make_instance(rec, slice_starts[tgt], T, H, true, &cols);
            Episode ep = build_episode(target, contexts, EpisodeMode::Train);
            for (size_t m = 0; m < cols.size(); ++m) ep.column_ids[m] = cols[m] + 1;
            apply_context_overfit(ep, rng, cfg, mcfg.patch_len);
            if (ep.overfit_marked) n_overfit++;
            batch.episodes.push_back(std::move(ep));
        }
    }
    if (!batch.episodes.empty())
        batch.overfit_fraction = static_cast<double>(n_overfit) / static_cast<double>(batch.episodes.size());
    return batch;
}

// ---------------------------------------------------------------------------
// optimizer state and steps

struct TrainState {
    int64_t step = 0;
    ModelParams params;
    std::vector<std::vector<double>> adam_m, adam_v;  // per array
    Rng rng;
    TrainConfig config;
    std::deque<double> loss_history;  // last 100 accepted losses

    static TrainState init(const ModelConfig& mcfg, const TrainConfig& tcfg) {
        tcfg.validate();
        TrainState s;
        s.config = tcfg;
        s.rng = Rng(tcfg.seed);
        s.params = ModelParams::init(mcfg, Rng(tcfg.seed).split("model"));
        for (const ParamArray& a : s.params.arrays()) {
            s.adam_m.emplace_back(a.data.size(), 0.0);
            s.adam_v.emplace_back(a.data.size(), 0.0);
        }
        return s;
    }

    void push_loss(double loss) {
        loss_history.push_back(loss);
        if (loss_history.size() > 100) loss_history.pop_front();
    }
};

struct StepStats {
    double loss = 0.0;
    double grad_norm = 0.0;
    double lr = 0.0;
};

inline double cosine_lr(double base, int64_t step, int64_t total) {
    const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(std::max<int64_t>(total, 1)));
    return base * 0.5 * (1.0 + std::cos(M_PI * t));
}

// Forward all episodes, mean CRPS over designated-target horizon steps,
// backward, clip, Adam. Throws TrainingDivergence (state untouched) on a
// non-finite loss.
inline StepStats train_step(TrainState& state, const TrainBatch& batch, const ModelConfig& mcfg) {
    check<ContractError>(!batch.episodes.empty(), "train_step: empty batch");
    Graph g;
    BoundModel bound = bind_model(state.params, &g, true);
    const std::vector<double> centers = bin_centers(mcfg);
    Tensor total;
    for (const Episode& ep : batch.episodes) {
        check<ContractError>(!ep.supervision.empty(), "train_step: episode lacks supervision");
        Tensor logits = model_logits(ep, bound, batch.mode);
        Tensor probs = softmax(logits, -1);
        Tensor ep_loss = reduce_mean(crps_rows(probs, ep.supervision, centers));
        total = total.defined() ? add(total, ep_loss) : ep_loss;
    }
    Tensor loss = scale(total, 1.0 / static_cast<double>(batch.episodes.size()));
    const double loss_value = loss.item();
    if (!std::isfinite(loss_value)) {
        uint64_t fp = 0xcbf29ce484222325ull;
        for (const Episode& ep : batch.episodes)
            fp = fnv1a64(ep.supervision.data(), ep.supervision.size() * sizeof(double), fp);
        throw TrainingDivergence("train_step: non-finite loss at step " + std::to_string(state.step) +
                                 " (batch fingerprint " + hex64(fp) + ")");
    }
    g.backward(loss);

    double sq_norm = 0.0;
    for (const Tensor& leaf : bound.leaves)
        for (double gv : leaf.grad()) sq_norm += gv * gv;
    const double norm = std::sqrt(sq_norm);
    if (!std::isfinite(norm))
        throw TrainingDivergence("train_step: non-finite gradient norm at step " + std::to_string(state.step));
    const double clip = norm > state.config.clip_norm ? state.config.clip_norm / (norm + 1e-12) : 1.0;

    const int64_t t = state.step + 1;
    const double lr = cosine_lr(state.config.lr, state.step, state.config.steps);
    const double bc1 = 1.0 - std::pow(state.config.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(state.config.beta2, static_cast<double>(t));
    auto& arrays = state.params.arrays();
    for (size_t a = 0; a < arrays.size(); ++a) {
        const auto& grad = bound.leaves[a].grad();
        auto& m = state.adam_m[a];
        auto& v = state.adam_v[a];
        auto& w = arrays[a].data;
        if (grad.empty()) continue;  // leaf untouched by this graph
        for (size_t i = 0; i < w.size(); ++i) {
            const double gi = grad[i] * clip;
            m[i] = state.config.beta1 * m[i] + (1.0 - state.config.beta1) * gi;
            v[i] = state.config.beta2 * v[i] + (1.0 - state.config.beta2) * gi * gi;
            const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + state.config.adam_eps);
            w[i] -= lr * update;
            check<ContractError>(std::isfinite(w[i]), "train_step: non-finite parameter after update");
        }
    }
    state.step = t;
    state.push_loss(loss_value);
    return {loss_value, norm, lr};
}

struct TrainLogRow {
    int64_t step;
    double loss;
    double grad_norm;
    double overfit_fraction;
    int64_t wall_ms;
};

// Runs until config.steps (or until run_until, when nonnegative, so a run can
// pause without disturbing the lr schedule's total). A non-finite-loss streak
// longer than 50 aborts with TrainingDivergence; isolated ones skip the step.
inline void train_loop(TrainState& state, const std::vector<SeriesRecord>& records, const ModelConfig& mcfg,
                       const std::function<void(const TrainLogRow&)>& log_sink = {}, int64_t run_until = -1) {
    IndexCache cache;
    int divergence_streak = 0;
    const int64_t stop = run_until >= 0 ? std::min(run_until, state.config.steps) : state.config.steps;
    while (state.step < stop) {
        const auto t0 = std::chrono::steady_clock::now();
        TrainBatch batch = sample_batch(records, cache, state.config, mcfg, state.rng);
        if (batch.episodes.empty()) continue;
        StepStats stats;
        try {
            stats = train_step(state, batch, mcfg);
            divergence_streak = 0;
        } catch (const TrainingDivergence&) {
            if (++divergence_streak > 50) throw;
            continue;
        }
        if (log_sink) {
            const auto wall =
                std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
            log_sink({state.step, stats.loss, stats.grad_norm, batch.overfit_fraction, wall.count()});
        }
    }
}

// ---------------------------------------------------------------------------
// checkpointing (f64 payloads so a restored run continues bit-identically)

inline void save_train_state(const TrainState& state, const ModelConfig& mcfg, const std::string& path) {
    nlohmann::json config;
    config["kind"] = "train_state";
    config["step"] = state.step;
    config["model"] = mcfg.to_json();
    config["train"] = state.config.to_json();
    config["rng_key"] = hex64(state.rng.key());
    config["rng_counter"] = hex64(state.rng.counter());
    config["loss_history"] = std::vector<double>(state.loss_history.begin(), state.loss_history.end());
    std::vector<ArrayRecord> records;
    const auto& arrays = state.params.arrays();
    for (const ParamArray& a : arrays) records.push_back({a.name, a.shape, false, a.data});
    for (size_t i = 0; i < arrays.size(); ++i) {
        records.push_back({"opt.m." + arrays[i].name, arrays[i].shape, false, state.adam_m[i]});
        records.push_back({"opt.v." + arrays[i].name, arrays[i].shape, false, state.adam_v[i]});
    }
    write_container(path, config, records);
}

inline std::pair<ModelConfig, TrainState> restore_train_state(const std::string& path) {
    Container c = read_container(path);
    check<FormatError>(c.config.value("kind", std::string()) == "train_state",
                       "checkpoint: " + path + " is not a training state");
    const ModelConfig mcfg = ModelConfig::from_json(c.config["model"]);
    TrainState s;
    s.config = TrainConfig::from_json(c.config["train"]);
    s.step = c.config["step"];
    s.params = ModelParams::from_records(mcfg, c.records);
    s.rng.restore(std::stoull(c.config["rng_key"].get<std::string>(), nullptr, 16),
                  std::stoull(c.config["rng_counter"].get<std::string>(), nullptr, 16));
    for (const double v : c.config["loss_history"].get<std::vector<double>>()) s.loss_history.push_back(v);
    for (const ParamArray& a : s.params.arrays()) {
        const ArrayRecord* m = c.find("opt.m." + a.name);
        const ArrayRecord* v = c.find("opt.v." + a.name);
        check<FormatError>(m && v, "checkpoint: missing optimizer moments for '" + a.name + "'");
        s.adam_m.push_back(m->data);
        s.adam_v.push_back(v->data);
    }
    return {mcfg, s};
}

}  // namespace bgts
