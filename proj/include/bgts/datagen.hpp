// Synthetic data: kernel-driven structural-causal tasks, periodic spike toy
// series, noise injection, concatenation augmentation, time-index feature.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bgts/data.hpp"
#include "bgts/rng.hpp"

namespace bgts {

// ---------------------------------------------------------------------------
// spike toy data: f(t) = exp(k * (sin(2*pi*t/50) - 1)), period 50

struct SpikeSpec {
    double sharpness = 5.0;  // k
    int length = 1000;

    void validate() const {
        check<ConfigError>(sharpness > 0.0, "spike: sharpness must be positive");
        check<ConfigError>(length >= 1, "spike: length must be >= 1");
    }
};

inline constexpr double kSpikePeriod = 50.0;

inline double spike_value(double t, double k) { return std::exp(k * (std::sin(2.0 * M_PI * t / kSpikePeriod) - 1.0)); }

inline std::vector<double> spike_series(const SpikeSpec& spec) {
    spec.validate();
    std::vector<double> out(spec.length);
    for (int t = 0; t < spec.length; ++t) out[t] = spike_value(static_cast<double>(t), spec.sharpness);
    return out;
}

// ---------------------------------------------------------------------------
// noise injection

enum class NoiseKind { Gaussian, RandomWalk, Periodic };

inline std::string to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::Gaussian: return "gaussian";
        case NoiseKind::RandomWalk: return "random_walk";
        default: return "periodic";
    }
}
inline NoiseKind noise_kind_from_string(const std::string& s) {
    if (s == "gaussian") return NoiseKind::Gaussian;
    if (s == "random_walk") return NoiseKind::RandomWalk;
    if (s == "periodic") return NoiseKind::Periodic;
    throw ConfigError("unknown noise kind '" + s + "'");
}

struct NoiseSpec {
    NoiseKind kind = NoiseKind::Gaussian;
    double kappa = 0.0;  // scale factor on the series' empirical std
    uint64_t seed = 0;

    void validate() const { check<ConfigError>(kappa >= 0.0, "noise: kappa must be >= 0"); }
};

inline const std::vector<double>& kappa_grid() {
    static const std::vector<double> grid{0.0, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0};
    return grid;
}

// Scale parameters are standard deviations sigma*kappa, with sigma the
// empirical std of the clean series. kappa = 0 returns the input unchanged.
inline std::vector<double> inject_noise(std::span<const double> series, const NoiseSpec& spec) {
    spec.validate();
    check<ContractError>(series.size() >= 2, "noise: need at least 2 points to estimate sigma");
    std::vector<double> out(series.begin(), series.end());
    if (spec.kappa == 0.0) return out;
    const double sigma = compute_stats(series).std;
    const double s = sigma * spec.kappa;
    Rng rng = Rng(spec.seed).split("noise").split(to_string(spec.kind));
    switch (spec.kind) {
        case NoiseKind::Gaussian:
            for (double& v : out) v += rng.normal(0.0, s);
            break;
        case NoiseKind::RandomWalk: {
            double walk = 0.0;
            for (double& v : out) {
                walk += rng.normal(0.0, s);
                v += walk;
            }
            break;
        }
        case NoiseKind::Periodic: {
            const double period = rng.uniform(12.0, 60.0);
            const double phase = rng.uniform(0.0, 2.0 * M_PI);
            for (size_t t = 0; t < out.size(); ++t)
                out[t] += s * std::sin(2.0 * M_PI * static_cast<double>(t) / period + phase) +
                          rng.normal(0.0, 0.1 * s);
            break;
        }
    }
    return out;
}

// Periodic-noise parameters for a given spec (test/verification hook; draws
// match inject_noise exactly).
inline std::pair<double, double> periodic_noise_params(const NoiseSpec& spec) {
    Rng rng = Rng(spec.seed).split("noise").split(to_string(NoiseKind::Periodic));
    const double period = rng.uniform(12.0, 60.0);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    return {period, phase};
}

// ---------------------------------------------------------------------------
// structural-causal task generator

enum class KernelKind { Rbf, Periodic, LinearTrend, Rough };

inline std::string to_string(KernelKind k) {
    switch (k) {
        case KernelKind::Rbf: return "rbf";
        case KernelKind::Periodic: return "periodic";
        case KernelKind::LinearTrend: return "linear_trend";
        default: return "rough";
    }
}
inline KernelKind kernel_from_string(const std::string& s) {
    if (s == "rbf") return KernelKind::Rbf;
    if (s == "periodic") return KernelKind::Periodic;
    if (s == "linear_trend") return KernelKind::LinearTrend;
    if (s == "rough") return KernelKind::Rough;
    throw ConfigError("unknown kernel '" + s + "'");
}

struct ScmKernel {
    KernelKind kind = KernelKind::Rbf;
    double lengthscale = 20.0;
    double period = 24.0;  // periodic kernel only
    double scale = 1.0;
};

struct ScmTaskSpec {
    int n_nodes = 3;
    std::vector<std::pair<int, int>> edges;  // parent -> child, acyclic
    std::vector<ScmKernel> kernels;          // one per node
    std::vector<int> exposure;               // observed covariate nodes, strict subset
    std::vector<int> target_parents;         // nodes feeding the target readout
    double process_noise = 0.05;
    double measurement_noise = 0.05;
    double regime_shift_prob = 0.0;
    uint64_t seed = 1;
    int mlp_hidden = 16;
    bool identity_mlps = false;  // degenerate fully-observed mode for verification

    // Topological order; throws on cycles.
    std::vector<int> topo_order() const {
        std::vector<std::vector<int>> adj(n_nodes);
        std::vector<int> indeg(n_nodes, 0);
        for (auto [p, c] : edges) {
            check<ConfigError>(p >= 0 && p < n_nodes && c >= 0 && c < n_nodes, "scm: edge node out of range");
            adj[p].push_back(c);
            indeg[c]++;
        }
        std::vector<int> order, stack;
        for (int i = 0; i < n_nodes; ++i)
            if (indeg[i] == 0) stack.push_back(i);
        while (!stack.empty()) {
            int u = stack.back();
            stack.pop_back();
            order.push_back(u);
            for (int v : adj[u])
                if (--indeg[v] == 0) stack.push_back(v);
        }
        check<ConfigError>(static_cast<int>(order.size()) == n_nodes, "scm: adjacency contains a cycle");
        return order;
    }

    void validate() const {
        check<ConfigError>(n_nodes >= 1, "scm: need at least one node");
        check<ConfigError>(static_cast<int>(kernels.size()) == n_nodes, "scm: one kernel per node required");
        check<ConfigError>(!exposure.empty() && static_cast<int>(exposure.size()) < n_nodes,
                           "scm: exposure set must be a nonempty strict subset of nodes");
        for (int e : exposure) check<ConfigError>(e >= 0 && e < n_nodes, "scm: exposure node out of range");
        check<ConfigError>(!target_parents.empty(), "scm: target needs at least one parent");
        for (int p : target_parents) check<ConfigError>(p >= 0 && p < n_nodes, "scm: target parent out of range");
        (void)topo_order();
    }
};

// Single-hidden-layer tanh MLP with fixed random weights.
struct RandomMlp {
    int in = 0, hidden = 0;
    std::vector<double> w1, b1, w2;  // (in,hidden), (hidden), (hidden)
    double b2 = 0.0;

    static RandomMlp draw(int in, int hidden, Rng& rng, bool identity) {
        RandomMlp m;
        m.in = in;
        m.hidden = hidden;
        m.w1.resize(in * hidden);
        m.b1.assign(hidden, 0.0);
        m.w2.resize(hidden);
        if (identity) return m;  // all-zero weights: output is b2 = 0
        const double s1 = 1.0 / std::sqrt(static_cast<double>(in));
        const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
        for (double& v : m.w1) v = rng.normal(0.0, s1);
        for (double& v : m.b1) v = rng.normal(0.0, 0.1);
        for (double& v : m.w2) v = rng.normal(0.0, s2);
        m.b2 = rng.normal(0.0, 0.1);
        return m;
    }

    double eval(std::span<const double> x, bool identity_passthrough) const {
        if (identity_passthrough) {
            // degenerate mode: sum of parents, no nonlinearity
            double acc = 0.0;
            for (double v : x) acc += v;
            return acc;
        }
        double out = b2;
        for (int h = 0; h < hidden; ++h) {
            double a = b1[h];
            for (int i = 0; i < in; ++i) a += x[i] * w1[i * hidden + h];
            out += w2[h] * std::tanh(a);
        }
        return out;
    }
};

// Mechanism parameters fixed per task: edge MLPs, readout, AR coefficient,
// optional regime shift.
struct ScmMechanism {
    std::vector<std::vector<int>> parents;  // per node
    std::vector<RandomMlp> node_mlps;       // per node (unused for roots)
    RandomMlp readout;
    double ar_coeff = 0.5;
    bool has_regime_shift = false;
    double regime_gain = 1.0;  // applied to readout output after the shift point

    static ScmMechanism draw(const ScmTaskSpec& spec) {
        spec.validate();
        Rng rng = Rng(spec.seed).split("scm-mechanism");
        ScmMechanism mech;
        mech.parents.resize(spec.n_nodes);
        for (auto [p, c] : spec.edges) mech.parents[c].push_back(p);
        for (int i = 0; i < spec.n_nodes; ++i) {
            Rng node_rng = rng.split(static_cast<uint64_t>(i));
            const int fan_in = std::max<int>(1, static_cast<int>(mech.parents[i].size()));
            mech.node_mlps.push_back(RandomMlp::draw(fan_in, spec.mlp_hidden, node_rng, spec.identity_mlps));
        }
        Rng readout_rng = rng.split("readout");
        mech.readout = RandomMlp::draw(static_cast<int>(spec.target_parents.size()), spec.mlp_hidden, readout_rng,
                                       spec.identity_mlps);
        mech.ar_coeff = rng.split("ar").uniform(0.3, 0.95);
        Rng shift_rng = rng.split("regime");
        if (shift_rng.bernoulli(spec.regime_shift_prob)) {
            mech.has_regime_shift = true;
            mech.regime_gain = shift_rng.uniform(0.5, 2.0) * (shift_rng.bernoulli(0.5) ? -1.0 : 1.0);
        }
        return mech;
    }
};

namespace detail {

// Gaussian-process draw of one latent trajectory via Cholesky of the Gram
// matrix; lengths beyond the Cholesky budget fall back to crossfaded blocks.
inline std::vector<double> sample_kernel_trajectory(const ScmKernel& kern, int len, Rng& rng) {
    if (kern.kind == KernelKind::LinearTrend) {
        const double slope = rng.normal(0.0, kern.scale);
        const double intercept = rng.normal(0.0, kern.scale);
        std::vector<double> out(len);
        for (int t = 0; t < len; ++t) out[t] = intercept + slope * (static_cast<double>(t) / std::max(1, len - 1));
        return out;
    }
    constexpr int kCholeskyBudget = 4096;
    if (len > kCholeskyBudget) {
        constexpr int block = 2048, overlap = 256;
        std::vector<double> out;
        out.reserve(len);
        std::vector<double> prev;
        while (static_cast<int>(out.size()) < len) {
            std::vector<double> chunk = sample_kernel_trajectory(kern, block, rng);
            if (out.empty()) {
                out = chunk;
            } else {
                for (int i = 0; i < overlap && i < static_cast<int>(out.size()); ++i) {
                    const double w = static_cast<double>(i + 1) / (overlap + 1);
                    out[out.size() - overlap + i] = (1.0 - w) * out[out.size() - overlap + i] + w * chunk[i];
                }
                out.insert(out.end(), chunk.begin() + overlap, chunk.end());
            }
        }
        out.resize(len);
        return out;
    }
    std::vector<double> gram(static_cast<size_t>(len) * len);
    for (int i = 0; i < len; ++i)
        for (int j = 0; j <= i; ++j) {
            const double d = static_cast<double>(i - j);
            double k;
            switch (kern.kind) {
                case KernelKind::Rbf:
                    k = std::exp(-d * d / (2.0 * kern.lengthscale * kern.lengthscale));
                    break;
                case KernelKind::Periodic: {
                    const double s = std::sin(M_PI * d / kern.period);
                    k = std::exp(-2.0 * s * s / (kern.lengthscale * kern.lengthscale));
                    break;
                }
                default:  // Rough (Ornstein-Uhlenbeck)
                    k = std::exp(-std::abs(d) / kern.lengthscale);
            }
            k *= kern.scale * kern.scale;
            gram[i * len + j] = k;
            gram[j * len + i] = k;
        }
    for (int i = 0; i < len; ++i) gram[i * len + i] += 1e-9 * kern.scale * kern.scale + 1e-12;
    // in-place lower Cholesky
    for (int i = 0; i < len; ++i) {
        for (int j = 0; j <= i; ++j) {
            double acc = gram[i * len + j];
            for (int k2 = 0; k2 < j; ++k2) acc -= gram[i * len + k2] * gram[j * len + k2];
            if (i == j) {
                check<ContractError>(acc > 0.0, "kernel gram matrix not positive definite");
                gram[i * len + i] = std::sqrt(acc);
            } else {
                gram[i * len + j] = acc / gram[j * len + j];
            }
        }
    }
    std::vector<double> z(len), out(len, 0.0);
    for (double& v : z) v = rng.normal();
    for (int i = 0; i < len; ++i) {
        double acc = 0.0;
        for (int j = 0; j <= i; ++j) acc += gram[i * len + j] * z[j];
        out[i] = acc;
    }
    return out;
}

struct ScmDraw {
    std::vector<std::vector<double>> node_values;  // per node, length len
    std::vector<double> target;                    // length len
};

inline ScmDraw scm_realization(const ScmTaskSpec& spec, const ScmMechanism& mech, int len, Rng rng) {
    ScmDraw d;
    d.node_values.assign(spec.n_nodes, {});
    std::vector<double> latent_buf;
    const auto order = spec.topo_order();
    for (int node : order) {
        Rng node_rng = rng.split("latent").split(static_cast<uint64_t>(node));
        std::vector<double> latent = sample_kernel_trajectory(spec.kernels[node], len, node_rng);
        std::vector<double>& vals = d.node_values[node];
        vals.assign(len, 0.0);
        const auto& parents = mech.parents[node];
        Rng pn_rng = rng.split("process").split(static_cast<uint64_t>(node));
        std::vector<double> pv(std::max<size_t>(parents.size(), 1));
        for (int t = 0; t < len; ++t) {
            double v = latent[t];
            if (!parents.empty()) {
                for (size_t p = 0; p < parents.size(); ++p) pv[p] = d.node_values[parents[p]][t];
                v += mech.node_mlps[node].eval(std::span(pv).first(parents.size()), spec.identity_mlps);
                if (spec.process_noise > 0.0) v += pn_rng.normal(0.0, spec.process_noise);
            }
            vals[t] = v;
        }
    }
    // target: AR(1) mixed with a nonlinear readout of its parents
    d.target.assign(len, 0.0);
    Rng mn_rng = rng.split("measurement");
    std::vector<double> pv(spec.target_parents.size());
    const int shift_point = mech.has_regime_shift ? len / 2 : len + 1;
    for (int t = 0; t < len; ++t) {
        for (size_t p = 0; p < pv.size(); ++p) pv[p] = d.node_values[spec.target_parents[p]][t];
        double readout = mech.readout.eval(pv, spec.identity_mlps);
        if (t >= shift_point) readout *= mech.regime_gain;
        double v = readout + (t > 0 ? mech.ar_coeff * d.target[t - 1] : 0.0);
        if (spec.measurement_noise > 0.0) v += mn_rng.normal(0.0, spec.measurement_noise);
        d.target[t] = v;
    }
    return d;
}

}  // namespace detail

// Instances sharing one mechanism; each instance draws independent latent
// realizations. Bitwise deterministic per (spec.seed, instance index).
inline std::vector<Instance> generate_scm_task(const ScmTaskSpec& spec, int n_instances, int T, int H) {
    spec.validate();
    const ScmMechanism mech = ScmMechanism::draw(spec);
    std::vector<Instance> out;
    for (int i = 0; i < n_instances; ++i) {
        Rng rng = Rng(spec.seed).split("instance").split(static_cast<uint64_t>(i));
        auto draw = detail::scm_realization(spec, mech, T + H, rng);
        Instance ins;
        ins.horizon = H;
        ins.lookback.assign(draw.target.begin(), draw.target.begin() + T);
        ins.observed.assign(T, 1);
        ins.future.assign(draw.target.begin() + T, draw.target.end());
        for (int e : spec.exposure) ins.covariates.push_back(draw.node_values[e]);
        out.push_back(std::move(ins));
    }
    return out;
}

// One long realization exposed as a dataset record; exposed nodes become
// known-future covariates.
inline SeriesRecord scm_series(const ScmTaskSpec& spec, int length, const std::string& item_id) {
    spec.validate();
    const ScmMechanism mech = ScmMechanism::draw(spec);
    Rng rng = Rng(spec.seed).split("series");
    auto draw = detail::scm_realization(spec, mech, length, rng);
    SeriesRecord rec;
    rec.item_id = item_id;
    rec.timestamps.resize(length);
    for (int t = 0; t < length; ++t) rec.timestamps[t] = t;
    rec.target = draw.target;
    for (size_t i = 0; i < spec.exposure.size(); ++i) {
        rec.covariate_names.push_back("node" + std::to_string(spec.exposure[i]));
        rec.covariates.push_back(draw.node_values[spec.exposure[i]]);
        rec.known_future_cols.push_back(static_cast<int>(i));
    }
    return rec;
}

// Randomized task family used by the data-generation CLI.
inline ScmTaskSpec make_random_scm_spec(uint64_t seed, int n_nodes = 4) {
    Rng rng = Rng(seed).split("scm-spec");
    ScmTaskSpec spec;
    spec.seed = seed;
    spec.n_nodes = n_nodes;
    for (int c = 1; c < n_nodes; ++c)
        for (int p = 0; p < c; ++p)
            if (rng.bernoulli(0.5)) spec.edges.push_back({p, c});
    for (int i = 0; i < n_nodes; ++i) {
        ScmKernel k;
        const double u = rng.uniform();
        k.kind = u < 0.35 ? KernelKind::Rbf
                          : (u < 0.7 ? KernelKind::Periodic : (u < 0.85 ? KernelKind::LinearTrend : KernelKind::Rough));
        k.lengthscale = std::exp(rng.uniform(std::log(5.0), std::log(100.0)));
        if (k.kind == KernelKind::Periodic) {
            k.period = std::exp(rng.uniform(std::log(8.0), std::log(100.0)));
            k.lengthscale = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
        }
        spec.kernels.push_back(k);
    }
    const int n_exposed = std::max(1, static_cast<int>(rng.uniform_int(1, n_nodes - 1)));
    spec.exposure = rng.sample_without_replacement(n_nodes, n_exposed);
    std::sort(spec.exposure.begin(), spec.exposure.end());
    const int n_parents = std::max(1, static_cast<int>(rng.uniform_int(1, n_nodes)));
    spec.target_parents = rng.sample_without_replacement(n_nodes, n_parents);
    std::sort(spec.target_parents.begin(), spec.target_parents.end());
    spec.process_noise = rng.uniform(0.0, 0.1);
    spec.measurement_noise = rng.uniform(0.0, 0.1);
    return spec;
}

// ---------------------------------------------------------------------------
// augmentation

struct ConcatResult {
    SeriesRecord record;
    std::vector<int64_t> boundaries;  // regime-shift markers (start of each appended segment)
};

// z-normalizes each record (target and covariates, per column) and
// concatenates them into one long record with boundary markers.
inline ConcatResult concat_augment(const std::vector<SeriesRecord>& records) {
    check<DataError>(records.size() >= 2, "concat_augment: need at least 2 records");
    for (const SeriesRecord& r : records)
        check<DataError>(r.covariate_names == records[0].covariate_names,
                         "concat_augment: records must share the covariate schema");
    ConcatResult out;
    out.record.item_id = records[0].item_id + "+concat";
    out.record.freq = records[0].freq;
    out.record.horizon = records[0].horizon;
    out.record.covariate_names = records[0].covariate_names;
    out.record.known_future_cols = records[0].known_future_cols;
    out.record.covariates.resize(records[0].covariate_names.size());
    int64_t t0 = 0;
    for (size_t r = 0; r < records.size(); ++r) {
        const SeriesRecord& rec = records[r];
        if (r > 0) out.boundaries.push_back(t0);
        auto [target_norm, ts] = znormalize(rec.target);
        out.record.target.insert(out.record.target.end(), target_norm.begin(), target_norm.end());
        for (size_t m = 0; m < rec.covariates.size(); ++m) {
            auto [cov_norm, cs] = znormalize(rec.covariates[m]);
            out.record.covariates[m].insert(out.record.covariates[m].end(), cov_norm.begin(), cov_norm.end());
        }
        for (int64_t t = 0; t < rec.length(); ++t) out.record.timestamps.push_back(t0 + t);
        t0 += rec.length();
    }
    return out;
}

// Contiguous training window start honoring T+H.
inline int64_t sample_subsequence_start(const ConcatResult& cat, int window, Rng& rng) {
    check<DataError>(cat.record.length() >= window, "concat_augment: record shorter than requested window");
    return rng.uniform_int(0, cat.record.length() - window);
}

inline constexpr const char* kTimeIndexColumn = "time_index";

// Appends a running-index covariate (0,1,2,...) marked known-future.
inline SeriesRecord add_time_index(const SeriesRecord& rec) {
    for (const std::string& name : rec.covariate_names)
        check<DataError>(name != kTimeIndexColumn,
                         "add_time_index: record '" + rec.item_id + "' already has a time_index column");
    SeriesRecord out = rec;
    std::vector<double> idx(rec.length());
    for (int64_t t = 0; t < rec.length(); ++t) idx[t] = static_cast<double>(t);
    out.covariate_names.push_back(kTimeIndexColumn);
    out.known_future_cols.push_back(static_cast<int>(out.covariates.size()));
    out.covariates.push_back(std::move(idx));
    return out;
}

}  // namespace bgts
