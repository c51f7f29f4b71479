// Retrieval-based context construction: sliding-window index over
// z-normalized subsequences with exact top-k queries.
//
// Candidates are T-length windows whose subsequent H points are also
// observed; a query excludes every candidate whose full T+H extent overlaps
// the query's own extent, so a tail query can never see its own future.
#pragma once

#include <algorithm>
#include <map>
#include <vector>

#include "bgts/data.hpp"
#include "bgts/rng.hpp"
#include "bgts/serialize.hpp"

namespace bgts {

enum class SpaceMode { Y, X, XY };

inline std::string to_string(SpaceMode m) {
    switch (m) {
        case SpaceMode::Y: return "y";
        case SpaceMode::X: return "x";
        default: return "xy";
    }
}
inline SpaceMode space_from_string(const std::string& s) {
    if (s == "y") return SpaceMode::Y;
    if (s == "x") return SpaceMode::X;
    if (s == "xy") return SpaceMode::XY;
    throw ConfigError("unknown retrieval space '" + s + "' (expected y, x, or xy)");
}

// 0.5*(1-cos) + 0.5*L2/sqrt(len) on z-normalized windows; the sqrt(len)
// scaling keeps the two parts commensurate across window lengths. A zero-norm
// operand makes the cosine part maximally dissimilar (term 1).
inline double window_distance(std::span<const double> a, std::span<const double> b) {
    check<ShapeError>(a.size() == b.size() && !a.empty(), "distance: window lengths differ");
    double dot = 0.0, na = 0.0, nb = 0.0, d2 = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
        d2 += (a[i] - b[i]) * (a[i] - b[i]);
    }
    double one_minus_cos = 1.0;
    if (na > 1e-24 && nb > 1e-24) one_minus_cos = 1.0 - dot / std::sqrt(na * nb);
    return 0.5 * one_minus_cos + 0.5 * std::sqrt(d2) / std::sqrt(static_cast<double>(a.size()));
}

class RetrievalIndex {
  public:
    RetrievalIndex() = default;

    // Rebuild from cached normalized windows (sidecar cache path).
    static RetrievalIndex from_cache(const SeriesRecord& rec, int T, int H, SpaceMode space,
                                     std::vector<std::vector<double>> windows) {
        RetrievalIndex idx;
        idx.record_ = rec;
        idx.t_ = T;
        idx.h_ = H;
        idx.space_ = space;
        const int64_t n_cand = rec.length() - T - H + 1;
        check<FormatError>(static_cast<int64_t>(windows.size()) == n_cand,
                           "index cache: candidate count mismatch for item '" + rec.item_id + "'");
        idx.windows_ = std::move(windows);
        return idx;
    }

    static RetrievalIndex build(const SeriesRecord& rec, int T, int H, SpaceMode space) {
        check<ConfigError>(T >= 1 && H >= 1, "index: degenerate window spec");
        if (space != SpaceMode::Y)
            check<ConfigError>(rec.num_covariates() >= 1,
                               "index: " + to_string(space) + "-space needs covariates, item '" + rec.item_id +
                                   "' has none");
        const int64_t min_len = 2 * static_cast<int64_t>(T + H);
        check<DataError>(rec.length() >= min_len,
                         "index: series '" + rec.item_id + "' has " + std::to_string(rec.length()) +
                             " points, needs at least " + std::to_string(min_len) +
                             " for one non-overlapping candidate");
        RetrievalIndex idx;
        idx.record_ = rec;
        idx.t_ = T;
        idx.h_ = H;
        idx.space_ = space;
        const int64_t n_cand = rec.length() - T - H + 1;  // starts 0..N-T-H
        idx.windows_.reserve(n_cand);
        for (int64_t s = 0; s < n_cand; ++s) idx.windows_.push_back(idx.normalized_window(rec, s));
        return idx;
    }

    int t_len() const { return t_; }
    int h_len() const { return h_; }
    SpaceMode space() const { return space_; }
    int64_t candidates() const { return static_cast<int64_t>(windows_.size()); }
    const SeriesRecord& record() const { return record_; }
    std::span<const double> window(int64_t start) const { return windows_[start]; }

    // Channel-stacked z-normalized lookback window starting at `start`.
    std::vector<double> normalized_window(const SeriesRecord& rec, int64_t start) const {
        std::vector<double> out;
        auto push_channel = [&](std::span<const double> raw) {
            auto [norm, stats] = znormalize(raw);
            out.insert(out.end(), norm.begin(), norm.end());
        };
        std::vector<double> buf(t_);
        if (space_ != SpaceMode::X) {
            for (int t = 0; t < t_; ++t) {
                double v = rec.target[start + t];
                buf[t] = std::isnan(v) ? 0.0 : v;
            }
            push_channel(buf);
        }
        if (space_ != SpaceMode::Y)
            for (int m = 0; m < rec.num_covariates(); ++m) {
                for (int t = 0; t < t_; ++t) {
                    double v = rec.covariates[m][start + t];
                    buf[t] = std::isnan(v) ? 0.0 : v;
                }
                push_channel(buf);
            }
        return out;
    }

    struct Hit {
        int64_t start = 0;
        double distance = 0.0;
    };
    struct QueryResult {
        std::vector<Hit> hits;
        std::vector<Instance> instances;
        bool short_supply = false;
    };

    // Exact top-k by exhaustive scan; ties broken by earliest start. The
    // query's own extent [own_start, own_start+T+H) is excluded entirely.
    QueryResult query_window(std::span<const double> normalized_query, int k, int64_t own_start) const {
        check<ContractError>(k >= 1, "query: k must be >= 1");
        std::vector<Hit> all;
        all.reserve(windows_.size());
        for (int64_t s = 0; s < candidates(); ++s) {
            if (own_start >= 0 && s < own_start + t_ + h_ && own_start < s + t_ + h_) continue;  // overlap
            all.push_back({s, window_distance(normalized_query, windows_[s])});
        }
        std::sort(all.begin(), all.end(), [](const Hit& a, const Hit& b) {
            if (a.distance != b.distance) return a.distance < b.distance;
            return a.start < b.start;
        });
        QueryResult out;
        out.short_supply = static_cast<int>(all.size()) < k;
        all.resize(std::min<size_t>(all.size(), static_cast<size_t>(k)));
        out.hits = std::move(all);
        for (const Hit& h : out.hits) out.instances.push_back(make_instance(record_, h.start, t_, h_, true));
        return out;
    }

    // Query with a raw target lookback (Y-space form of the contract).
    QueryResult query(std::span<const double> lookback, int k, int64_t own_start = -1) const {
        check<ContractError>(space_ == SpaceMode::Y, "query: raw-lookback form is Y-space only");
        check<ShapeError>(static_cast<int>(lookback.size()) == t_, "query: lookback length != T");
        auto [norm, stats] = znormalize(lookback);
        return query_window(norm, k, own_start);
    }

    // Query keyed by a window start inside the same series (any space mode).
    QueryResult query_at(int64_t start, int k) const {
        check<ContractError>(start >= 0 && start + t_ <= record_.length(), "query_at: start out of range");
        return query_window(normalized_window(record_, start), k, start);
    }

  private:
    SeriesRecord record_;
    int t_ = 0, h_ = 0;
    SpaceMode space_ = SpaceMode::Y;
    std::vector<std::vector<double>> windows_;
};

// ---------------------------------------------------------------------------
// training pool: 2K_ctx retrieved + the reference, subsampled to K_ctx

struct TrainingPool {
    std::vector<Instance> contexts;
    Instance target;
    std::vector<int64_t> context_starts;
    int64_t target_start = -1;
    bool short_supply = false;
};

// Retrieves the 2*k_ctx nearest windows to the reference lookback, adds the
// reference itself, samples k_ctx of the pool uniformly and designates one of
// them as the target. Deterministic under the supplied rng.
inline TrainingPool training_pool(const RetrievalIndex& index, int64_t reference_start, int k_ctx, Rng& rng) {
    check<ContractError>(k_ctx >= 1, "training_pool: k_ctx must be >= 1");
    auto res = index.query_at(reference_start, 2 * k_ctx);
    std::vector<int64_t> pool;
    for (const auto& h : res.hits) pool.push_back(h.start);
    pool.push_back(reference_start);
    TrainingPool out;
    out.short_supply = static_cast<int>(pool.size()) < k_ctx || res.short_supply;
    const int take = std::min<int>(k_ctx, static_cast<int>(pool.size()));
    std::vector<int> chosen = rng.sample_without_replacement(static_cast<int>(pool.size()), take);
    const int target_slot = static_cast<int>(rng.uniform_int(0, take - 1));
    for (int i = 0; i < take; ++i) {
        const int64_t start = pool[chosen[i]];
        if (i == target_slot) {
            out.target_start = start;
        } else {
            out.context_starts.push_back(start);
        }
    }
    for (int64_t s : out.context_starts)
        out.contexts.push_back(make_instance(index.record(), s, index.t_len(), index.h_len(), true));
    out.target = make_instance(index.record(), out.target_start, index.t_len(), index.h_len(), true);
    return out;
}

// Equal-stride context windows over the historical region (the w/o-retrieval
// baseline).
inline std::vector<Instance> uniform_contexts(const SeriesRecord& rec, int T, int H, int C) {
    check<ContractError>(C >= 1, "uniform_contexts: C must be >= 1");
    const int64_t n_starts = rec.length() - T - H + 1;
    check<DataError>(n_starts >= C, "uniform_contexts: series '" + rec.item_id + "' supports only " +
                                        std::to_string(std::max<int64_t>(n_starts, 0)) + " windows, need " +
                                        std::to_string(C));
    std::vector<Instance> out;
    for (int i = 0; i < C; ++i) {
        const int64_t start =
            C == 1 ? 0 : static_cast<int64_t>(std::llround(static_cast<double>(i) * (n_starts - 1) / (C - 1)));
        out.push_back(make_instance(rec, start, T, H, true));
    }
    return out;
}

// ---------------------------------------------------------------------------
// sidecar cache

// Binary cache of normalized windows keyed by (item_id, T, H, space); avoids
// recomputing indexes across runs. Records must be re-attached from the
// dataset on load.
inline void save_index_cache(const std::vector<RetrievalIndex>& indexes, const std::string& path) {
    nlohmann::json config;
    config["kind"] = "index-cache";
    auto entries = nlohmann::json::array();
    std::vector<ArrayRecord> records;
    for (size_t i = 0; i < indexes.size(); ++i) {
        const RetrievalIndex& idx = indexes[i];
        entries.push_back({{"item_id", idx.record().item_id},
                           {"T", idx.t_len()},
                           {"H", idx.h_len()},
                           {"space", to_string(idx.space())},
                           {"candidates", idx.candidates()}});
        ArrayRecord rec;
        rec.name = "windows/" + std::to_string(i);
        const int64_t n = idx.candidates();
        const int64_t w = n > 0 ? static_cast<int64_t>(idx.window(0).size()) : 0;
        rec.shape = {static_cast<int>(n), static_cast<int>(w)};
        rec.data.reserve(n * w);
        for (int64_t s = 0; s < n; ++s) rec.data.insert(rec.data.end(), idx.window(s).begin(), idx.window(s).end());
        records.push_back(std::move(rec));
    }
    config["entries"] = entries;
    write_container(path, config, records);
}

struct IndexCacheEntry {
    std::string item_id;
    int T = 0, H = 0;
    SpaceMode space = SpaceMode::Y;
    std::vector<std::vector<double>> windows;
};

inline std::vector<IndexCacheEntry> load_index_cache(const std::string& path) {
    Container c = read_container(path);
    check<FormatError>(c.config.value("kind", std::string()) == "index-cache",
                       "index cache: file " + path + " is not an index cache");
    std::vector<IndexCacheEntry> out;
    const auto& entries = c.config["entries"];
    for (size_t i = 0; i < entries.size(); ++i) {
        IndexCacheEntry e;
        e.item_id = entries[i]["item_id"];
        e.T = entries[i]["T"];
        e.H = entries[i]["H"];
        e.space = space_from_string(entries[i]["space"]);
        const ArrayRecord* rec = c.find("windows/" + std::to_string(i));
        check<FormatError>(rec != nullptr, "index cache: missing windows for entry " + std::to_string(i));
        const int64_t n = rec->shape[0], w = rec->shape[1];
        e.windows.resize(n);
        for (int64_t s = 0; s < n; ++s)
            e.windows[s].assign(rec->data.begin() + s * w, rec->data.begin() + (s + 1) * w);
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace bgts
