// Dataset ingestion, windowing, z-normalization, and episode assembly.
//
// Dataset CSV schema: header `item_id,timestamp,target,<cov1>,...`, UTF-8,
// integer-second timestamps, strictly increasing per item. Metadata JSON:
// {"freq": "...", "known_future": ["cov1", ...], "horizon": H}.
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bgts/common.hpp"

namespace bgts {

// Dataset-level maxima.
inline constexpr int kMaxLookback = 2048;
inline constexpr int kMaxHorizon = 192;
inline constexpr int kMaxContexts = 50;
inline constexpr int kMaxCovariates = 80;
inline constexpr double kNormEps = 1e-8;

struct SeriesRecord {
    std::string item_id;
    std::vector<int64_t> timestamps;
    std::vector<double> target;                    // NaN marks a missing observation
    std::vector<std::vector<double>> covariates;   // column-major
    std::vector<std::string> covariate_names;
    std::vector<int> known_future_cols;
    std::string freq = "u";
    int horizon = 0;

    int64_t length() const { return static_cast<int64_t>(target.size()); }
    int num_covariates() const { return static_cast<int>(covariates.size()); }
};

struct WindowSpec {
    int lookback = 0;  // T
    int horizon = 0;   // H

    void validate() const {
        check<ConfigError>(lookback >= 1 && lookback <= kMaxLookback,
                           "window: lookback " + std::to_string(lookback) + " outside [1," +
                               std::to_string(kMaxLookback) + "]");
        check<ConfigError>(horizon >= 1 && horizon <= kMaxHorizon,
                           "window: horizon " + std::to_string(horizon) + " outside [1," +
                               std::to_string(kMaxHorizon) + "]");
    }
};

struct NormStats {
    double mean = 0.0;
    double std = 0.0;
    double denormalize(double v) const { return v * (std + kNormEps) + mean; }
    double normalize(double v) const { return (v - mean) / (std + kNormEps); }
};

inline NormStats compute_stats(std::span<const double> window) {
    check<ContractError>(!window.empty(), "compute_stats: empty window");
    NormStats s;
    for (double v : window) s.mean += v;
    s.mean /= static_cast<double>(window.size());
    double var = 0.0;
    for (double v : window) var += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(var / static_cast<double>(window.size()));
    return s;
}

// z-normalization with an epsilon floor: constant windows map to zeros.
inline std::pair<std::vector<double>, NormStats> znormalize(std::span<const double> window,
                                                            double eps = kNormEps) {
    NormStats s = compute_stats(window);
    std::vector<double> out(window.size());
    for (size_t i = 0; i < window.size(); ++i) out[i] = (window[i] - s.mean) / (s.std + eps);
    return {std::move(out), s};
}

// One (lookback, future, covariate block) window in raw units.
struct Instance {
    std::vector<double> lookback;                 // length T
    std::vector<uint8_t> observed;                // length T, 0 where the raw value was missing
    std::vector<double> future;                   // length H, or empty at inference
    std::vector<std::vector<double>> covariates;  // M columns, each length T+H
    int horizon = 0;

    int t_len() const { return static_cast<int>(lookback.size()); }
    int h_len() const { return horizon; }
    int m_len() const { return static_cast<int>(covariates.size()); }
};

enum class EpisodeMode { Train, Infer };
enum class NormScheme { PerSlice, SharedTarget };  // SharedTarget = reversible instance normalization

struct EpisodeSlice {
    // (M+1) channels, channel-major, covariates first and the target channel
    // last; each channel has T+H rows. Values are normalized.
    std::vector<double> values;
    std::vector<uint8_t> target_mask;  // length T+H; 1 = unknown to the model
    NormStats target_stats;
    std::vector<NormStats> cov_stats;

    std::span<double> channel(int ch, int rows) { return std::span(values).subspan(ch * rows, rows); }
    std::span<const double> channel(int ch, int rows) const { return std::span(values).subspan(ch * rows, rows); }
};

struct Episode {
    int T = 0, H = 0, M = 0, C = 0;
    std::vector<EpisodeSlice> slices;    // C contexts then the target slice
    std::vector<double> supervision;     // normalized target future (training), else empty
    std::vector<int> column_ids;         // variable-embedding ids of covariate slots; target id is 0
    bool overfit_marked = false;

    const EpisodeSlice& target_slice() const { return slices.back(); }
    EpisodeSlice& target_slice() { return slices.back(); }
    std::span<const uint8_t> future_mask() const {
        return std::span(target_slice().target_mask).subspan(T, H);
    }
};

namespace detail {

inline NormStats observed_stats(std::span<const double> vals, std::span<const uint8_t> observed) {
    std::vector<double> seen;
    seen.reserve(vals.size());
    for (size_t i = 0; i < vals.size(); ++i)
        if (observed.empty() || observed[i]) seen.push_back(vals[i]);
    if (seen.empty()) return NormStats{};
    return compute_stats(seen);
}

}  // namespace detail

// Assembles the (C+1)-slice episode. Every slice is z-normalized on its own
// lookback (or on the target's lookback stats under SharedTarget). The target
// slice's future is zero-filled and masked in both modes; Train additionally
// retains the normalized future as supervision.
inline Episode build_episode(const Instance& target, const std::vector<Instance>& contexts, EpisodeMode mode,
                             NormScheme scheme = NormScheme::PerSlice) {
    Episode ep;
    ep.T = target.t_len();
    ep.H = target.h_len();
    ep.M = target.m_len();
    ep.C = static_cast<int>(contexts.size());
    check<ConfigError>(ep.C <= kMaxContexts, "episode: C exceeds " + std::to_string(kMaxContexts));
    check<ConfigError>(ep.M <= kMaxCovariates, "episode: M exceeds " + std::to_string(kMaxCovariates));
    const int rows = ep.T + ep.H;

    std::vector<const Instance*> all;
    for (const Instance& c : contexts) all.push_back(&c);
    all.push_back(&target);

    for (const Instance* ins : all)
        check<ShapeError>(ins->t_len() == ep.T && ins->h_len() == ep.H && ins->m_len() == ep.M,
                          "episode: slice shape mismatch, want T=" + std::to_string(ep.T) + " H=" +
                              std::to_string(ep.H) + " M=" + std::to_string(ep.M));

    const NormStats shared =
        scheme == NormScheme::SharedTarget ? detail::observed_stats(target.lookback, target.observed) : NormStats{};

    for (size_t s = 0; s < all.size(); ++s) {
        const Instance& ins = *all[s];
        const bool is_target = (s + 1 == all.size());
        EpisodeSlice slice;
        slice.values.assign(static_cast<size_t>(ep.M + 1) * rows, 0.0);
        slice.target_mask.assign(rows, 0);
        for (int m = 0; m < ep.M; ++m) {
            check<ShapeError>(static_cast<int>(ins.covariates[m].size()) == rows, "episode: covariate rows != T+H");
            NormStats cs = detail::observed_stats(std::span(ins.covariates[m]).subspan(0, ep.T), {});
            auto ch = slice.channel(m, rows);
            for (int t = 0; t < rows; ++t) {
                double v = ins.covariates[m][t];
                ch[t] = std::isnan(v) ? 0.0 : cs.normalize(v);
            }
            slice.cov_stats.push_back(cs);
        }
        NormStats ts = scheme == NormScheme::SharedTarget ? shared
                                                          : detail::observed_stats(ins.lookback, ins.observed);
        slice.target_stats = ts;
        auto tch = slice.channel(ep.M, rows);
        for (int t = 0; t < ep.T; ++t) {
            const bool seen = ins.observed.empty() || ins.observed[t];
            if (seen && !std::isnan(ins.lookback[t])) {
                tch[t] = ts.normalize(ins.lookback[t]);
            } else {
                tch[t] = 0.0;
                slice.target_mask[t] = 1;
            }
        }
        const bool mask_future = is_target;  // both modes hide the target slice's future from the model
        if (mask_future) {
            for (int t = ep.T; t < rows; ++t) slice.target_mask[t] = 1;
            if (mode == EpisodeMode::Train) {
                check<ContractError>(static_cast<int>(ins.future.size()) == ep.H,
                                     "episode: training target has no future values");
                ep.supervision.resize(ep.H);
                for (int t = 0; t < ep.H; ++t) ep.supervision[t] = ts.normalize(ins.future[t]);
            }
        } else {
            check<ContractError>(static_cast<int>(ins.future.size()) == ep.H,
                                 "episode: context slice lacks observed future");
            for (int t = 0; t < ep.H; ++t) tch[ep.T + t] = ts.normalize(ins.future[t]);
        }
        ep.slices.push_back(std::move(slice));
    }
    ep.column_ids.resize(ep.M);
    for (int m = 0; m < ep.M; ++m) ep.column_ids[m] = m + 1;
    return ep;
}

// Extracts the raw window [start, start+T+H) from a record as an Instance.
inline Instance make_instance(const SeriesRecord& rec, int64_t start, int T, int H, bool with_future = true,
                              const std::vector<int>* cov_subset = nullptr) {
    check<ContractError>(start >= 0 && start + T + (with_future ? H : 0) <= rec.length(),
                         "make_instance: window [" + std::to_string(start) + "," +
                             std::to_string(start + T + H) + ") outside series of length " +
                             std::to_string(rec.length()));
    Instance ins;
    ins.horizon = H;
    ins.lookback.resize(T);
    ins.observed.assign(T, 1);
    for (int t = 0; t < T; ++t) {
        double v = rec.target[start + t];
        if (std::isnan(v)) {
            ins.lookback[t] = 0.0;
            ins.observed[t] = 0;
        } else {
            ins.lookback[t] = v;
        }
    }
    if (with_future) {
        ins.future.resize(H);
        for (int t = 0; t < H; ++t) ins.future[t] = rec.target[start + T + t];
    }
    std::vector<int> cols;
    if (cov_subset)
        cols = *cov_subset;
    else
        for (int m = 0; m < rec.num_covariates(); ++m) cols.push_back(m);
    for (int m : cols) {
        std::vector<double> col(T + H, 0.0);
        for (int t = 0; t < T + H; ++t) {
            int64_t idx = start + t;
            col[t] = idx < rec.length() ? rec.covariates[m][idx] : 0.0;
        }
        ins.covariates.push_back(std::move(col));
    }
    return ins;
}

// Validation instances obtained by rolling the window end back by each offset.
inline std::vector<Instance> rolling_split(const SeriesRecord& rec, const WindowSpec& spec,
                                           const std::vector<int>& offsets) {
    spec.validate();
    std::vector<Instance> out;
    for (int off : offsets) {
        check<ContractError>(off >= 0, "rolling_split: negative offset");
        const int64_t need = static_cast<int64_t>(off) + spec.lookback + spec.horizon;
        check<DataError>(rec.length() >= need, "rolling_split: series '" + rec.item_id + "' has " +
                                                   std::to_string(rec.length()) + " points, needs " +
                                                   std::to_string(need));
        const int64_t start = rec.length() - need;
        out.push_back(make_instance(rec, start, spec.lookback, spec.horizon, true));
    }
    return out;
}

// ---------------------------------------------------------------------------
// dataset io

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_value(const std::string& s) {
    if (s.empty() || s == "nan" || s == "NaN" || s == "NA") return std::nan("");
    return std::stod(s);
}

}  // namespace detail

inline std::vector<SeriesRecord> load_dataset(const std::string& csv_path, const std::string& metadata_path) {
    std::ifstream meta_in(metadata_path);
    check<DataError>(meta_in.good(), "load_dataset: cannot open metadata " + metadata_path);
    nlohmann::json meta = nlohmann::json::parse(meta_in);

    std::ifstream in(csv_path);
    check<DataError>(in.good(), "load_dataset: cannot open " + csv_path);
    std::string line;
    check<DataError>(static_cast<bool>(std::getline(in, line)), "load_dataset: empty file " + csv_path);
    auto header = detail::split_csv_line(line);
    check<DataError>(header.size() >= 3 && header[0] == "item_id" && header[1] == "timestamp" &&
                         header[2] == "target",
                     "load_dataset: header must start with item_id,timestamp,target; got '" + line + "'");
    std::vector<std::string> cov_names(header.begin() + 3, header.end());
    check<DataError>(static_cast<int>(cov_names.size()) <= kMaxCovariates,
                     "load_dataset: " + std::to_string(cov_names.size()) + " covariate columns exceed the cap of " +
                         std::to_string(kMaxCovariates));

    std::vector<SeriesRecord> records;
    std::map<std::string, size_t> index;
    int64_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto cells = detail::split_csv_line(line);
        check<DataError>(cells.size() == header.size(),
                         "load_dataset: line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                             " cells, expected " + std::to_string(header.size()));
        const std::string& item = cells[0];
        auto [it, inserted] = index.try_emplace(item, records.size());
        if (inserted) {
            SeriesRecord rec;
            rec.item_id = item;
            rec.covariate_names = cov_names;
            rec.covariates.resize(cov_names.size());
            records.push_back(std::move(rec));
        }
        SeriesRecord& rec = records[it->second];
        int64_t ts;
        try {
            ts = std::stoll(cells[1]);
        } catch (const std::exception&) {
            throw DataError("load_dataset: line " + std::to_string(line_no) + " item '" + item +
                            "': bad timestamp '" + cells[1] + "'");
        }
        if (!rec.timestamps.empty() && ts <= rec.timestamps.back())
            throw DataError("load_dataset: line " + std::to_string(line_no) + " item '" + item +
                            "': timestamp " + std::to_string(ts) + " not strictly increasing (previous " +
                            std::to_string(rec.timestamps.back()) + ")");
        rec.timestamps.push_back(ts);
        rec.target.push_back(detail::parse_value(cells[2]));
        for (size_t m = 0; m < cov_names.size(); ++m) rec.covariates[m].push_back(detail::parse_value(cells[3 + m]));
    }

    std::vector<std::string> known = meta.value("known_future", std::vector<std::string>{});
    const int horizon = meta.value("horizon", 0);
    const std::string freq = meta.value("freq", "u");
    for (SeriesRecord& rec : records) {
        rec.freq = freq;
        rec.horizon = horizon;
        for (const std::string& name : known) {
            auto it = std::find(rec.covariate_names.begin(), rec.covariate_names.end(), name);
            check<DataError>(it != rec.covariate_names.end(),
                             "load_dataset: known_future column '" + name + "' not in header");
            const int col = static_cast<int>(it - rec.covariate_names.begin());
            rec.known_future_cols.push_back(col);
            for (size_t t = 0; t < rec.covariates[col].size(); ++t)
                check<DataError>(!std::isnan(rec.covariates[col][t]),
                                 "load_dataset: item '" + rec.item_id + "': NaN in known-future column '" + name +
                                     "' at row " + std::to_string(t));
        }
    }
    return records;
}

inline void write_dataset(const std::vector<SeriesRecord>& records, const std::string& csv_path,
                          const std::string& metadata_path) {
    check<ContractError>(!records.empty(), "write_dataset: no records");
    std::ofstream out(csv_path);
    check<DataError>(out.good(), "write_dataset: cannot open " + csv_path);
    out << "item_id,timestamp,target";
    for (const std::string& name : records[0].covariate_names) out << ',' << name;
    out << '\n';
    out.precision(17);
    for (const SeriesRecord& rec : records)
        for (int64_t t = 0; t < rec.length(); ++t) {
            out << rec.item_id << ',' << rec.timestamps[t] << ',';
            if (std::isnan(rec.target[t]))
                out << "nan";
            else
                out << rec.target[t];
            for (const auto& col : rec.covariates) out << ',' << col[t];
            out << '\n';
        }
    nlohmann::json meta;
    meta["freq"] = records[0].freq;
    meta["horizon"] = records[0].horizon;
    auto known = nlohmann::json::array();
    for (int col : records[0].known_future_cols) known.push_back(records[0].covariate_names[col]);
    meta["known_future"] = known;
    std::ofstream mout(metadata_path);
    check<DataError>(mout.good(), "write_dataset: cannot open " + metadata_path);
    mout << meta.dump(2) << '\n';
}

}  // namespace bgts
