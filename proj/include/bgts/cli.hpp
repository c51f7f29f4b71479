// Command-line surface: gen-data, build-index, train, forecast, evaluate,
// ablate-noise, pit, dump-attention.
//
// Exit codes: 0 success, 2 config error, 3 training divergence, 4 artifact
// incompatibility, 1 anything else. Every command writes a run manifest
// (command, effective config, seed, input hashes, outputs, wall time) into
// the output directory. All randomness flows from --seed through splittable
// streams; runs are bitwise reproducible at worker count 1 (BGTS_THREADS=1,
// the default).
#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "bgts/inference.hpp"
#include "bgts/training.hpp"

namespace bgts::cli {

namespace fs = std::filesystem;

inline int worker_count() {
    const char* env = std::getenv("BGTS_THREADS");
    if (!env) return 1;
    const int n = std::atoi(env);
    return n >= 1 ? n : 1;
}

class Manifest {
  public:
    Manifest(std::string command, uint64_t seed) : start_(std::chrono::steady_clock::now()) {
        j_["command"] = std::move(command);
        j_["seed"] = seed;
        j_["input_hashes"] = nlohmann::json::object();
        j_["outputs"] = nlohmann::json::array();
    }
    void input(const std::string& path) { j_["input_hashes"][path] = file_content_hash(path); }
    void output(const std::string& path) { j_["outputs"].push_back(path); }
    void config(const nlohmann::json& cfg) { j_["config"] = cfg; }
    void extra(const std::string& key, const nlohmann::json& v) { j_[key] = v; }

    void write(const fs::path& dir) {
        j_["wall_ms"] =
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start_).count();
        std::ofstream out(dir / "manifest.json");
        out << j_.dump(2) << '\n';
    }

  private:
    nlohmann::json j_;
    std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------
// shared helpers

inline ModelParams load_params_any(const std::string& path, ModelConfig& cfg_out) {
    Container c = read_container(path);
    const std::string kind = c.config.value("kind", std::string());
    if (kind == "model") {
        cfg_out = ModelConfig::from_json(c.config["model"]);
        return ModelParams::from_records(cfg_out, c.records);
    }
    if (kind == "train_state") {
        cfg_out = ModelConfig::from_json(c.config["model"]);
        return ModelParams::from_records(cfg_out, c.records);
    }
    throw FormatError("checkpoint: unsupported container kind '" + kind + "' in " + path);
}

struct EvalFlags {
    std::string mode = "3d";
    std::string space = "y";
    std::string feature_policy = "none";
    int k_ctx = 4;
    int c_mult = 4;
    int n_passes = 1;
    bool revin = false;
    bool shuffle = false;
    double mask_frac = 0.0;
    bool adaptive = false;
    int seasonality = 1;
    int horizon = 0;  // 0 = from metadata
    bool pit = false;

    InferenceConfig to_config() const {
        InferenceConfig c;
        c.mode = inf_mode_from_string(mode);
        c.source = context_source_from_string(space);
        c.feature_policy = feature_policy_from_string(feature_policy);
        c.k_ctx = k_ctx;
        c.c_mult = c_mult;
        c.n_passes = n_passes;
        c.revin = revin;
        c.shuffle_covariates = shuffle;
        c.history_mask_frac = mask_frac;
        c.validate();
        return c;
    }
};

struct ItemEvaluation {
    std::string item_id;
    ForecastResult result;
    std::vector<double> truth;
    std::vector<double> history;
    EnsembleSelection selection;
    bool adaptive = false;
};

// Forecast the held-out tail (last H observed points) of every record.
inline std::vector<ItemEvaluation> evaluate_records(const std::vector<SeriesRecord>& records,
                                                    const ModelParams& params, const ModelConfig& mcfg,
                                                    const EvalFlags& flags, uint64_t seed) {
    std::vector<ItemEvaluation> out(records.size());
    auto run_one = [&](size_t i) {
        const SeriesRecord& rec = records[i];
        const int horizon = flags.horizon > 0 ? flags.horizon : rec.horizon;
        check<ConfigError>(horizon >= 1, "evaluate: no horizon in metadata and no --horizon flag");
        ItemEvaluation ev;
        ev.item_id = rec.item_id;
        Rng rng = Rng(seed).split("evaluate").split(rec.item_id);
        if (flags.adaptive) {
            ev.adaptive = true;
            Rng sel_rng = rng.split("select");
            ev.selection = select_configs(rec, params, mcfg, default_candidates(), horizon, sel_rng, {2, 5},
                                          flags.seasonality);
        } else {
            ev.selection.chosen = {flags.to_config()};
            ev.selection.validation_sql = {std::nan("")};
        }
        ev.result = forecast(rec, params, mcfg, ev.selection, horizon, rng);
        ev.truth.assign(rec.target.end() - horizon, rec.target.end());
        ev.history.assign(rec.target.begin(), rec.target.end() - horizon);
        out[i] = std::move(ev);
    };
    const int workers = worker_count();
    if (workers <= 1 || records.size() <= 1) {
        for (size_t i = 0; i < records.size(); ++i) run_one(i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<size_t> next{0};
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (size_t i = next.fetch_add(1); i < records.size(); i = next.fetch_add(1)) run_one(i);
            });
        for (auto& t : pool) t.join();
    }
    return out;
}

inline MetricReport report_from_evaluations(const std::vector<ItemEvaluation>& evals, int seasonality) {
    MetricReport report;
    for (const ItemEvaluation& ev : evals) {
        const auto& pq = ev.result.pq;
        report.add(ev.item_id, "mase", mase(ev.truth, pq.point, ev.history, seasonality));
        report.add(ev.item_id, "wape", wape(ev.truth, pq.point));
        auto ql = quantile_losses(ev.truth, pq.quantiles, report.quantile_levels, ev.history, seasonality);
        report.add(ev.item_id, "sql", ql.sql);
        report.add(ev.item_id, "wql", ql.wql);
        // mean CRPS of the binned forecast against the raw observations
        const BinnedForecast& f = ev.result.combined;
        std::vector<double> centers_raw(f.bins);
        for (int i = 0; i < f.bins; ++i) centers_raw[i] = f.stats.denormalize(f.bin_center(i));
        double crps_acc = 0.0;
        for (int t = 0; t < f.horizon; ++t) {
            const double y = std::clamp(ev.truth[t], centers_raw.front(), centers_raw.back());
            crps_acc += crps_discrete(f.row(t), centers_raw, y);
        }
        report.add(ev.item_id, "crps", crps_acc / f.horizon);
    }
    report.finalize();
    return report;
}

inline void write_forecast_csv(const std::vector<ItemEvaluation>& evals, const std::string& path) {
    std::ofstream out(path);
    out.precision(17);
    out << "item_id,step,point";
    for (double level : default_quantile_levels()) out << ",q" << level;
    out << '\n';
    for (const ItemEvaluation& ev : evals)
        for (size_t t = 0; t < ev.result.pq.point.size(); ++t) {
            out << ev.item_id << ',' << t << ',' << ev.result.pq.point[t];
            for (size_t q = 0; q < ev.result.pq.quantiles.size(); ++q) out << ',' << ev.result.pq.quantiles[q][t];
            out << '\n';
        }
}

inline void write_metric_csv(const MetricReport& report, const std::string& path) {
    std::ofstream out(path);
    out.precision(17);
    out << "item_id,metric,value\n";
    for (const auto& [item, metrics] : report.per_item)
        for (const auto& [name, v] : metrics) out << item << ',' << name << ',' << v << '\n';
    for (const auto& [name, v] : report.macro) out << "__macro__," << name << ',' << v << '\n';
}

inline nlohmann::json report_to_json(const MetricReport& report) {
    nlohmann::json j;
    j["macro"] = report.macro;
    j["per_item"] = report.per_item;
    j["undefined_counts"] = report.undefined_counts;
    j["quantile_levels"] = report.quantile_levels;
    return j;
}

inline std::vector<double> collect_pit_values(const std::vector<ItemEvaluation>& evals) {
    std::vector<double> pit;
    for (const ItemEvaluation& ev : evals) {
        const BinnedForecast& f = ev.result.combined;
        const double width_raw = (f.value_hi - f.value_lo) / f.bins * (f.stats.std + kNormEps);
        const double lo_raw = f.stats.denormalize(f.value_lo);
        for (int t = 0; t < f.horizon; ++t) pit.push_back(pit_value(f.row(t), lo_raw, width_raw, ev.truth[t]));
    }
    return pit;
}

inline void write_pit_csv(const std::vector<double>& freq, const std::string& path) {
    std::ofstream out(path);
    out.precision(17);
    out << "bin_lo,bin_hi,frequency\n";
    for (size_t b = 0; b < freq.size(); ++b)
        out << static_cast<double>(b) / freq.size() << ',' << static_cast<double>(b + 1) / freq.size() << ','
            << freq[b] << '\n';
}

// ---------------------------------------------------------------------------
// gen-data

inline std::vector<SeriesRecord> generate_from_spec(const nlohmann::json& spec) {
    const std::string type = spec.value("type", std::string());
    check<ConfigError>(type == "spike" || type == "scm", "spec: field 'type' must be \"spike\" or \"scm\"");
    const uint64_t seed = spec.value("seed", 1ull);
    const int length = spec.value("length", 1000);
    const int n_items = spec.value("n_items", 1);
    check<ConfigError>(length >= 2, "spec: field 'length' must be >= 2");
    check<ConfigError>(n_items >= 1, "spec: field 'n_items' must be >= 1");
    std::vector<SeriesRecord> records;
    for (int item = 0; item < n_items; ++item) {
        SeriesRecord rec;
        const std::string item_id = "item" + std::to_string(item + 1);
        if (type == "spike") {
            SpikeSpec s;
            s.sharpness = spec.value("k", 5.0);
            s.length = length;
            rec.item_id = item_id;
            rec.target = spike_series(s);
            rec.timestamps.resize(length);
            for (int t = 0; t < length; ++t) rec.timestamps[t] = t;
        } else {
            ScmTaskSpec task;
            if (spec.contains("scm")) {
                const auto& sj = spec["scm"];
                task.n_nodes = sj.value("n_nodes", 3);
                for (const auto& e : sj.value("edges", std::vector<std::vector<int>>{}))
                    task.edges.push_back({e.at(0), e.at(1)});
                for (const auto& kj : sj.value("kernels", nlohmann::json::array())) {
                    ScmKernel k;
                    k.kind = kernel_from_string(kj.value("kind", std::string("rbf")));
                    k.lengthscale = kj.value("lengthscale", 20.0);
                    k.period = kj.value("period", 24.0);
                    k.scale = kj.value("scale", 1.0);
                    task.kernels.push_back(k);
                }
                task.exposure = sj.value("exposure", std::vector<int>{});
                task.target_parents = sj.value("target_parents", std::vector<int>{});
                task.process_noise = sj.value("process_noise", 0.05);
                task.measurement_noise = sj.value("measurement_noise", 0.05);
                task.regime_shift_prob = sj.value("regime_shift_prob", 0.0);
            } else {
                task = make_random_scm_spec(seed + static_cast<uint64_t>(item) * 7919,
                                            spec.value("n_nodes", 4));
            }
            task.seed = seed + static_cast<uint64_t>(item) * 7919;
            try {
                task.validate();
            } catch (const ConfigError& e) {
                throw ConfigError(std::string("spec: field 'scm': ") + e.what());
            }
            rec = scm_series(task, length, item_id);
        }
        rec.freq = spec.value("freq", std::string("u"));
        rec.horizon = spec.value("horizon", 24);
        if (spec.contains("noise")) {
            NoiseSpec ns;
            ns.kind = noise_kind_from_string(spec["noise"].value("kind", std::string("gaussian")));
            ns.kappa = spec["noise"].value("kappa", 0.0);
            ns.seed = seed + 31 * static_cast<uint64_t>(item);
            rec.target = inject_noise(rec.target, ns);
        }
        if (spec.value("time_index", false)) rec = add_time_index(rec);
        records.push_back(std::move(rec));
    }
    return records;
}

// ---------------------------------------------------------------------------
// commands

inline int cmd_gen_data(const std::string& spec_path, const std::string& out_dir, int64_t seed_override) {
    std::ifstream in(spec_path);
    check<ConfigError>(in.good(), "gen-data: cannot open spec " + spec_path);
    nlohmann::json spec;
    try {
        spec = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("gen-data: spec is not valid json: ") + e.what());
    }
    if (seed_override >= 0) spec["seed"] = static_cast<uint64_t>(seed_override);
    fs::create_directories(out_dir);
    Manifest manifest("gen-data", spec.value("seed", 1ull));
    manifest.input(spec_path);
    manifest.config(spec);
    auto records = generate_from_spec(spec);
    const std::string csv = (fs::path(out_dir) / "data.csv").string();
    const std::string meta = (fs::path(out_dir) / "metadata.json").string();
    write_dataset(records, csv, meta);
    manifest.output(csv);
    manifest.output(meta);
    manifest.write(out_dir);
    return 0;
}

inline int cmd_build_index(const std::string& data_dir, int T, int H, const std::string& space,
                           const std::string& out_path) {
    const std::string csv = (fs::path(data_dir) / "data.csv").string();
    const std::string meta = (fs::path(data_dir) / "metadata.json").string();
    auto records = load_dataset(csv, meta);
    Manifest manifest("build-index", 0);
    manifest.input(csv);
    manifest.config({{"T", T}, {"H", H}, {"space", space}});
    std::vector<RetrievalIndex> indexes;
    for (const SeriesRecord& rec : records)
        indexes.push_back(RetrievalIndex::build(rec, T, H, space_from_string(space)));
    save_index_cache(indexes, out_path);
    manifest.output(out_path);
    manifest.write(fs::path(out_path).parent_path().empty() ? "." : fs::path(out_path).parent_path());
    return 0;
}

struct TrainCliOptions {
    std::string data_dir;
    std::string config_path;
    std::string out_checkpoint;
    std::string log_path;
    std::string resume_path;
    int64_t steps = -1;
    int64_t seed = -1;
    bool no_context_overfit = false;
    bool export_f32 = false;
};

inline std::pair<ModelConfig, TrainConfig> parse_train_config(const std::string& path) {
    ModelConfig mcfg = ModelConfig::desk();
    TrainConfig tcfg;
    if (path.empty()) return {mcfg, tcfg};
    std::ifstream in(path);
    check<ConfigError>(in.good(), "train: cannot open config " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train: config is not valid json: ") + e.what());
    }
    const std::string profile = j.value("profile", std::string("desk"));
    check<ConfigError>(profile == "desk" || profile == "paper", "train: field 'profile' must be desk or paper");
    mcfg = profile == "desk" ? ModelConfig::desk() : ModelConfig::paper();
    if (j.contains("model")) {
        nlohmann::json merged = mcfg.to_json();
        merged.update(j["model"]);
        mcfg = ModelConfig::from_json(merged);
    }
    if (j.contains("train")) tcfg = TrainConfig::from_json(j["train"]);
    return {mcfg, tcfg};
}

inline int cmd_train(const TrainCliOptions& opt) {
    const std::string csv = (fs::path(opt.data_dir) / "data.csv").string();
    const std::string meta = (fs::path(opt.data_dir) / "metadata.json").string();
    auto records = load_dataset(csv, meta);

    ModelConfig mcfg;
    TrainState state;
    if (!opt.resume_path.empty()) {
        std::tie(mcfg, state) = restore_train_state(opt.resume_path);
        if (opt.steps > 0) state.config.steps = opt.steps;
    } else {
        auto [m, t] = parse_train_config(opt.config_path);
        mcfg = m;
        if (opt.steps > 0) t.steps = opt.steps;
        if (opt.seed >= 0) t.seed = static_cast<uint64_t>(opt.seed);
        if (opt.no_context_overfit) t.p_overfit = 0.0;
        state = TrainState::init(mcfg, t);
    }

    Manifest manifest("train", state.config.seed);
    manifest.input(csv);
    if (!opt.config_path.empty()) manifest.input(opt.config_path);
    manifest.config({{"model", mcfg.to_json()}, {"train", state.config.to_json()}});

    const std::string log_path =
        opt.log_path.empty() ? (fs::path(opt.out_checkpoint).parent_path() / "train_log.csv").string() : opt.log_path;
    if (!fs::path(log_path).parent_path().empty()) fs::create_directories(fs::path(log_path).parent_path());
    const bool fresh_log = opt.resume_path.empty() || !fs::exists(log_path);
    std::ofstream log(log_path, fresh_log ? std::ios::trunc : std::ios::app);
    log.precision(17);
    if (fresh_log) log << "step,loss,grad_norm,overfit_fraction,wall_ms\n";

    train_loop(state, records, mcfg, [&](const TrainLogRow& row) {
        log << row.step << ',' << row.loss << ',' << row.grad_norm << ',' << row.overfit_fraction << ','
            << row.wall_ms << '\n';
    });
    log.flush();

    if (!fs::path(opt.out_checkpoint).parent_path().empty())
        fs::create_directories(fs::path(opt.out_checkpoint).parent_path());
    save_train_state(state, mcfg, opt.out_checkpoint);
    if (opt.export_f32) save_model(state.params, opt.out_checkpoint + ".f32", true);
    manifest.output(opt.out_checkpoint);
    manifest.output(log_path);
    manifest.extra("crps_boundary_clamps", crps_clamp_counter().load());
    const fs::path out_dir = fs::path(opt.out_checkpoint).parent_path();
    manifest.write(out_dir.empty() ? "." : out_dir);
    return 0;
}

struct ForecastCliOptions {
    std::string checkpoint;
    std::string data_dir;
    std::string out_dir;
    EvalFlags flags;
    uint64_t seed = 1;
    bool with_metrics = false;  // evaluate vs forecast
};

inline int cmd_forecast(const ForecastCliOptions& opt) {
    const std::string csv = (fs::path(opt.data_dir) / "data.csv").string();
    const std::string meta = (fs::path(opt.data_dir) / "metadata.json").string();
    auto records = load_dataset(csv, meta);
    ModelConfig mcfg;
    ModelParams params = load_params_any(opt.checkpoint, mcfg);
    fs::create_directories(opt.out_dir);
    Manifest manifest(opt.with_metrics ? "evaluate" : "forecast", opt.seed);
    manifest.input(csv);
    manifest.input(opt.checkpoint);
    manifest.config({{"mode", opt.flags.mode},
                     {"space", opt.flags.space},
                     {"feature_policy", opt.flags.feature_policy},
                     {"k_ctx", opt.flags.k_ctx},
                     {"c_mult", opt.flags.c_mult},
                     {"n_passes", opt.flags.n_passes},
                     {"revin", opt.flags.revin},
                     {"adaptive", opt.flags.adaptive},
                     {"seasonality", opt.flags.seasonality}});

    auto evals = evaluate_records(records, params, mcfg, opt.flags, opt.seed);
    const std::string fc_path = (fs::path(opt.out_dir) / "forecasts.csv").string();
    write_forecast_csv(evals, fc_path);
    manifest.output(fc_path);

    if (opt.flags.adaptive) {
        nlohmann::json sel;
        for (const ItemEvaluation& ev : evals) sel[ev.item_id] = ev.selection.to_json();
        const std::string sel_path = (fs::path(opt.out_dir) / "selection.json").string();
        std::ofstream out(sel_path);
        out << sel.dump(2) << '\n';
        manifest.output(sel_path);
    }
    if (opt.with_metrics) {
        MetricReport report = report_from_evaluations(evals, opt.flags.seasonality);
        const std::string mc = (fs::path(opt.out_dir) / "metrics.csv").string();
        const std::string mj = (fs::path(opt.out_dir) / "metrics.json").string();
        write_metric_csv(report, mc);
        std::ofstream out(mj);
        out << report_to_json(report).dump(2) << '\n';
        manifest.output(mc);
        manifest.output(mj);
    }
    if (opt.flags.pit) {
        auto pit = pit_histogram(collect_pit_values(evals), 10);
        const std::string pp = (fs::path(opt.out_dir) / "pit.csv").string();
        write_pit_csv(pit, pp);
        manifest.output(pp);
    }
    manifest.write(opt.out_dir);
    return 0;
}

inline int cmd_ablate_noise(const ForecastCliOptions& opt, const std::vector<std::string>& kinds,
                            const std::vector<double>& kappas) {
    const std::string csv = (fs::path(opt.data_dir) / "data.csv").string();
    const std::string meta = (fs::path(opt.data_dir) / "metadata.json").string();
    auto records = load_dataset(csv, meta);
    ModelConfig mcfg;
    ModelParams params = load_params_any(opt.checkpoint, mcfg);
    fs::create_directories(opt.out_dir);
    Manifest manifest("ablate-noise", opt.seed);
    manifest.input(csv);
    manifest.input(opt.checkpoint);
    manifest.config({{"kinds", kinds}, {"kappas", kappas}});

    const std::string table_path = (fs::path(opt.out_dir) / "noise_ablation.csv").string();
    std::ofstream out(table_path);
    out.precision(17);
    out << "kind,kappa,metric,value\n";
    for (const std::string& kind_name : kinds) {
        const NoiseKind kind = noise_kind_from_string(kind_name);
        for (double kappa : kappas) {
            std::vector<SeriesRecord> noisy = records;
            for (size_t i = 0; i < noisy.size(); ++i) {
                NoiseSpec ns;
                ns.kind = kind;
                ns.kappa = kappa;
                ns.seed = opt.seed ^ fnv1a64(kind_name) ^ (static_cast<uint64_t>(i) * 0x9e3779b9ull);
                noisy[i].target = inject_noise(noisy[i].target, ns);
            }
            auto evals = evaluate_records(noisy, params, mcfg, opt.flags, opt.seed);
            MetricReport report = report_from_evaluations(evals, opt.flags.seasonality);
            for (const auto& [name, v] : report.macro) out << kind_name << ',' << kappa << ',' << name << ',' << v << '\n';
        }
    }
    manifest.output(table_path);
    manifest.write(opt.out_dir);
    return 0;
}

inline int cmd_dump_attention(const ForecastCliOptions& opt, int layer, const std::string& axis_name,
                              int query_position) {
    const std::string csv = (fs::path(opt.data_dir) / "data.csv").string();
    const std::string meta = (fs::path(opt.data_dir) / "metadata.json").string();
    auto records = load_dataset(csv, meta);
    check<DataError>(!records.empty(), "dump-attention: empty dataset");
    ModelConfig mcfg;
    ModelParams params = load_params_any(opt.checkpoint, mcfg);
    int axis = -1;
    if (axis_name == "variable") axis = 0;
    else if (axis_name == "temporal") axis = 1;
    else if (axis_name == "context") axis = 2;
    else throw ConfigError("dump-attention: axis must be variable, temporal, or context");

    const SeriesRecord& rec = records[0];
    const int horizon = opt.flags.horizon > 0 ? opt.flags.horizon : rec.horizon;
    PreparedEpisode prep = prepare_episode(rec, mcfg, opt.flags.to_config(), horizon);
    auto rows = dump_attention(prep.episode, params, mcfg, layer, axis, query_position);

    fs::create_directories(opt.out_dir);
    Manifest manifest("dump-attention", opt.seed);
    manifest.input(csv);
    manifest.input(opt.checkpoint);
    manifest.config({{"layer", layer}, {"axis", axis_name}, {"query_position", query_position}});
    const std::string path = (fs::path(opt.out_dir) / "attention.csv").string();
    std::ofstream out(path);
    out.precision(17);
    out << "head,key,weight\n";
    for (size_t h = 0; h < rows.size(); ++h)
        for (size_t k = 0; k < rows[h].size(); ++k) out << h << ',' << k << ',' << rows[h][k] << '\n';
    manifest.output(path);
    manifest.write(opt.out_dir);
    return 0;
}

// ---------------------------------------------------------------------------
// dispatch

inline int run_cli(std::vector<std::string> args) {
    CLI::App app{"binned probabilistic time-series forecaster with in-context episodes"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset from a json spec");
    std::string spec_path, out_dir;
    int64_t seed = -1;
    gen->add_option("--spec", spec_path, "spec json path")->required();
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--seed", seed, "root seed override");

    // build-index
    auto* bidx = app.add_subcommand("build-index", "precompute a retrieval index sidecar cache");
    std::string bidx_data, bidx_out, bidx_space = "y";
    int bidx_t = 96, bidx_h = 24;
    bidx->add_option("--data", bidx_data, "dataset directory")->required();
    bidx->add_option("--out", bidx_out, "cache file path")->required();
    bidx->add_option("--lookback", bidx_t, "lookback length");
    bidx->add_option("--horizon", bidx_h, "horizon length");
    bidx->add_option("--space", bidx_space, "retrieval space: y, x, xy");

    // train
    auto* train = app.add_subcommand("train", "train a model");
    TrainCliOptions topt;
    train->add_option("--data", topt.data_dir, "dataset directory")->required();
    train->add_option("--config", topt.config_path, "train config json");
    train->add_option("--out", topt.out_checkpoint, "output checkpoint path")->required();
    train->add_option("--log", topt.log_path, "training log csv path");
    train->add_option("--resume", topt.resume_path, "resume from checkpoint");
    train->add_option("--steps", topt.steps, "step count override");
    train->add_option("--seed", topt.seed, "seed override");
    train->add_flag("--no-context-overfit", topt.no_context_overfit, "disable the context-overfitting augmentation");
    train->add_flag("--export-f32", topt.export_f32, "also export a 32-bit model checkpoint");

    // forecast / evaluate / ablate-noise / pit / dump-attention share flags
    ForecastCliOptions fopt;
    auto add_eval_flags = [&](CLI::App* cmd, bool required_ckpt = true) {
        auto* o = cmd->add_option("--checkpoint", fopt.checkpoint, "model or train-state checkpoint");
        if (required_ckpt) o->required();
        cmd->add_option("--data", fopt.data_dir, "dataset directory")->required();
        cmd->add_option("--out", fopt.out_dir, "output directory")->required();
        cmd->add_option("--mode", fopt.flags.mode, "2d, 3d, or ensemble");
        cmd->add_option("--space", fopt.flags.space, "context source: y, x, xy, uniform");
        cmd->add_option("--feature-policy", fopt.flags.feature_policy, "none, running_index, blank_column, calendar");
        cmd->add_option("--k-ctx", fopt.flags.k_ctx, "contexts per episode");
        cmd->add_option("--c-mult", fopt.flags.c_mult, "lookback = c_mult * horizon");
        cmd->add_option("--n-passes", fopt.flags.n_passes, "stochastic forward passes (1-4)");
        cmd->add_flag("--revin", fopt.flags.revin, "reversible instance normalization");
        cmd->add_flag("--shuffle-covariates", fopt.flags.shuffle, "shuffle covariate columns per pass");
        cmd->add_option("--history-mask-frac", fopt.flags.mask_frac, "fraction of history masked per pass");
        cmd->add_flag("--adaptive", fopt.flags.adaptive, "rolling-validation config selection");
        cmd->add_option("--seasonality", fopt.flags.seasonality, "seasonal-naive period for MASE/SQL");
        cmd->add_option("--horizon", fopt.flags.horizon, "horizon override");
        cmd->add_option("--seed", fopt.seed, "root seed");
    };
    auto* fc = app.add_subcommand("forecast", "forecast the held-out tail of each series");
    add_eval_flags(fc);
    fc->add_flag("--pit", fopt.flags.pit, "also write the pit histogram");
    auto* ev = app.add_subcommand("evaluate", "forecast and score the held-out tail");
    add_eval_flags(ev);
    ev->add_flag("--pit", fopt.flags.pit, "also write the pit histogram");

    auto* ab = app.add_subcommand("ablate-noise", "noise-injection sweep");
    add_eval_flags(ab);
    std::vector<std::string> ab_kinds{"gaussian", "random_walk", "periodic"};
    std::vector<double> ab_kappas = kappa_grid();
    ab->add_option("--kinds", ab_kinds, "noise kinds");
    ab->add_option("--kappas", ab_kappas, "kappa grid");

    auto* pit = app.add_subcommand("pit", "pit calibration histogram");
    add_eval_flags(pit);

    auto* da = app.add_subcommand("dump-attention", "dump softmaxed attention rows");
    add_eval_flags(da);
    int da_layer = 0, da_query = 0;
    std::string da_axis = "temporal";
    da->add_option("--layer", da_layer, "block index");
    da->add_option("--axis", da_axis, "variable, temporal, or context");
    da->add_option("--query", da_query, "query position along the axis");

    std::vector<const char*> argv;
    argv.push_back("bgts");
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(spec_path, out_dir, seed);
        if (bidx->parsed()) return cmd_build_index(bidx_data, bidx_t, bidx_h, bidx_space, bidx_out);
        if (train->parsed()) return cmd_train(topt);
        if (fc->parsed()) {
            fopt.with_metrics = false;
            return cmd_forecast(fopt);
        }
        if (ev->parsed()) {
            fopt.with_metrics = true;
            return cmd_forecast(fopt);
        }
        if (ab->parsed()) return cmd_ablate_noise(fopt, ab_kinds, ab_kappas);
        if (pit->parsed()) {
            fopt.flags.pit = true;
            fopt.with_metrics = false;
            return cmd_forecast(fopt);
        }
        if (da->parsed()) return cmd_dump_attention(fopt, da_layer, da_axis, da_query);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const TrainingDivergence& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace bgts::cli
