#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "bgts/datagen.hpp"
#include "bgts/training.hpp"

using namespace bgts;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.blocks = 1;
    cfg.n_heads = 2;
    cfg.embed_dim = 16;
    cfg.ffn_dim = 32;
    cfg.bins = 31;
    cfg.patch_len = 8;
    cfg.head_hidden = 24;
    cfg.t_max = 64;
    cfg.h_max = 16;
    cfg.m_max = 4;
    return cfg;
}

TrainConfig tiny_train(uint64_t seed = 1) {
    TrainConfig t;
    t.steps = 5;
    t.batch_size = 2;
    t.seed = seed;
    t.c_range = {1, 2};
    t.t_range = {16, 24};
    t.h_range = {8, 8};
    t.m_range = {0, 1};
    t.p_2d = 0.25;
    return t;
}

std::vector<SeriesRecord> spike_dataset() {
    SpikeSpec spec;
    spec.sharpness = 5.0;
    spec.length = 600;
    SeriesRecord rec;
    rec.item_id = "spike";
    rec.target = spike_series(spec);
    for (int t = 0; t < spec.length; ++t) rec.timestamps.push_back(t);
    rec.horizon = 8;
    return {rec};
}

}  // namespace

TEST_CASE("sample_batch: determinism and bounds", "[training]") {
    auto records = spike_dataset();
    ModelConfig mcfg = tiny_config();
    TrainConfig tcfg = tiny_train();
    IndexCache cache1, cache2;
    Rng rng1(9), rng2(9);
    TrainBatch a = sample_batch(records, cache1, tcfg, mcfg, rng1);
    TrainBatch b = sample_batch(records, cache2, tcfg, mcfg, rng2);
    REQUIRE(a.episodes.size() == b.episodes.size());
    REQUIRE(a.mode == b.mode);
    for (size_t i = 0; i < a.episodes.size(); ++i) {
        REQUIRE(a.episodes[i].supervision == b.episodes[i].supervision);
        REQUIRE(a.episodes[i].target_slice().values == b.episodes[i].target_slice().values);
    }
    for (const Episode& ep : a.episodes) {
        REQUIRE(ep.C <= kMaxContexts);
        REQUIRE(ep.T <= kMaxLookback);
        REQUIRE(ep.H <= kMaxHorizon);
        REQUIRE(ep.M <= kMaxCovariates);
        REQUIRE(ep.T >= tcfg.t_range.lo);
    }
}

TEST_CASE("sample_batch: p_overfit zero leaves no markers", "[training]") {
    auto records = spike_dataset();
    ModelConfig mcfg = tiny_config();
    TrainConfig tcfg = tiny_train();
    tcfg.p_overfit = 0.0;
    IndexCache cache;
    Rng rng(5);
    for (int rep = 0; rep < 10; ++rep) {
        TrainBatch batch = sample_batch(records, cache, tcfg, mcfg, rng);
        REQUIRE(batch.overfit_fraction == 0.0);
        for (const Episode& ep : batch.episodes) REQUIRE_FALSE(ep.overfit_marked);
    }
}

TEST_CASE("context overfit: forced path copies tail and supervision", "[training]") {
    auto records = spike_dataset();
    ModelConfig mcfg = tiny_config();
    TrainConfig tcfg = tiny_train();
    tcfg.p_overfit = 1.0;
    IndexCache cache;
    const SeriesRecord& rec = records[0];
    RetrievalIndex idx = RetrievalIndex::build(rec, 24, 8, SpaceMode::Y);
    Rng rng(11);
    TrainingPool pool = training_pool(idx, 400, 2, rng);
    Instance target = make_instance(rec, pool.target_start, 24, 8, true);
    std::vector<Instance> ctx;
    for (int64_t s : pool.context_starts) ctx.push_back(make_instance(rec, s, 24, 8, true));
    Episode ep = build_episode(target, ctx, EpisodeMode::Train);
    Episode before = ep;
    Rng orng(13);
    apply_context_overfit(ep, orng, tcfg, mcfg.patch_len);
    REQUIRE(ep.overfit_marked);
    const int rows = ep.T + ep.H;
    auto src = ep.slices[0].channel(ep.M, rows);
    auto dst = ep.target_slice().channel(ep.M, rows);
    // some tail segment of length within [P, T/4] clamped to T was copied
    int copied = 0;
    for (int t = ep.T - 1; t >= 0 && dst[t] == src[t]; --t) ++copied;
    REQUIRE(copied >= std::min(mcfg.patch_len, ep.T));
    // supervision redirected to the context's future
    for (int t = 0; t < ep.H; ++t) REQUIRE(ep.supervision[t] == src[ep.T + t]);
    REQUIRE(ep.supervision != before.supervision);
}

TEST_CASE("context overfit: segment length within bounds over many draws", "[training]") {
    auto records = spike_dataset();
    ModelConfig mcfg = tiny_config();
    TrainConfig tcfg = tiny_train();
    tcfg.p_overfit = 1.0;
    tcfg.t_range = {32, 32};
    IndexCache cache;
    Rng rng(17);
    for (int rep = 0; rep < 30; ++rep) {
        TrainBatch batch = sample_batch(records, cache, tcfg, mcfg, rng);
        for (const Episode& ep : batch.episodes) {
            if (!ep.overfit_marked) continue;
            const int rows = ep.T + ep.H;
            // measure the copied run length against the chosen context
            int best = 0;
            for (int c = 0; c < ep.C; ++c) {
                auto src = ep.slices[c].channel(ep.M, rows);
                auto dst = ep.target_slice().channel(ep.M, rows);
                int run = 0;
                for (int t = ep.T - 1; t >= 0 && dst[t] == src[t]; --t) ++run;
                best = std::max(best, run);
            }
            REQUIRE(best >= mcfg.patch_len);
        }
    }
}

TEST_CASE("context overfit: non-overfit episodes are bitwise unchanged", "[training]") {
    auto records = spike_dataset();
    ModelConfig mcfg = tiny_config();
    TrainConfig tcfg = tiny_train();
    tcfg.p_overfit = 0.0;
    const SeriesRecord& rec = records[0];
    Instance target = make_instance(rec, 300, 24, 8, true);
    std::vector<Instance> ctx{make_instance(rec, 0, 24, 8, true)};
    Episode ep = build_episode(target, ctx, EpisodeMode::Train);
    Episode copy = ep;
    Rng rng(19);
    apply_context_overfit(ep, rng, tcfg, mcfg.patch_len);
    REQUIRE(ep.supervision == copy.supervision);
    REQUIRE(ep.target_slice().values == copy.target_slice().values);
    REQUIRE_FALSE(ep.overfit_marked);
}

TEST_CASE("train_step: determinism and gradient clipping", "[training]") {
    auto records = spike_dataset();
    ModelConfig mcfg = tiny_config();
    TrainConfig tcfg = tiny_train();
    tcfg.clip_norm = 0.5;

    auto run_two_steps = [&] {
        TrainState state = TrainState::init(mcfg, tcfg);
        IndexCache cache;
        std::vector<double> norms;
        for (int s = 0; s < 2; ++s) {
            TrainBatch batch = sample_batch(records, cache, tcfg, mcfg, state.rng);
            StepStats stats = train_step(state, batch, mcfg);
            norms.push_back(stats.grad_norm);
        }
        return std::pair(state.params.arrays()[3].data, norms);
    };
    auto [w1, n1] = run_two_steps();
    auto [w2, n2] = run_two_steps();
    REQUIRE(w1 == w2);  // bitwise
    REQUIRE(n1 == n2);

    // post-clip global norm bounded by the threshold
    TrainState state = TrainState::init(mcfg, tcfg);
    IndexCache cache;
    TrainBatch batch = sample_batch(records, cache, tcfg, mcfg, state.rng);
    Graph g;
    BoundModel bound = bind_model(state.params, &g, true);
    const auto centers = bin_centers(mcfg);
    Tensor total;
    for (const Episode& ep : batch.episodes) {
        Tensor l = reduce_mean(crps_rows(softmax(model_logits(ep, bound, batch.mode), -1), ep.supervision, centers));
        total = total.defined() ? add(total, l) : l;
    }
    g.backward(scale(total, 1.0 / batch.episodes.size()));
    double sq = 0.0;
    for (const Tensor& leaf : bound.leaves)
        for (double gv : leaf.grad()) sq += gv * gv;
    const double norm = std::sqrt(sq);
    const double clip_scale = norm > tcfg.clip_norm ? tcfg.clip_norm / (norm + 1e-12) : 1.0;
    REQUIRE(norm * clip_scale <= tcfg.clip_norm + 1e-9);
}

TEST_CASE("optimization sanity: loss decreases on a fixed tiny batch", "[training]") {
    auto records = spike_dataset();
    ModelConfig mcfg = tiny_config();
    TrainConfig tcfg = tiny_train(3);
    tcfg.steps = 200;
    tcfg.lr = 3e-3;
    tcfg.p_overfit = 0.0;
    TrainState state = TrainState::init(mcfg, tcfg);
    IndexCache cache;
    Rng batch_rng(23);
    TrainBatch batch = sample_batch(records, cache, tcfg, mcfg, batch_rng);

    double first = 0.0, last = 0.0;
    for (int s = 0; s < 200; ++s) {
        StepStats stats = train_step(state, batch, mcfg);
        if (s == 0) first = stats.loss;
        last = stats.loss;
    }
    REQUIRE(last < first);
    REQUIRE(last < 0.5 * first);  // tiny batch should overfit hard
}

TEST_CASE("train loop: non-finite loss aborts the step, state unchanged", "[training]") {
    auto records = spike_dataset();
    ModelConfig mcfg = tiny_config();
    TrainConfig tcfg = tiny_train();
    TrainState state = TrainState::init(mcfg, tcfg);
    IndexCache cache;
    TrainBatch batch = sample_batch(records, cache, tcfg, mcfg, state.rng);
    // poison one episode's supervision
    batch.episodes[0].supervision[0] = std::nan("");
    const auto params_before = state.params.arrays()[0].data;
    const auto step_before = state.step;
    REQUIRE_THROWS_WITH(train_step(state, batch, mcfg), Catch::Matchers::ContainsSubstring("fingerprint"));
    REQUIRE(state.params.arrays()[0].data == params_before);
    REQUIRE(state.step == step_before);
}

TEST_CASE("checkpoint: save/restore resumes bit-identically", "[training]") {
    auto records = spike_dataset();
    ModelConfig mcfg = tiny_config();
    TrainConfig tcfg = tiny_train(7);
    tcfg.steps = 10;

    // uninterrupted 10 steps
    TrainState straight = TrainState::init(mcfg, tcfg);
    train_loop(straight, records, mcfg);

    // 5 steps, save, restore, 5 more
    TrainState half = TrainState::init(mcfg, tcfg);
    train_loop(half, records, mcfg, {}, 5);
    const std::string path = (fs::temp_directory_path() / "bgts_resume.ckpt").string();
    save_train_state(half, mcfg, path);
    auto [mcfg2, resumed] = restore_train_state(path);
    REQUIRE(mcfg2.embed_dim == mcfg.embed_dim);
    REQUIRE(resumed.step == 5);
    train_loop(resumed, records, mcfg2);

    REQUIRE(resumed.step == straight.step);
    for (size_t a = 0; a < straight.params.arrays().size(); ++a)
        REQUIRE(straight.params.arrays()[a].data == resumed.params.arrays()[a].data);  // bitwise
    for (size_t a = 0; a < straight.adam_m.size(); ++a) {
        REQUIRE(straight.adam_m[a] == resumed.adam_m[a]);
        REQUIRE(straight.adam_v[a] == resumed.adam_v[a]);
    }
}

TEST_CASE("checkpoint: corruption and version errors", "[training]") {
    const std::string path = (fs::temp_directory_path() / "bgts_corrupt.ckpt").string();
    {
        std::ofstream out(path, std::ios::binary);
        out << "JUNKJUNKJUNK";
    }
    REQUIRE_THROWS_WITH(restore_train_state(path), Catch::Matchers::ContainsSubstring("magic"));

    // a model checkpoint is not a train state
    ModelConfig mcfg = tiny_config();
    ModelParams params = ModelParams::init(mcfg, Rng(1));
    save_model(params, path);
    REQUIRE_THROWS_AS(restore_train_state(path), FormatError);
}

TEST_CASE("2d-mode batches clamp the window to the wide capacity", "[training]") {
    auto records = spike_dataset();
    ModelConfig mcfg = tiny_config();  // wide capacity 80
    TrainConfig tcfg = tiny_train();
    tcfg.p_2d = 1.0;
    tcfg.t_range = {60, 120};
    tcfg.h_range = {16, 16};
    IndexCache cache;
    Rng rng(29);
    for (int rep = 0; rep < 5; ++rep) {
        TrainBatch batch = sample_batch(records, cache, tcfg, mcfg, rng);
        REQUIRE(batch.mode == ModelMode::TwoD);
        for (const Episode& ep : batch.episodes) REQUIRE(ep.T + ep.H <= mcfg.wide_len());
    }
}
