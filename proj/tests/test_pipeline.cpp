#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "mates/corpus.hpp"
#include "mates/error.hpp"
#include "mates/pipeline.hpp"
#include "mates/rng.hpp"

using namespace mates;

namespace {

struct TempPath {
    std::string path;
    explicit TempPath(std::string p) : path(std::move(p)) {}
    ~TempPath() { std::remove(path.c_str()); }
};

// Three stages of twenty steps on a bigram model: collections at steps 20 and
// 40, evaluations every 4 steps, k = 120 of a 600-example pool.
CorpusSplit tiny_corpus(std::uint64_t seed = 11) {
    CorpusSizes sizes;
    sizes.train = 600;
    sizes.holdout = 300;
    sizes.reference = 64;
    QualityMix mix;
    mix.clean = 0.5;
    mix.noise = 0.3;
    mix.shuffled = 0.2;
    return generate(seed, sizes, mix, 64, 16);
}

PipelineConfig tiny_config(SelectionMode mode, std::uint64_t seed) {
    PipelineConfig c;
    c.total_steps = 60;
    c.update_interval = 20;
    c.batch_size = 8;
    c.probe_budget_first = 40;
    c.probe_budget_later = 25;
    c.selection_ratio = 0.2;
    c.tau = 1.0;
    c.mode = mode;
    c.static_stage = 0;
    c.seed = seed;
    c.model.arch = Arch::bigram;
    c.model.vocab_size = 64;
    c.model.context_len = 16;
    c.schedule = default_schedule(c.total_steps, c.update_interval);
    c.probe.reference_batch = 32;
    c.fit.features.dim = 512;
    c.fit.features.orders = {1, 2};
    return c;
}

std::set<std::int64_t> id_set(const std::vector<Example>& xs) {
    std::set<std::int64_t> ids;
    for (const Example& x : xs) ids.insert(x.id);
    return ids;
}

std::vector<SelectionRecord> stage_slice(const std::vector<SelectionRecord>& all,
                                         std::int64_t stage) {
    std::vector<SelectionRecord> out;
    for (const SelectionRecord& r : all)
        if (r.stage == stage) out.push_back(r);
    return out;
}

bool same_curves(const RunReport& a, const RunReport& b) {
    return a.eval_points == b.eval_points && a.selections == b.selections &&
           a.stage_spearman == b.stage_spearman && a.ledger == b.ledger;
}

}  // namespace

TEST_CASE("a mates run reports every stage artifact") {
    const CorpusSplit corpus = tiny_corpus();
    const PipelineConfig cfg = tiny_config(SelectionMode::mates, 3);
    RunArtifacts art;
    const RunReport report = run_mates(corpus, cfg, &art);

    CHECK(report.completed);
    CHECK(report.error.empty());
    CHECK(report.seed == 3);
    CHECK(report.config == cfg);

    REQUIRE(report.eval_points.size() == 15);
    for (std::size_t i = 0; i < report.eval_points.size(); ++i) {
        const EvalPoint& p = report.eval_points[i];
        CHECK(p.step == static_cast<std::int64_t>(4 * (i + 1)));
        CHECK(std::isfinite(p.ref_loss));
        if (i > 0) CHECK(p.flops >= report.eval_points[i - 1].flops);
    }
    CHECK(report.eval_points.back().flops == ledger_total(report.ledger));

    REQUIRE(report.stage_spearman.size() == 2);
    CHECK(report.stage_spearman[0].step == 20);
    CHECK(report.stage_spearman[1].step == 40);
    for (const StageCorrelation& c : report.stage_spearman) {
        CHECK(c.rho >= -1.0);
        CHECK(c.rho <= 1.0);
    }

    const std::set<std::int64_t> pool_ids = id_set(corpus.train_pool);
    REQUIRE(report.selections.size() == 3 * 120);
    for (std::int64_t s = 0; s < 3; ++s) {
        const auto slice = stage_slice(report.selections, s);
        CHECK(slice.size() == 120);
        std::set<std::int64_t> distinct;
        for (const SelectionRecord& r : slice) {
            CHECK(pool_ids.count(r.id) == 1);
            distinct.insert(r.id);
            if (s == 0) CHECK(r.score == 0.0);
        }
        CHECK(distinct.size() == 120);
    }

    CHECK(report.ledger.model_pretraining > 0);
    CHECK(report.ledger.oracle_collection > 0);
    CHECK(report.ledger.influence_training > 0);
    CHECK(report.ledger.influence_inference > 0);

    CHECK(art.model.step == 60);
    CHECK(art.optimizer.t_opt == 60);
    CHECK(art.has_regressor);
    REQUIRE(art.records.size() == 65);
    const std::set<std::int64_t> holdout_ids = id_set(corpus.holdout);
    std::set<std::int64_t> probed;
    std::int64_t at_20 = 0;
    std::int64_t at_40 = 0;
    for (const OracleRecord& r : art.records) {
        CHECK(holdout_ids.count(r.example_id) == 1);
        probed.insert(r.example_id);
        if (r.step == 20) ++at_20;
        if (r.step == 40) ++at_40;
    }
    CHECK(probed.size() == 65);
    CHECK(at_20 == 40);
    CHECK(at_40 == 25);
}

TEST_CASE("a fixed seed reproduces the report bitwise") {
    const CorpusSplit corpus = tiny_corpus();
    const PipelineConfig cfg = tiny_config(SelectionMode::mates, 5);
    const RunReport a = run_pipeline(corpus, cfg);
    const RunReport b = run_pipeline(corpus, cfg);
    CHECK(a == b);
    CHECK(report_to_json(a) == report_to_json(b));

    PipelineConfig other = cfg;
    other.seed = 6;
    const RunReport c = run_pipeline(corpus, other);
    CHECK(a.eval_points != c.eval_points);
}

TEST_CASE("a warmup-only run matches the random baseline") {
    const CorpusSplit corpus = tiny_corpus();
    PipelineConfig cfg = tiny_config(SelectionMode::mates, 7);
    cfg.total_steps = 20;
    cfg.update_interval = 20;
    cfg.schedule = default_schedule(20, 20);
    PipelineConfig rnd = cfg;
    rnd.mode = SelectionMode::random;

    const RunReport a = run_mates(corpus, cfg);
    const RunReport b = run_baseline(corpus, rnd);
    CHECK(a.completed);
    CHECK(b.completed);
    CHECK(a.stage_spearman.empty());
    CHECK(b.stage_spearman.empty());
    CHECK(same_curves(a, b));
    CHECK(a.config != b.config);
}

TEST_CASE("random and ngram modes spend nothing on selection") {
    const CorpusSplit corpus = tiny_corpus();
    for (SelectionMode mode : {SelectionMode::random, SelectionMode::ngram}) {
        const PipelineConfig cfg = tiny_config(mode, 13);
        const RunReport report = run_baseline(corpus, cfg);
        CHECK(report.completed);
        CHECK(report.ledger.oracle_collection == 0);
        CHECK(report.ledger.influence_training == 0);
        CHECK(report.ledger.influence_inference == 0);
        CHECK(report.ledger.model_pretraining > 0);
        CHECK(report.stage_spearman.empty());
    }
}

TEST_CASE("ngram selections carry the proximity weights as scores") {
    const CorpusSplit corpus = tiny_corpus();
    const PipelineConfig cfg = tiny_config(SelectionMode::ngram, 17);
    const RunReport report = run_baseline(corpus, cfg);
    REQUIRE(report.completed);

    const std::vector<double> weights =
        ngram_proximity_weights(corpus.train_pool, corpus.reference);
    std::vector<double> weight_of(corpus.train_pool.size());
    for (std::size_t i = 0; i < corpus.train_pool.size(); ++i)
        weight_of[i] = weights[i];

    for (const SelectionRecord& r : stage_slice(report.selections, 1)) {
        const auto it = std::find_if(corpus.train_pool.begin(), corpus.train_pool.end(),
                                     [&](const Example& x) { return x.id == r.id; });
        REQUIRE(it != corpus.train_pool.end());
        const std::size_t pos =
            static_cast<std::size_t>(it - corpus.train_pool.begin());
        CHECK(r.score == weight_of[pos]);
    }
}

TEST_CASE("freezing at the last collection reproduces the adaptive run") {
    const CorpusSplit corpus = tiny_corpus();
    PipelineConfig st = tiny_config(SelectionMode::static_influence, 9);
    st.static_stage = 1;  // the later of the two collections
    const PipelineConfig ad = tiny_config(SelectionMode::mates, 9);

    const RunReport a = run_baseline(corpus, st);
    const RunReport b = run_mates(corpus, ad);
    CHECK(a.completed);
    CHECK(b.completed);
    CHECK(same_curves(a, b));
}

TEST_CASE("a frozen scorer diverges from the adaptive run only after the freeze") {
    const CorpusSplit corpus = tiny_corpus();
    PipelineConfig st = tiny_config(SelectionMode::static_influence, 21);
    st.static_stage = 0;
    const PipelineConfig ad = tiny_config(SelectionMode::mates, 21);

    const RunReport a = run_baseline(corpus, st);
    const RunReport b = run_mates(corpus, ad);
    REQUIRE(a.completed);
    REQUIRE(b.completed);

    for (std::int64_t s : {0, 1}) {
        CHECK(stage_slice(a.selections, s) == stage_slice(b.selections, s));
    }
    REQUIRE(a.stage_spearman.size() == 2);
    REQUIRE(b.stage_spearman.size() == 2);
    CHECK(a.stage_spearman[0] == b.stage_spearman[0]);
    CHECK(stage_slice(a.selections, 2) != stage_slice(b.selections, 2));
    CHECK(a.ledger.influence_training < b.ledger.influence_training);
}

TEST_CASE("the ledger matches its closed-form projection") {
    const CorpusSplit corpus = tiny_corpus();
    for (SelectionMode mode : {SelectionMode::mates, SelectionMode::static_influence,
                               SelectionMode::random, SelectionMode::ngram}) {
        const PipelineConfig cfg = tiny_config(mode, 23);
        const RunReport report = run_pipeline(corpus, cfg);
        REQUIRE(report.completed);
        const FlopsLedger projected = project_ledger(cfg, 600, 300, 64, 16);
        CHECK(report.ledger == projected);
    }
}

TEST_CASE("random-mode compute grows linearly with the step count") {
    const CorpusSplit corpus = tiny_corpus();
    const PipelineConfig cfg = tiny_config(SelectionMode::random, 29);
    const RunReport report = run_baseline(corpus, cfg);
    REQUIRE(report.completed);
    const std::int64_t per_step =
        flops_per_token(cfg.model, FlopsMode::train) * cfg.batch_size * 16;
    for (const EvalPoint& p : report.eval_points) {
        CHECK(p.flops == per_step * p.step);
    }
}

TEST_CASE("probe data stays out of the training pool") {
    const CorpusSplit corpus = tiny_corpus();
    RunArtifacts art;
    const RunReport report = run_mates(corpus, tiny_config(SelectionMode::mates, 31), &art);
    REQUIRE(report.completed);
    const std::set<std::int64_t> pool_ids = id_set(corpus.train_pool);
    const std::set<std::int64_t> holdout_ids = id_set(corpus.holdout);
    for (const SelectionRecord& r : report.selections) {
        CHECK(pool_ids.count(r.id) == 1);
        CHECK(holdout_ids.count(r.id) == 0);
    }
    for (const OracleRecord& r : art.records) {
        CHECK(holdout_ids.count(r.example_id) == 1);
        CHECK(pool_ids.count(r.example_id) == 0);
    }
}

TEST_CASE("a failing collection leaves the completed stages in the report") {
    CorpusSplit corpus = tiny_corpus();
    const PipelineConfig cfg = tiny_config(SelectionMode::mates, 37);

    // Corrupt exactly the holdout block the second collection will probe, so
    // stage 0 and stage 1 finish and the collection at step 40 fails.
    std::vector<std::int64_t> probe_order(corpus.holdout.size());
    std::iota(probe_order.begin(), probe_order.end(), 0);
    Rng(derive_seed(cfg.seed, seed_tag::probe_budget)).shuffle(probe_order);
    for (std::int64_t i = 40; i < 65; ++i) {
        for (std::int32_t& tok : corpus.holdout[static_cast<std::size_t>(probe_order[i])].tokens)
            tok = 9999;
    }

    RunArtifacts art;
    const RunReport report = run_pipeline(corpus, cfg, &art);
    CHECK_FALSE(report.completed);
    CHECK(report.error.find("probes failed") != std::string::npos);
    CHECK(report.eval_points.size() == 10);
    CHECK(report.eval_points.back().step == 40);
    CHECK(stage_slice(report.selections, 0).size() == 120);
    CHECK(stage_slice(report.selections, 1).size() == 120);
    CHECK(stage_slice(report.selections, 2).empty());
    REQUIRE(report.stage_spearman.size() == 1);
    CHECK(report.stage_spearman[0].step == 20);
    CHECK(art.model.step == 40);
    CHECK(art.records.size() == 40);
}

TEST_CASE("bad configurations are rejected before the run starts") {
    const CorpusSplit corpus = tiny_corpus();
    const PipelineConfig good = tiny_config(SelectionMode::mates, 1);
    CHECK(run_pipeline(corpus, good).completed);

    auto broken = [&](auto mutate) {
        PipelineConfig c = good;
        mutate(c);
        return c;
    };

    CHECK_THROWS_AS(
        run_pipeline(corpus, broken([](PipelineConfig& c) { c.total_steps = 0; })),
        ConfigError);
    CHECK_THROWS_AS(
        run_pipeline(corpus, broken([](PipelineConfig& c) { c.update_interval = 7; })),
        ConfigError);
    CHECK_THROWS_AS(
        run_pipeline(corpus, broken([](PipelineConfig& c) { c.update_interval = 40; })),
        ConfigError);
    CHECK_THROWS_AS(
        run_pipeline(corpus, broken([](PipelineConfig& c) { c.update_interval = 120; })),
        ConfigError);
    CHECK_THROWS_AS(
        run_pipeline(corpus, broken([](PipelineConfig& c) { c.batch_size = 0; })),
        ConfigError);
    CHECK_THROWS_AS(
        run_pipeline(corpus, broken([](PipelineConfig& c) { c.selection_ratio = 0.0; })),
        ConfigError);
    CHECK_THROWS_AS(
        run_pipeline(corpus, broken([](PipelineConfig& c) { c.selection_ratio = 1.2; })),
        ConfigError);
    CHECK_THROWS_AS(run_pipeline(corpus, broken([](PipelineConfig& c) { c.tau = -1.0; })),
                    ConfigError);
    CHECK_THROWS_AS(
        run_pipeline(corpus, broken([](PipelineConfig& c) { c.schedule.stable_end = 50; })),
        ConfigError);
    CHECK_THROWS_AS(
        run_pipeline(corpus, broken([](PipelineConfig& c) { c.schedule.warmup = 10; })),
        ConfigError);
    CHECK_THROWS_AS(
        run_pipeline(corpus, broken([](PipelineConfig& c) { c.probe_budget_first = 10; })),
        ConfigError);
    CHECK_THROWS_AS(
        run_pipeline(corpus, broken([](PipelineConfig& c) { c.probe_budget_later = 10; })),
        ConfigError);
    CHECK_THROWS_AS(run_pipeline(corpus, broken([](PipelineConfig& c) {
                        c.probe_budget_first = 200;
                        c.probe_budget_later = 200;
                    })),
                    ContractError);
    CHECK_THROWS_AS(run_pipeline(corpus, broken([](PipelineConfig& c) {
                        c.mode = SelectionMode::static_influence;
                        c.static_stage = 5;
                    })),
                    ConfigError);
    CHECK_THROWS_AS(run_pipeline(corpus, broken([](PipelineConfig& c) {
                        c.mode = SelectionMode::static_influence;
                        c.total_steps = 20;
                        c.update_interval = 20;
                        c.schedule = default_schedule(20, 20);
                    })),
                    ConfigError);

    CorpusSplit no_ref = corpus;
    no_ref.reference.clear();
    CHECK_THROWS_AS(run_pipeline(no_ref, good), ContractError);
    CorpusSplit no_pool = corpus;
    no_pool.train_pool.clear();
    CHECK_THROWS_AS(run_pipeline(no_pool, good), ContractError);

    PipelineConfig rnd = good;
    rnd.mode = SelectionMode::random;
    CHECK_THROWS_AS(run_mates(corpus, rnd), ContractError);
    CHECK_THROWS_AS(run_baseline(corpus, good), ContractError);
}

TEST_CASE("ledger arithmetic is exact and category-checked") {
    FlopsLedger led;
    ledger_add(led, "model pretraining", 7);
    ledger_add(led, "model pretraining", 5);
    ledger_add(led, "oracle collection", 11);
    ledger_add(led, "influence-model training", 13);
    ledger_add(led, "influence-model inference", 17);
    CHECK(led.model_pretraining == 12);
    CHECK(led.oracle_collection == 11);
    CHECK(led.influence_training == 13);
    CHECK(led.influence_inference == 17);
    CHECK(ledger_total(led) == 53);

    CHECK_THROWS_AS(ledger_add(led, "evaluation", 1), ContractError);
    CHECK_THROWS_AS(ledger_add(led, "Model Pretraining", 1), ContractError);
    CHECK_THROWS_AS(ledger_add(led, "model pretraining", -1), ContractError);
}

TEST_CASE("reports round-trip through JSON byte for byte") {
    const CorpusSplit corpus = tiny_corpus();
    const RunReport report = run_pipeline(corpus, tiny_config(SelectionMode::mates, 41));
    REQUIRE(report.completed);

    TempPath tmp("test_report_roundtrip.json");
    save_report(report, tmp.path);
    const RunReport loaded = load_report(tmp.path);
    CHECK(loaded == report);
    CHECK(report_to_json(loaded) == report_to_json(report));

    RunReport failed;
    failed.config = tiny_config(SelectionMode::static_influence, 2);
    failed.seed = 2;
    failed.error = "collection at step 40 needs 25 fresh holdout examples but only 3 remain";
    failed.eval_points.push_back({4, 4.1588830833596715, 1966080});
    failed.stage_spearman.push_back({20, -0.325});
    failed.selections.push_back({17, 0.1 + 0.2, 1});
    ledger_add(failed.ledger, "model pretraining", 1966080);
    TempPath tmp2("test_report_failed.json");
    save_report(failed, tmp2.path);
    CHECK(load_report(tmp2.path) == failed);
}

TEST_CASE("malformed report files are rejected") {
    const CorpusSplit corpus = tiny_corpus();
    PipelineConfig cfg = tiny_config(SelectionMode::random, 43);
    cfg.total_steps = 20;
    cfg.update_interval = 20;
    cfg.schedule = default_schedule(20, 20);
    const RunReport report = run_pipeline(corpus, cfg);
    const std::string good = report_to_json(report);

    auto write_and_load = [](const std::string& text) {
        TempPath tmp("test_report_malformed.json");
        std::ofstream(tmp.path) << text;
        return load_report(tmp.path);
    };

    CHECK_THROWS_AS(write_and_load("{ not json"), ParseError);
    CHECK_THROWS_AS(write_and_load("[1, 2]"), ParseError);

    std::string missing = good;
    missing.replace(missing.find("\"seed\""), 6, "\"sead\"");
    CHECK_THROWS_AS(write_and_load(missing), ParseError);

    std::string bad_type = good;
    bad_type.replace(bad_type.find("\"completed\": true"), 17, "\"completed\": 3333");
    CHECK_THROWS_AS(write_and_load(bad_type), ParseError);

    std::string bad_mode = good;
    bad_mode.replace(bad_mode.find("\"random\""), 8, "\"sorted\"");
    CHECK_THROWS_AS(write_and_load(bad_mode), ParseError);

    CHECK_THROWS_AS(load_report("no_such_report.json"), IOError);

    RunReport poisoned = report;
    poisoned.eval_points.push_back({24, std::nan(""), 0});
    CHECK_THROWS_AS(report_to_json(poisoned), ContractError);
}

TEST_CASE("selection compute share shrinks as the model grows") {
    PipelineConfig cfg;
    cfg.mode = SelectionMode::mates;
    cfg.schedule = default_schedule(cfg.total_steps, cfg.update_interval);

    auto share = [](const FlopsLedger& led) {
        const double sel = static_cast<double>(led.oracle_collection +
                                               led.influence_training +
                                               led.influence_inference);
        return sel / static_cast<double>(ledger_total(led));
    };

    const FlopsLedger small = project_ledger(cfg, 50000, 4000, 1024, 64);
    CHECK(ledger_total(small) == small.model_pretraining + small.oracle_collection +
                                     small.influence_training + small.influence_inference);
    CHECK(share(small) > 0.0);

    PipelineConfig doubled = cfg;
    doubled.model.d_model = cfg.model.d_model * 2;
    const FlopsLedger big = project_ledger(doubled, 50000, 4000, 1024, 64);
    CHECK(big.model_pretraining > small.model_pretraining);
    CHECK(share(big) < share(small));
}

TEST_CASE("schedule defaults track the run shape") {
    const WSDConfig desk = default_schedule(3000, 500);
    CHECK(desk.warmup == 20);
    CHECK(desk.stable_end == 3000);
    CHECK(desk.decay == 12);
    const WSDConfig tiny = default_schedule(60, 20);
    CHECK(tiny.warmup == 4);
    CHECK(tiny.decay == 2);
}
