#include "mates/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>

#include <nlohmann/json.hpp>

#include "mates/error.hpp"
#include "mates/rng.hpp"
#include "mates/stats.hpp"

namespace mates {

namespace {

using ojson = nlohmann::ordered_json;

std::int64_t token_count(const std::vector<Example>& batch) {
    std::int64_t total = 0;
    for (const Example& x : batch) total += static_cast<std::int64_t>(x.tokens.size());
    return total;
}

// Draws batches from the current selection without replacement, reshuffling
// whenever the selection is exhausted. Copyable, so evaluation clones can
// continue the stream without advancing it.
struct StageSampler {
    std::vector<std::int64_t> order;
    std::size_t cursor = 0;
    Rng rng{0};

    void reset(std::vector<std::int64_t> ids, std::uint64_t seed) {
        order = std::move(ids);
        rng = Rng(seed);
        rng.shuffle(order);
        cursor = 0;
    }

    std::vector<Example> take(const std::vector<Example>& pool, std::int64_t count) {
        std::vector<Example> batch;
        batch.reserve(static_cast<std::size_t>(count));
        for (std::int64_t i = 0; i < count; ++i) {
            if (cursor == order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            batch.push_back(pool[static_cast<std::size_t>(order[cursor++])]);
        }
        return batch;
    }
};

// Reference loss after the decay tail, measured on throwaway copies of the
// model, optimizer, and batch stream. The live run never sees these steps and
// the ledger does not count them.
double decay_eval(const ModelState& model, const AdamState& adam, const StageSampler& sampler,
                  const std::vector<Example>& pool, const std::vector<Example>& reference,
                  const PipelineConfig& cfg) {
    ModelState m = snapshot(model);
    AdamState a = clone_optimizer(adam);
    StageSampler tail_sampler = sampler;
    WSDConfig tail = cfg.schedule;
    tail.stable_end = m.step;
    for (std::int64_t d = 0; d < tail.decay; ++d) {
        std::vector<Example> batch = tail_sampler.take(pool, cfg.batch_size);
        LossResult r = loss(m, batch);
        adam_step(m, r.grads, a, wsd_lr(static_cast<double>(m.step), tail));
        m.step += 1;
    }
    const double ref = reference_loss(m, reference, cfg.probe.reference_batch);
    if (!std::isfinite(ref)) {
        throw NumericError("reference loss diverged at step " + std::to_string(model.step));
    }
    return ref;
}

void validate_pipeline(const PipelineConfig& cfg, const CorpusSplit& corpus) {
    if (cfg.total_steps < 1) {
        throw ConfigError("total_steps must be positive, got " + std::to_string(cfg.total_steps));
    }
    if (cfg.update_interval < 5 || cfg.update_interval % 5 != 0) {
        throw ConfigError("update_interval must be a positive multiple of 5 (the reference "
                          "loss is recorded every U/5 steps), got " +
                          std::to_string(cfg.update_interval));
    }
    if (cfg.update_interval > cfg.total_steps) {
        throw ConfigError("update_interval " + std::to_string(cfg.update_interval) +
                          " exceeds total_steps " + std::to_string(cfg.total_steps));
    }
    if (cfg.total_steps % cfg.update_interval != 0) {
        throw ConfigError("total_steps " + std::to_string(cfg.total_steps) +
                          " is not a multiple of update_interval " +
                          std::to_string(cfg.update_interval));
    }
    if (cfg.batch_size < 1) {
        throw ConfigError("batch_size must be positive, got " + std::to_string(cfg.batch_size));
    }
    if (!(cfg.selection_ratio > 0.0) || cfg.selection_ratio > 1.0) {
        throw ConfigError("selection_ratio must lie in (0, 1], got " +
                          std::to_string(cfg.selection_ratio));
    }
    if (!std::isfinite(cfg.tau) || cfg.tau < 0.0) {
        throw ConfigError("tau must be finite and non-negative, got " + std::to_string(cfg.tau));
    }
    if (cfg.schedule.stable_end != cfg.total_steps) {
        throw ConfigError("schedule stable_end " + std::to_string(cfg.schedule.stable_end) +
                          " must equal total_steps " + std::to_string(cfg.total_steps) +
                          "; the main path never enters the decay tail");
    }
    if (cfg.schedule.warmup < 1 || cfg.schedule.warmup > cfg.update_interval / 5) {
        throw ConfigError("schedule warmup " + std::to_string(cfg.schedule.warmup) +
                          " must end by the first evaluation step " +
                          std::to_string(cfg.update_interval / 5));
    }
    if (corpus.train_pool.empty()) throw ContractError("training pool is empty");
    if (corpus.reference.empty()) throw ContractError("reference set is empty");

    const std::int64_t n_collections = cfg.total_steps / cfg.update_interval - 1;
    const bool probing = cfg.mode == SelectionMode::mates ||
                         cfg.mode == SelectionMode::static_influence;
    if (probing && n_collections >= 1) {
        if (cfg.probe_budget_first < 20) {
            throw ConfigError("probe_budget_first must be at least 20 (influence fits "
                              "need 20 records), got " + std::to_string(cfg.probe_budget_first));
        }
        if (n_collections >= 2 && cfg.probe_budget_later < 20) {
            throw ConfigError("probe_budget_later must be at least 20 (influence fits "
                              "need 20 records), got " + std::to_string(cfg.probe_budget_later));
        }
        const std::int64_t need =
            cfg.probe_budget_first + (n_collections - 1) * cfg.probe_budget_later;
        if (need > static_cast<std::int64_t>(corpus.holdout.size())) {
            throw ContractError("collections need " + std::to_string(need) +
                                " fresh holdout examples but the split has " +
                                std::to_string(corpus.holdout.size()));
        }
    }
    if (cfg.mode == SelectionMode::static_influence) {
        if (n_collections < 1) {
            throw ConfigError("static mode needs at least one collection (total_steps > "
                              "update_interval)");
        }
        if (cfg.static_stage < 0 || cfg.static_stage > n_collections - 1) {
            throw ConfigError("static_stage " + std::to_string(cfg.static_stage) +
                              " must lie in [0, " + std::to_string(n_collections - 1) + "]");
        }
    }
}

}  // namespace

std::string to_string(SelectionMode mode) {
    switch (mode) {
        case SelectionMode::mates: return "mates";
        case SelectionMode::random: return "random";
        case SelectionMode::static_influence: return "static";
        case SelectionMode::ngram: return "ngram";
    }
    throw ContractError("unhandled selection mode");
}

SelectionMode selection_mode_from_string(const std::string& s) {
    if (s == "mates") return SelectionMode::mates;
    if (s == "random") return SelectionMode::random;
    if (s == "static") return SelectionMode::static_influence;
    if (s == "ngram") return SelectionMode::ngram;
    throw ParseError("unknown selection mode '" + s + "'");
}

WSDConfig default_schedule(std::int64_t total_steps, std::int64_t update_interval) {
    WSDConfig s;
    s.warmup = std::min<std::int64_t>(20, std::max<std::int64_t>(1, update_interval / 5));
    s.stable_end = total_steps;
    s.decay = std::max<std::int64_t>(2, total_steps / 250);
    s.eta = 1e-3;
    return s;
}

std::int64_t selection_size(const PipelineConfig& cfg, std::int64_t pool_size) {
    if (pool_size < 1) throw ContractError("cannot size a selection over an empty pool");
    const std::int64_t k =
        std::llround(cfg.selection_ratio * static_cast<double>(pool_size));
    if (k < 1 || k > pool_size) {
        throw ContractError("selection_ratio " + std::to_string(cfg.selection_ratio) +
                            " yields k=" + std::to_string(k) + " for a pool of " +
                            std::to_string(pool_size));
    }
    return k;
}

void ledger_add(FlopsLedger& ledger, const std::string& category, std::int64_t flops) {
    if (flops < 0) throw ContractError("negative FLOPs entry: " + std::to_string(flops));
    if (category == kLedgerCategories[0]) {
        ledger.model_pretraining += flops;
    } else if (category == kLedgerCategories[1]) {
        ledger.oracle_collection += flops;
    } else if (category == kLedgerCategories[2]) {
        ledger.influence_training += flops;
    } else if (category == kLedgerCategories[3]) {
        ledger.influence_inference += flops;
    } else {
        throw ContractError("unknown ledger category '" + category + "'");
    }
}

std::int64_t ledger_total(const FlopsLedger& ledger) {
    return ledger.model_pretraining + ledger.oracle_collection + ledger.influence_training +
           ledger.influence_inference;
}

RunReport run_pipeline(const CorpusSplit& corpus, const PipelineConfig& cfg,
                       RunArtifacts* artifacts) {
    validate_pipeline(cfg, corpus);

    const std::vector<Example>& pool = corpus.train_pool;
    const std::vector<Example>& holdout = corpus.holdout;
    const std::vector<Example>& reference = corpus.reference;
    const std::int64_t n_pool = static_cast<std::int64_t>(pool.size());
    const std::int64_t k = selection_size(cfg, n_pool);
    const std::int64_t n_stages = cfg.total_steps / cfg.update_interval;
    const std::int64_t eval_every = cfg.update_interval / 5;

    LMConfig model_cfg = cfg.model;
    model_cfg.seed = cfg.seed;
    const std::int64_t ft_train = flops_per_token(model_cfg, FlopsMode::train);
    const std::int64_t ft_infer = flops_per_token(model_cfg, FlopsMode::infer);
    const std::int64_t head_params =
        regressor_param_count(cfg.fit.head, cfg.fit.features.dim, cfg.fit.hidden);
    const std::int64_t ref_tokens = token_count(reference);

    RunReport report;
    report.config = cfg;
    report.seed = cfg.seed;

    ModelState model = init(model_cfg);
    AdamState adam = adam_init(param_count(model_cfg));

    // Each collection consumes the next block of one run-level holdout
    // permutation, so no example is probed twice.
    std::vector<std::int64_t> probe_order(holdout.size());
    std::iota(probe_order.begin(), probe_order.end(), 0);
    Rng(derive_seed(cfg.seed, seed_tag::probe_budget)).shuffle(probe_order);
    std::size_t probe_cursor = 0;

    std::unordered_map<std::int64_t, std::size_t> holdout_pos;
    holdout_pos.reserve(holdout.size());
    for (std::size_t i = 0; i < holdout.size(); ++i) holdout_pos.emplace(holdout[i].id, i);

    Regressor theta;
    bool has_theta = false;
    std::vector<double> pool_scores;
    bool has_scores = false;
    std::vector<OracleRecord> all_records;
    StageSampler sampler;

    // Probes the next fresh holdout block against the current model, then
    // either refits the regressor (and rescans the pool) or, once frozen,
    // only measures its correlation on the new records' validation split.
    auto run_collection = [&](std::int64_t s) {
        const std::int64_t t0 = s * cfg.update_interval;
        const std::int64_t budget =
            s == 1 ? cfg.probe_budget_first : cfg.probe_budget_later;
        if (probe_cursor + static_cast<std::size_t>(budget) > probe_order.size()) {
            throw ContractError("collection at step " + std::to_string(t0) + " needs " +
                                std::to_string(budget) + " fresh holdout examples but only " +
                                std::to_string(probe_order.size() - probe_cursor) + " remain");
        }
        std::vector<Example> subset;
        subset.reserve(static_cast<std::size_t>(budget));
        for (std::int64_t i = 0; i < budget; ++i) {
            subset.push_back(holdout[static_cast<std::size_t>(probe_order[probe_cursor++])]);
        }

        ProbeConfig pc = cfg.probe;
        pc.probe_lr = wsd_lr(static_cast<double>(t0), cfg.schedule);

        const std::vector<double> params_before = model.params;
        const AdamState adam_before = adam;
        ProbeSweep sweep = probe_many(model, adam, subset, reference, pc);
        if (model.params != params_before || model.step != t0 || !(adam == adam_before)) {
            throw ContractError("probe sweep at step " + std::to_string(t0) +
                                " mutated the run state");
        }
        ledger_add(report.ledger, kLedgerCategories[1],
                   ft_infer * ref_tokens +
                       ft_train * token_count(subset) +
                       ft_infer * ref_tokens * budget);
        all_records.insert(all_records.end(), sweep.records.begin(), sweep.records.end());

        std::vector<std::pair<Example, double>> pairs;
        pairs.reserve(sweep.records.size());
        for (const OracleRecord& rec : sweep.records) {
            pairs.emplace_back(holdout[holdout_pos.at(rec.example_id)], rec.influence);
        }

        const std::uint64_t fit_seed = derive_seed(cfg.seed, seed_tag::stage_fit,
                                                   static_cast<std::uint64_t>(s));
        const bool update = cfg.mode == SelectionMode::mates || s <= cfg.static_stage + 1;
        double rho = 0.0;
        if (update) {
            FitConfig fc = cfg.fit;
            fc.seed = fit_seed;
            fc.init = has_theta ? FitConfig::Init::continue_from_last : FitConfig::Init::fresh;
            FitResult fr = fit(pairs, fc, has_theta ? &theta : nullptr);
            theta = std::move(fr.regressor);
            has_theta = true;
            rho = fr.validation_spearman;
            ledger_add(report.ledger, kLedgerCategories[2],
                       6 * head_params * fc.epochs * fr.train_count +
                           2 * head_params * fr.val_count);
            pool_scores = predict_pool(theta, pool);
            has_scores = true;
            ledger_add(report.ledger, kLedgerCategories[3], 2 * head_params * n_pool);
        } else {
            const RecordSplit split =
                validation_split(static_cast<std::int64_t>(pairs.size()),
                                 cfg.fit.validation_fraction, fit_seed);
            std::vector<double> pred;
            std::vector<double> truth;
            pred.reserve(split.val.size());
            truth.reserve(split.val.size());
            for (std::int64_t i : split.val) {
                const auto& [ex, influence] = pairs[static_cast<std::size_t>(i)];
                pred.push_back(predict_features(theta, featurize(ex, theta.features)));
                truth.push_back(influence);
            }
            rho = spearman(pred, truth);
            ledger_add(report.ledger, kLedgerCategories[3],
                       2 * head_params * static_cast<std::int64_t>(split.val.size()));
        }
        report.stage_spearman.push_back({t0, rho});
    };

    try {
        for (std::int64_t s = 0; s < n_stages; ++s) {
            const std::uint64_t select_seed =
                derive_seed(cfg.seed, seed_tag::stage_select, static_cast<std::uint64_t>(s));
            std::vector<std::int64_t> picked;
            if (s == 0) {
                picked = random_select(n_pool, k, derive_seed(cfg.seed, seed_tag::warmup_select));
            } else if (cfg.mode == SelectionMode::random) {
                picked = random_select(n_pool, k, select_seed);
            } else if (cfg.mode == SelectionMode::ngram) {
                // Proximity weights are count-table work, no model FLOPs.
                if (!has_scores) {
                    pool_scores = ngram_proximity_weights(pool, reference);
                    has_scores = true;
                }
                picked = gumbel_top_k(pool_scores, {k, cfg.tau, select_seed});
            } else {
                run_collection(s);
                picked = gumbel_top_k(pool_scores, {k, cfg.tau, select_seed});
            }
            for (std::int64_t i : picked) {
                report.selections.push_back(
                    {pool[static_cast<std::size_t>(i)].id,
                     has_scores ? pool_scores[static_cast<std::size_t>(i)] : 0.0, s});
            }

            sampler.reset(std::move(picked),
                          derive_seed(cfg.seed, seed_tag::stage_batch,
                                      static_cast<std::uint64_t>(s)));
            const std::int64_t t0 = s * cfg.update_interval;
            for (std::int64_t t = t0; t < t0 + cfg.update_interval; ++t) {
                std::vector<Example> batch = sampler.take(pool, cfg.batch_size);
                LossResult r = loss(model, batch);
                if (!std::isfinite(r.loss)) {
                    throw NumericError("training loss diverged at step " + std::to_string(t));
                }
                adam_step(model, r.grads, adam, wsd_lr(static_cast<double>(t), cfg.schedule));
                model.step += 1;
                ledger_add(report.ledger, kLedgerCategories[0], ft_train * token_count(batch));
                if (model.step % eval_every == 0) {
                    const double ref = decay_eval(model, adam, sampler, pool, reference, cfg);
                    report.eval_points.push_back(
                        {model.step, ref, ledger_total(report.ledger)});
                }
            }
        }
        if (model.step != cfg.total_steps) {
            throw ContractError("step counter ended at " + std::to_string(model.step) +
                                ", expected " + std::to_string(cfg.total_steps));
        }
        report.completed = true;
    } catch (const Error& e) {
        report.error = e.what();
    }

    if (artifacts != nullptr) {
        artifacts->model = std::move(model);
        artifacts->optimizer = std::move(adam);
        artifacts->records = std::move(all_records);
        artifacts->regressor = std::move(theta);
        artifacts->has_regressor = has_theta;
    }
    return report;
}

RunReport run_mates(const CorpusSplit& corpus, const PipelineConfig& cfg,
                    RunArtifacts* artifacts) {
    if (cfg.mode != SelectionMode::mates) {
        throw ContractError("run_mates called with mode '" + to_string(cfg.mode) + "'");
    }
    return run_pipeline(corpus, cfg, artifacts);
}

RunReport run_baseline(const CorpusSplit& corpus, const PipelineConfig& cfg,
                       RunArtifacts* artifacts) {
    if (cfg.mode == SelectionMode::mates) {
        throw ContractError("run_baseline called with mode 'mates'");
    }
    return run_pipeline(corpus, cfg, artifacts);
}

FlopsLedger project_ledger(const PipelineConfig& cfg, std::int64_t pool_size,
                           std::int64_t holdout_size, std::int64_t reference_size,
                           std::int64_t seq_len) {
    if (pool_size < 1 || reference_size < 1 || seq_len < 1) {
        throw ContractError("ledger projection needs a non-empty pool, reference, and "
                            "sequence length");
    }
    FlopsLedger ledger;
    const std::int64_t ft_train = flops_per_token(cfg.model, FlopsMode::train);
    const std::int64_t ft_infer = flops_per_token(cfg.model, FlopsMode::infer);
    ledger.model_pretraining = cfg.total_steps * cfg.batch_size * seq_len * ft_train;

    const std::int64_t n_collections = cfg.total_steps / cfg.update_interval - 1;
    const bool probing = cfg.mode == SelectionMode::mates ||
                         cfg.mode == SelectionMode::static_influence;
    if (!probing || n_collections < 1) return ledger;

    const std::int64_t need =
        cfg.probe_budget_first + (n_collections - 1) * cfg.probe_budget_later;
    if (need > holdout_size) {
        throw ContractError("collections need " + std::to_string(need) +
                            " fresh holdout examples but the split has " +
                            std::to_string(holdout_size));
    }
    const std::int64_t head_params =
        regressor_param_count(cfg.fit.head, cfg.fit.features.dim, cfg.fit.hidden);
    const std::int64_t ref_tokens = reference_size * seq_len;
    for (std::int64_t s = 1; s <= n_collections; ++s) {
        const std::int64_t budget =
            s == 1 ? cfg.probe_budget_first : cfg.probe_budget_later;
        ledger.oracle_collection += ft_infer * ref_tokens +
                                    ft_train * seq_len * budget +
                                    ft_infer * ref_tokens * budget;
        const RecordSplit split = validation_split(budget, cfg.fit.validation_fraction, 0);
        const std::int64_t n_train = static_cast<std::int64_t>(split.train.size());
        const std::int64_t n_val = static_cast<std::int64_t>(split.val.size());
        const bool update = cfg.mode == SelectionMode::mates || s <= cfg.static_stage + 1;
        if (update) {
            ledger.influence_training +=
                6 * head_params * cfg.fit.epochs * n_train + 2 * head_params * n_val;
            ledger.influence_inference += 2 * head_params * pool_size;
        } else {
            ledger.influence_inference += 2 * head_params * n_val;
        }
    }
    return ledger;
}

namespace {

std::string to_string(Arch arch) {
    return arch == Arch::bigram ? "bigram" : "transformer";
}

Arch arch_from_string(const std::string& s) {
    if (s == "bigram") return Arch::bigram;
    if (s == "transformer") return Arch::transformer;
    throw ParseError("unknown arch '" + s + "'");
}

std::string to_string(ProbeOptimizer opt) {
    return opt == ProbeOptimizer::adam_clone ? "adam_clone" : "sgd";
}

ProbeOptimizer probe_optimizer_from_string(const std::string& s) {
    if (s == "adam_clone") return ProbeOptimizer::adam_clone;
    if (s == "sgd") return ProbeOptimizer::sgd;
    throw ParseError("unknown probe optimizer '" + s + "'");
}

std::string to_string(HeadKind head) {
    return head == HeadKind::linear ? "linear" : "mlp";
}

HeadKind head_from_string(const std::string& s) {
    if (s == "linear") return HeadKind::linear;
    if (s == "mlp") return HeadKind::mlp;
    throw ParseError("unknown head kind '" + s + "'");
}

std::string to_string(FitConfig::Init init) {
    return init == FitConfig::Init::fresh ? "fresh" : "continue_from_last";
}

FitConfig::Init init_from_string(const std::string& s) {
    if (s == "fresh") return FitConfig::Init::fresh;
    if (s == "continue_from_last") return FitConfig::Init::continue_from_last;
    throw ParseError("unknown fit init '" + s + "'");
}

const ojson& field(const ojson& j, const char* key) {
    const auto it = j.find(key);
    if (it == j.end()) throw ParseError(std::string("report is missing field '") + key + "'");
    return *it;
}

std::int64_t as_i64(const ojson& j, const char* key) {
    const ojson& v = field(j, key);
    if (!v.is_number_integer()) {
        throw ParseError(std::string("field '") + key + "' is not an integer");
    }
    return v.get<std::int64_t>();
}

std::uint64_t as_u64(const ojson& j, const char* key) {
    const ojson& v = field(j, key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                   v.get<std::int64_t>() < 0)) {
        throw ParseError(std::string("field '") + key + "' is not a non-negative integer");
    }
    return v.get<std::uint64_t>();
}

double as_double(const ojson& j, const char* key) {
    const ojson& v = field(j, key);
    if (!v.is_number()) throw ParseError(std::string("field '") + key + "' is not a number");
    return v.get<double>();
}

std::string as_string(const ojson& j, const char* key) {
    const ojson& v = field(j, key);
    if (!v.is_string()) throw ParseError(std::string("field '") + key + "' is not a string");
    return v.get<std::string>();
}

bool as_bool(const ojson& j, const char* key) {
    const ojson& v = field(j, key);
    if (!v.is_boolean()) throw ParseError(std::string("field '") + key + "' is not a boolean");
    return v.get<bool>();
}

const ojson& as_array(const ojson& j, const char* key) {
    const ojson& v = field(j, key);
    if (!v.is_array()) throw ParseError(std::string("field '") + key + "' is not an array");
    return v;
}

const ojson& as_object(const ojson& j, const char* key) {
    const ojson& v = field(j, key);
    if (!v.is_object()) throw ParseError(std::string("field '") + key + "' is not an object");
    return v;
}

ojson config_to_json(const PipelineConfig& c) {
    ojson j;
    j["total_steps"] = c.total_steps;
    j["update_interval"] = c.update_interval;
    j["batch_size"] = c.batch_size;
    j["probe_budget_first"] = c.probe_budget_first;
    j["probe_budget_later"] = c.probe_budget_later;
    j["selection_ratio"] = c.selection_ratio;
    j["tau"] = c.tau;
    j["mode"] = to_string(c.mode);
    j["static_stage"] = c.static_stage;
    j["seed"] = c.seed;
    j["model"] = ojson{{"vocab_size", c.model.vocab_size},
                       {"context_len", c.model.context_len},
                       {"d_model", c.model.d_model},
                       {"n_layers", c.model.n_layers},
                       {"n_heads", c.model.n_heads},
                       {"arch", to_string(c.model.arch)},
                       {"seed", c.model.seed}};
    j["schedule"] = ojson{{"warmup", c.schedule.warmup},
                          {"stable_end", c.schedule.stable_end},
                          {"decay", c.schedule.decay},
                          {"eta", c.schedule.eta}};
    j["probe"] = ojson{{"optimizer", to_string(c.probe.probe_optimizer)},
                       {"lr", c.probe.probe_lr},
                       {"reference_batch", c.probe.reference_batch}};
    j["fit"] = ojson{{"epochs", c.fit.epochs},
                     {"batch", c.fit.batch},
                     {"lr", c.fit.lr},
                     {"validation_fraction", c.fit.validation_fraction},
                     {"init", to_string(c.fit.init)},
                     {"head", to_string(c.fit.head)},
                     {"hidden", c.fit.hidden},
                     {"seed", c.fit.seed},
                     {"features", ojson{{"orders", c.fit.features.orders},
                                        {"dim", c.fit.features.dim},
                                        {"hash_seed", c.fit.features.hash_seed},
                                        {"chunk_limit", c.fit.features.chunk_limit}}}};
    return j;
}

PipelineConfig config_from_json(const ojson& j) {
    PipelineConfig c;
    c.total_steps = as_i64(j, "total_steps");
    c.update_interval = as_i64(j, "update_interval");
    c.batch_size = as_i64(j, "batch_size");
    c.probe_budget_first = as_i64(j, "probe_budget_first");
    c.probe_budget_later = as_i64(j, "probe_budget_later");
    c.selection_ratio = as_double(j, "selection_ratio");
    c.tau = as_double(j, "tau");
    c.mode = selection_mode_from_string(as_string(j, "mode"));
    c.static_stage = as_i64(j, "static_stage");
    c.seed = as_u64(j, "seed");

    const ojson& m = as_object(j, "model");
    c.model.vocab_size = as_i64(m, "vocab_size");
    c.model.context_len = as_i64(m, "context_len");
    c.model.d_model = as_i64(m, "d_model");
    c.model.n_layers = as_i64(m, "n_layers");
    c.model.n_heads = as_i64(m, "n_heads");
    c.model.arch = arch_from_string(as_string(m, "arch"));
    c.model.seed = as_u64(m, "seed");

    const ojson& s = as_object(j, "schedule");
    c.schedule.warmup = as_i64(s, "warmup");
    c.schedule.stable_end = as_i64(s, "stable_end");
    c.schedule.decay = as_i64(s, "decay");
    c.schedule.eta = as_double(s, "eta");

    const ojson& p = as_object(j, "probe");
    c.probe.probe_optimizer = probe_optimizer_from_string(as_string(p, "optimizer"));
    c.probe.probe_lr = as_double(p, "lr");
    c.probe.reference_batch = as_i64(p, "reference_batch");

    const ojson& f = as_object(j, "fit");
    c.fit.epochs = as_i64(f, "epochs");
    c.fit.batch = as_i64(f, "batch");
    c.fit.lr = as_double(f, "lr");
    c.fit.validation_fraction = as_double(f, "validation_fraction");
    c.fit.init = init_from_string(as_string(f, "init"));
    c.fit.head = head_from_string(as_string(f, "head"));
    c.fit.hidden = as_i64(f, "hidden");
    c.fit.seed = as_u64(f, "seed");

    const ojson& ft = as_object(f, "features");
    const ojson& orders = field(ft, "orders");
    if (!orders.is_array()) throw ParseError("field 'orders' is not an array");
    c.fit.features.orders.clear();
    for (const auto& o : orders) {
        if (!o.is_number_integer()) throw ParseError("feature orders must be integers");
        c.fit.features.orders.push_back(o.get<int>());
    }
    c.fit.features.dim = as_i64(ft, "dim");
    c.fit.features.hash_seed = as_u64(ft, "hash_seed");
    c.fit.features.chunk_limit = as_i64(ft, "chunk_limit");
    return c;
}

void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) {
        throw ContractError(std::string("cannot serialize non-finite ") + what);
    }
}

}  // namespace

std::string report_to_json(const RunReport& report) {
    ojson j;
    j["seed"] = report.seed;
    j["completed"] = report.completed;
    j["error"] = report.error;
    j["config"] = config_to_json(report.config);
    ojson evals = ojson::array();
    for (const EvalPoint& p : report.eval_points) {
        require_finite(p.ref_loss, "reference loss");
        evals.push_back(ojson{{"step", p.step}, {"ref_loss", p.ref_loss}, {"flops", p.flops}});
    }
    j["eval_points"] = std::move(evals);
    ojson rhos = ojson::array();
    for (const StageCorrelation& c : report.stage_spearman) {
        require_finite(c.rho, "stage correlation");
        rhos.push_back(ojson{{"step", c.step}, {"rho", c.rho}});
    }
    j["stage_spearman"] = std::move(rhos);
    ojson sels = ojson::array();
    for (const SelectionRecord& r : report.selections) {
        require_finite(r.score, "selection score");
        sels.push_back(ojson{{"id", r.id}, {"score", r.score}, {"stage", r.stage}});
    }
    j["selections"] = std::move(sels);
    j["ledger"] = ojson{{kLedgerCategories[0], report.ledger.model_pretraining},
                        {kLedgerCategories[1], report.ledger.oracle_collection},
                        {kLedgerCategories[2], report.ledger.influence_training},
                        {kLedgerCategories[3], report.ledger.influence_inference}};
    return j.dump(2);
}

RunReport report_from_json(const std::string& text) {
    ojson j;
    try {
        j = ojson::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("invalid report JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError("report JSON is not an object");
    RunReport report;
    report.seed = as_u64(j, "seed");
    report.completed = as_bool(j, "completed");
    report.error = as_string(j, "error");
    report.config = config_from_json(as_object(j, "config"));
    for (const auto& e : as_array(j, "eval_points")) {
        report.eval_points.push_back(
            {as_i64(e, "step"), as_double(e, "ref_loss"), as_i64(e, "flops")});
    }
    for (const auto& e : as_array(j, "stage_spearman")) {
        report.stage_spearman.push_back({as_i64(e, "step"), as_double(e, "rho")});
    }
    for (const auto& e : as_array(j, "selections")) {
        report.selections.push_back(
            {as_i64(e, "id"), as_double(e, "score"), as_i64(e, "stage")});
    }
    const ojson& led = as_object(j, "ledger");
    report.ledger.model_pretraining = as_i64(led, kLedgerCategories[0]);
    report.ledger.oracle_collection = as_i64(led, kLedgerCategories[1]);
    report.ledger.influence_training = as_i64(led, kLedgerCategories[2]);
    report.ledger.influence_inference = as_i64(led, kLedgerCategories[3]);
    for (const EvalPoint& p : report.eval_points) {
        if (!std::isfinite(p.ref_loss)) throw ParseError("non-finite reference loss");
    }
    for (const StageCorrelation& c : report.stage_spearman) {
        if (!std::isfinite(c.rho)) throw ParseError("non-finite stage correlation");
    }
    for (const SelectionRecord& r : report.selections) {
        if (!std::isfinite(r.score)) throw ParseError("non-finite selection score");
    }
    return report;
}

void save_report(const RunReport& report, const std::string& path) {
    const std::string text = report_to_json(report);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IOError("cannot open " + path + " for writing");
    out << text << '\n';
    if (!out) throw IOError("failed writing " + path);
}

RunReport load_report(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return report_from_json(buf.str());
}

}  // namespace mates
