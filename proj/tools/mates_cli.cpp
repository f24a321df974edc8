#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mates/checkpoint.hpp"
#include "mates/corpus.hpp"
#include "mates/error.hpp"
#include "mates/eval_report.hpp"
#include "mates/influence_model.hpp"
#include "mates/oracle.hpp"
#include "mates/pipeline.hpp"
#include "mates/rng.hpp"
#include "mates/selection.hpp"

namespace fs = std::filesystem;
using namespace mates;

namespace {

// Flat key = value configuration. '#' starts a comment, blank lines are
// skipped, keys may not repeat, and every key must be consumed by the command
// that loads the file.
struct ConfigMap {
    std::map<std::string, std::string> kv;
    std::set<std::string> used;
    std::string path;

    bool has(const std::string& key) const { return kv.count(key) > 0; }

    std::string str(const std::string& key, const std::string& fallback) {
        used.insert(key);
        const auto it = kv.find(key);
        return it == kv.end() ? fallback : it->second;
    }

    std::int64_t i64(const std::string& key, std::int64_t fallback) {
        used.insert(key);
        const auto it = kv.find(key);
        if (it == kv.end()) return fallback;
        std::int64_t v = 0;
        const auto [ptr, ec] = std::from_chars(it->second.data(),
                                               it->second.data() + it->second.size(), v);
        if (ec != std::errc() || ptr != it->second.data() + it->second.size()) {
            throw ConfigError(path + ": key '" + key + "' has non-integer value '" +
                              it->second + "'");
        }
        return v;
    }

    std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
        used.insert(key);
        const auto it = kv.find(key);
        if (it == kv.end()) return fallback;
        std::uint64_t v = 0;
        const auto [ptr, ec] = std::from_chars(it->second.data(),
                                               it->second.data() + it->second.size(), v);
        if (ec != std::errc() || ptr != it->second.data() + it->second.size()) {
            throw ConfigError(path + ": key '" + key + "' has non-integer value '" +
                              it->second + "'");
        }
        return v;
    }

    double dbl(const std::string& key, double fallback) {
        used.insert(key);
        const auto it = kv.find(key);
        if (it == kv.end()) return fallback;
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(it->second.data(),
                                               it->second.data() + it->second.size(), v);
        if (ec != std::errc() || ptr != it->second.data() + it->second.size()) {
            throw ConfigError(path + ": key '" + key + "' has non-numeric value '" +
                              it->second + "'");
        }
        return v;
    }

    void finish() const {
        for (const auto& [key, value] : kv) {
            if (!used.count(key)) {
                throw ConfigError(path + ": unknown key '" + key + "'");
            }
        }
    }
};

std::string trim(const std::string& s) {
    const std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

ConfigMap load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IOError("cannot open config " + path);
    ConfigMap cfg;
    cfg.path = path;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + " line " + std::to_string(line_no) +
                              ": expected key = value");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(path + " line " + std::to_string(line_no) + ": empty key");
        }
        if (!cfg.kv.emplace(key, value).second) {
            throw ConfigError(path + " line " + std::to_string(line_no) + ": duplicate key '" +
                              key + "'");
        }
    }
    return cfg;
}

std::uint64_t seed_with_env_override(std::uint64_t from_config) {
    const char* env = std::getenv("MATES_SEED");
    if (env == nullptr) return from_config;
    std::uint64_t v = 0;
    const std::string s(env);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ConfigError("MATES_SEED must be a non-negative integer, got '" + s + "'");
    }
    return v;
}

PipelineConfig pipeline_config_from(ConfigMap& c) {
    PipelineConfig p;
    p.total_steps = c.i64("total_steps", p.total_steps);
    p.update_interval = c.i64("update_interval", p.update_interval);
    p.batch_size = c.i64("batch_size", p.batch_size);
    p.probe_budget_first = c.i64("probe_budget_first", p.probe_budget_first);
    p.probe_budget_later = c.i64("probe_budget_later", p.probe_budget_later);
    p.selection_ratio = c.dbl("selection_ratio", p.selection_ratio);
    p.tau = c.dbl("tau", p.tau);
    p.mode = selection_mode_from_string(c.str("mode", to_string(p.mode)));
    p.static_stage = c.i64("static_stage", p.static_stage);
    p.seed = seed_with_env_override(c.u64("seed", p.seed));

    p.model.vocab_size = c.i64("model.vocab_size", p.model.vocab_size);
    p.model.context_len = c.i64("model.context_len", p.model.context_len);
    p.model.d_model = c.i64("model.d_model", p.model.d_model);
    p.model.n_layers = c.i64("model.n_layers", p.model.n_layers);
    p.model.n_heads = c.i64("model.n_heads", p.model.n_heads);
    const std::string arch = c.str("model.arch", "transformer");
    if (arch == "bigram") {
        p.model.arch = Arch::bigram;
    } else if (arch == "transformer") {
        p.model.arch = Arch::transformer;
    } else {
        throw ConfigError("model.arch must be 'bigram' or 'transformer', got '" + arch + "'");
    }

    const WSDConfig fallback = default_schedule(p.total_steps, p.update_interval);
    p.schedule.warmup = c.i64("schedule.warmup", fallback.warmup);
    p.schedule.stable_end = c.i64("schedule.stable_end", fallback.stable_end);
    p.schedule.decay = c.i64("schedule.decay", fallback.decay);
    p.schedule.eta = c.dbl("schedule.eta", fallback.eta);

    const std::string opt = c.str("probe.optimizer", "adam_clone");
    if (opt == "adam_clone") {
        p.probe.probe_optimizer = ProbeOptimizer::adam_clone;
    } else if (opt == "sgd") {
        p.probe.probe_optimizer = ProbeOptimizer::sgd;
    } else {
        throw ConfigError("probe.optimizer must be 'adam_clone' or 'sgd', got '" + opt + "'");
    }
    p.probe.probe_lr = c.dbl("probe.lr", p.probe.probe_lr);
    p.probe.reference_batch = c.i64("probe.reference_batch", p.probe.reference_batch);

    p.fit.epochs = c.i64("fit.epochs", p.fit.epochs);
    p.fit.batch = c.i64("fit.batch", p.fit.batch);
    p.fit.lr = c.dbl("fit.lr", p.fit.lr);
    p.fit.validation_fraction = c.dbl("fit.validation_fraction", p.fit.validation_fraction);
    const std::string head = c.str("fit.head", "linear");
    if (head == "linear") {
        p.fit.head = HeadKind::linear;
    } else if (head == "mlp") {
        p.fit.head = HeadKind::mlp;
    } else {
        throw ConfigError("fit.head must be 'linear' or 'mlp', got '" + head + "'");
    }
    p.fit.hidden = c.i64("fit.hidden", p.fit.hidden);
    p.fit.features.dim = c.i64("fit.features.dim", p.fit.features.dim);
    p.fit.features.chunk_limit = c.i64("fit.features.chunk_limit", p.fit.features.chunk_limit);
    p.fit.features.hash_seed = c.u64("fit.features.hash_seed", p.fit.features.hash_seed);
    const std::string orders = c.str("fit.features.orders", "");
    if (!orders.empty()) {
        p.fit.features.orders.clear();
        std::size_t start = 0;
        while (start <= orders.size()) {
            const std::size_t comma = orders.find(',', start);
            const std::string part =
                trim(orders.substr(start, comma == std::string::npos ? comma : comma - start));
            int v = 0;
            const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
            if (part.empty() || ec != std::errc() || ptr != part.data() + part.size()) {
                throw ConfigError("fit.features.orders must be a comma-separated integer "
                                  "list, got '" + orders + "'");
            }
            p.fit.features.orders.push_back(v);
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
    }
    return p;
}

int run_command(const std::string& config_path, const std::string& corpus_path,
                const std::string& out_dir, const std::string& mode_flag) {
    ConfigMap c = load_config(config_path);
    PipelineConfig cfg = pipeline_config_from(c);
    c.finish();
    if (!mode_flag.empty()) cfg.mode = selection_mode_from_string(mode_flag);

    const CorpusSplit corpus = load(corpus_path);
    fs::create_directories(out_dir);

    RunArtifacts art;
    const RunReport report = run_pipeline(corpus, cfg, &art);

    save_report(report, (fs::path(out_dir) / "report.json").string());
    write_loss_curves_csv({report}, (fs::path(out_dir) / "loss_curves.csv").string());
    save_selection(report.selections, (fs::path(out_dir) / "selections.jsonl").string());
    save_checkpoint(art.model, &art.optimizer, (fs::path(out_dir) / "model.mtlm").string());
    if (!art.records.empty()) {
        save_records(art.records, (fs::path(out_dir) / "records.jsonl").string());
    }
    if (art.has_regressor) {
        save_regressor(art.regressor, (fs::path(out_dir) / "influence.mtif").string());
    }

    std::cout << "mode " << to_string(cfg.mode) << " seed " << cfg.seed << '\n';
    if (!report.eval_points.empty()) {
        std::cout << "final reference loss " << report.eval_points.back().ref_loss << " at step "
                  << report.eval_points.back().step << '\n';
    }
    std::cout << "total FLOPs " << ledger_total(report.ledger) << '\n';
    if (!report.completed) {
        std::cerr << "run aborted: " << report.error << '\n';
        return 1;
    }
    return 0;
}

void gen_corpus_command(const std::string& config_path, const std::string& out_path) {
    ConfigMap c = load_config(config_path);
    CorpusSizes sizes;
    sizes.train = c.i64("corpus.train", 50000);
    sizes.holdout = c.i64("corpus.holdout", 4000);
    sizes.reference = c.i64("corpus.reference", 1024);
    QualityMix mix;
    mix.clean = c.dbl("corpus.clean", 0.3);
    mix.noise = c.dbl("corpus.noise", 0.4);
    mix.shuffled = c.dbl("corpus.shuffled", 0.3);
    const std::int64_t vocab = c.i64("corpus.vocab_size", 256);
    const std::int64_t seq_len = c.i64("corpus.seq_len", 64);
    const std::uint64_t seed = c.u64("corpus.seed", 0);
    c.finish();

    const CorpusSplit corpus = generate(seed, sizes, mix, vocab, seq_len);
    save(corpus, out_path);
    std::cout << "wrote " << corpus.train_pool.size() << " pool, " << corpus.holdout.size()
              << " holdout, " << corpus.reference.size() << " reference examples to "
              << out_path << '\n';
}

void probe_command(const std::string& config_path, const std::string& corpus_path,
                   const std::string& checkpoint_path, const std::string& out_path,
                   std::int64_t budget) {
    ConfigMap c = load_config(config_path);
    const PipelineConfig cfg = pipeline_config_from(c);
    c.finish();

    const CorpusSplit corpus = load(corpus_path);
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    if (budget <= 0) budget = cfg.probe_budget_first;
    if (budget > static_cast<std::int64_t>(corpus.holdout.size())) {
        throw ContractError("budget " + std::to_string(budget) + " exceeds holdout size " +
                            std::to_string(corpus.holdout.size()));
    }
    if (cfg.probe.probe_optimizer == ProbeOptimizer::adam_clone && !ckpt.has_optimizer) {
        throw ContractError("probing with adam_clone needs a checkpoint that carries "
                            "optimizer state");
    }
    AdamState adam = ckpt.has_optimizer ? ckpt.optimizer
                                        : adam_init(static_cast<std::int64_t>(
                                              ckpt.model.params.size()));

    std::vector<std::int64_t> order(corpus.holdout.size());
    std::iota(order.begin(), order.end(), 0);
    Rng(derive_seed(cfg.seed, seed_tag::probe_budget)).shuffle(order);
    std::vector<Example> subset;
    subset.reserve(static_cast<std::size_t>(budget));
    for (std::int64_t i = 0; i < budget; ++i) {
        subset.push_back(corpus.holdout[static_cast<std::size_t>(order[i])]);
    }

    const ProbeSweep sweep = probe_many(ckpt.model, adam, subset, corpus.reference, cfg.probe);
    save_records(sweep.records, out_path);
    std::cout << "wrote " << sweep.records.size() << " influence records to " << out_path
              << '\n';
    for (const std::string& f : sweep.failures) std::cerr << "probe failed: " << f << '\n';
}

void fit_command(const std::string& config_path, const std::string& records_path,
                 const std::string& corpus_path, const std::string& out_path,
                 const std::string& last_path) {
    ConfigMap c = load_config(config_path);
    const PipelineConfig cfg = pipeline_config_from(c);
    c.finish();

    const CorpusSplit corpus = load(corpus_path);
    const std::vector<OracleRecord> records = load_records(records_path);
    std::map<std::int64_t, const Example*> by_id;
    for (const Example& x : corpus.holdout) by_id[x.id] = &x;
    std::vector<std::pair<Example, double>> pairs;
    pairs.reserve(records.size());
    for (const OracleRecord& r : records) {
        const auto it = by_id.find(r.example_id);
        if (it == by_id.end()) {
            throw ContractError("record example " + std::to_string(r.example_id) +
                                " is not in the corpus holdout");
        }
        pairs.emplace_back(*it->second, r.influence);
    }

    FitConfig fc = cfg.fit;
    fc.seed = cfg.seed;
    Regressor last;
    const Regressor* lastp = nullptr;
    if (!last_path.empty()) {
        last = load_regressor(last_path);
        fc.init = FitConfig::Init::continue_from_last;
        lastp = &last;
    } else {
        fc.init = FitConfig::Init::fresh;
    }
    const FitResult result = fit(pairs, fc, lastp);
    save_regressor(result.regressor, out_path);
    std::cout << "fitted on " << result.train_count << " records, validation spearman "
              << result.validation_spearman << " on " << result.val_count << '\n';
}

void select_command(const std::string& config_path, const std::string& corpus_path,
                    const std::string& influence_path, const std::string& method,
                    std::int64_t stage, const std::string& out_path) {
    ConfigMap c = load_config(config_path);
    const PipelineConfig cfg = pipeline_config_from(c);
    c.finish();

    const CorpusSplit corpus = load(corpus_path);
    const std::int64_t n = static_cast<std::int64_t>(corpus.train_pool.size());
    const std::int64_t k = selection_size(cfg, n);

    std::vector<std::int64_t> picked;
    std::vector<double> scores(static_cast<std::size_t>(n), 0.0);
    if (method == "influence") {
        if (influence_path.empty()) {
            throw ContractError("--method influence needs --influence <file>");
        }
        const Regressor theta = load_regressor(influence_path);
        scores = predict_pool(theta, corpus.train_pool);
        picked = gumbel_top_k(scores, {k, cfg.tau, cfg.seed});
    } else if (method == "random") {
        picked = random_select(n, k, cfg.seed);
    } else if (method == "ngram") {
        scores = ngram_proximity_weights(corpus.train_pool, corpus.reference);
        picked = gumbel_top_k(scores, {k, cfg.tau, cfg.seed});
    } else {
        throw ConfigError("--method must be influence, random, or ngram, got '" + method + "'");
    }

    std::vector<SelectionRecord> out;
    out.reserve(picked.size());
    for (std::int64_t i : picked) {
        out.push_back({corpus.train_pool[static_cast<std::size_t>(i)].id,
                       scores[static_cast<std::size_t>(i)], stage});
    }
    save_selection(out, out_path);
    std::cout << "selected " << out.size() << " of " << n << " examples to " << out_path
              << '\n';
}

void report_command(const std::vector<std::string>& report_paths, const std::string& out_dir,
                    const std::string& corpus_path, std::optional<double> threshold) {
    std::vector<RunReport> reports;
    reports.reserve(report_paths.size());
    for (const std::string& p : report_paths) reports.push_back(load_report(p));
    fs::create_directories(out_dir);

    write_loss_curves_csv(reports, (fs::path(out_dir) / "loss_curves.csv").string());
    write_spearman_csv(reports, (fs::path(out_dir) / "spearman.csv").string());
    {
        std::ofstream out((fs::path(out_dir) / "compare.csv").string(), std::ios::trunc);
        if (!out) throw IOError("cannot open compare.csv for writing");
        out << compare_runs(reports);
    }
    if (!corpus_path.empty()) {
        const CorpusSplit corpus = load(corpus_path);
        write_audit_csv(audit_selection(reports.front().selections, corpus.train_pool),
                        (fs::path(out_dir) / "audit.csv").string());
    }
    if (threshold.has_value()) {
        for (std::size_t i = 0; i < reports.size(); ++i) {
            const auto step = steps_to_threshold(reports[i], *threshold);
            std::cout << report_paths[i] << ": "
                      << (step ? "reaches " + std::to_string(*threshold) + " at step " +
                                     std::to_string(*step)
                               : "never reaches " + std::to_string(*threshold))
                      << '\n';
        }
    }
    std::cout << "wrote CSV tables for " << reports.size() << " reports to " << out_dir << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"model-aware data selection laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string corpus_path;
    std::string out_path;
    std::string checkpoint_path;
    std::string records_path;
    std::string influence_path;
    std::string last_path;
    std::string mode_flag;
    std::string method = "influence";
    std::int64_t budget = 0;
    std::int64_t stage = 0;
    double threshold_value = 0.0;
    bool csv = false;
    std::vector<std::string> report_paths;

    CLI::App* gen = app.add_subcommand("gen-corpus", "generate a mixed-quality corpus");
    gen->add_option("--config", config_path, "flat key=value config file")->required();
    gen->add_option("--out", out_path, "corpus output path (.jsonl or .jsonl.gz)")->required();

    CLI::App* run = app.add_subcommand("run", "staged selection-and-pretraining run");
    run->add_option("--config", config_path, "flat key=value config file")->required();
    run->add_option("--corpus", corpus_path, "corpus file from gen-corpus")->required();
    run->add_option("--out", out_path, "output directory")->required();
    run->add_option("--mode", mode_flag, "mates|random|static|ngram (overrides config)")
        ->check(CLI::IsMember({"mates", "random", "static", "ngram"}));

    CLI::App* probe = app.add_subcommand("probe", "probe holdout influence at a checkpoint");
    probe->add_option("--config", config_path, "flat key=value config file")->required();
    probe->add_option("--corpus", corpus_path, "corpus file")->required();
    probe->add_option("--checkpoint", checkpoint_path, "model checkpoint (.mtlm)")->required();
    probe->add_option("--out", out_path, "records output (.jsonl)")->required();
    probe->add_option("--budget", budget, "number of holdout probes (default: config)");

    CLI::App* fit_cmd = app.add_subcommand("fit-influence", "fit the influence regressor");
    fit_cmd->add_option("--config", config_path, "flat key=value config file")->required();
    fit_cmd->add_option("--records", records_path, "influence records (.jsonl)")->required();
    fit_cmd->add_option("--corpus", corpus_path, "corpus file")->required();
    fit_cmd->add_option("--out", out_path, "regressor output (.mtif)")->required();
    fit_cmd->add_option("--last", last_path, "warm-start from this regressor");

    CLI::App* sel = app.add_subcommand("select", "score and select a training subset");
    sel->add_option("--config", config_path, "flat key=value config file")->required();
    sel->add_option("--corpus", corpus_path, "corpus file")->required();
    sel->add_option("--influence", influence_path, "regressor (.mtif) for --method influence");
    sel->add_option("--method", method, "influence|random|ngram (default influence)")
        ->check(CLI::IsMember({"influence", "random", "ngram"}));
    sel->add_option("--stage", stage, "stage index stamped into the selection log");
    sel->add_option("--out", out_path, "selection output (.jsonl)")->required();

    CLI::App* rep = app.add_subcommand("report", "emit CSV tables from run reports");
    rep->add_flag("--csv", csv, "write CSV artifacts (the only output form)");
    rep->add_option("--out", out_path, "output directory")->required();
    rep->add_option("--corpus", corpus_path, "corpus file; enables audit.csv");
    CLI::Option* thr = rep->add_option("--threshold", threshold_value,
                                       "print first step each run reaches this loss");
    rep->add_option("reports", report_paths, "report.json files")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            gen_corpus_command(config_path, out_path);
        } else if (*run) {
            return run_command(config_path, corpus_path, out_path, mode_flag);
        } else if (*probe) {
            probe_command(config_path, corpus_path, checkpoint_path, out_path, budget);
        } else if (*fit_cmd) {
            fit_command(config_path, records_path, corpus_path, out_path, last_path);
        } else if (*sel) {
            select_command(config_path, corpus_path, influence_path, method, stage, out_path);
        } else if (*rep) {
            report_command(report_paths, out_path, corpus_path,
                           thr->count() > 0 ? std::optional<double>(threshold_value)
                                            : std::nullopt);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
