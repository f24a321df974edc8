#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mates/corpus.hpp"
#include "mates/influence_model.hpp"
#include "mates/model.hpp"
#include "mates/optim.hpp"
#include "mates/oracle.hpp"
#include "mates/selection.hpp"

namespace mates {

// How the training subset for each stage is chosen. `mates` re-probes the
// holdout and refits the influence regressor at every stage boundary;
// `static_influence` behaves identically through the collection at the end of
// stage `static_stage`, then freezes the regressor; `random` resamples
// uniformly; `ngram` uses reference-proximity weights.
enum class SelectionMode { mates, random, static_influence, ngram };

std::string to_string(SelectionMode mode);
SelectionMode selection_mode_from_string(const std::string& s);

struct PipelineConfig {
    std::int64_t total_steps = 3000;     // T, optimizer steps over the whole run
    std::int64_t update_interval = 500;  // U; stage s trains on steps [sU, (s+1)U)
    std::int64_t batch_size = 32;
    std::int64_t probe_budget_first = 800;  // holdout probes at the first collection
    std::int64_t probe_budget_later = 200;  // and at every later one
    double selection_ratio = 0.2;           // k = round(ratio * |pool|)
    double tau = 1.0;                       // Gumbel-Top-k temperature
    SelectionMode mode = SelectionMode::mates;
    std::int64_t static_stage = 0;  // static mode: last stage whose probes update the regressor
    std::uint64_t seed = 0;
    LMConfig model;        // model.seed is replaced by the run seed
    WSDConfig schedule;    // stable_end must equal total_steps
    ProbeConfig probe;     // probe_lr is replaced by the schedule rate at each collection
    FitConfig fit;         // init and seed are replaced per collection

    bool operator==(const PipelineConfig&) const = default;
};

// Schedule for a run of T steps: warmup 20 (capped so it ends before the first
// evaluation point at U/5), stable through T, decay window max(2, T/250).
WSDConfig default_schedule(std::int64_t total_steps, std::int64_t update_interval);

// Number of examples selected per stage: round(selection_ratio * pool_size).
std::int64_t selection_size(const PipelineConfig& cfg, std::int64_t pool_size);

// One reference-loss measurement. The loss is taken after `step` optimizer
// steps by running the decay tail of the schedule on a throwaway copy of the
// run state; `flops` is the ledger total at that point, so the same points
// plot against steps or against compute.
struct EvalPoint {
    std::int64_t step = 0;
    double ref_loss = 0.0;
    std::int64_t flops = 0;

    bool operator==(const EvalPoint&) const = default;
};

// Validation Spearman of the scorer in force at one collection, measured on
// the held-out split of that collection's fresh probe records.
struct StageCorrelation {
    std::int64_t step = 0;
    double rho = 0.0;

    bool operator==(const StageCorrelation&) const = default;
};

// Exact integer FLOPs by category. The four categories are fixed; ledger_add
// rejects any other name.
struct FlopsLedger {
    std::int64_t model_pretraining = 0;
    std::int64_t oracle_collection = 0;
    std::int64_t influence_training = 0;
    std::int64_t influence_inference = 0;

    bool operator==(const FlopsLedger&) const = default;
};

inline constexpr const char* kLedgerCategories[] = {
    "model pretraining",
    "oracle collection",
    "influence-model training",
    "influence-model inference",
};

void ledger_add(FlopsLedger& ledger, const std::string& category, std::int64_t flops);
std::int64_t ledger_total(const FlopsLedger& ledger);

// Everything a run reports: the config echo, the evaluation curve, every
// stage's selection log and scorer correlation, and the compute ledger. When a
// stage fails mid-run, `completed` is false, `error` holds the failure text,
// and the artifacts gathered up to the failure are kept.
struct RunReport {
    PipelineConfig config;
    std::uint64_t seed = 0;
    bool completed = false;
    std::string error;
    std::vector<EvalPoint> eval_points;
    std::vector<StageCorrelation> stage_spearman;
    std::vector<SelectionRecord> selections;
    FlopsLedger ledger;

    bool operator==(const RunReport&) const = default;
};

// Final run state for callers that persist more than the report. On a failed
// run this holds whatever existed at the abort point.
struct RunArtifacts {
    ModelState model;
    AdamState optimizer;
    std::vector<OracleRecord> records;  // all collections, in probe order
    Regressor regressor;                // last fitted scorer
    bool has_regressor = false;
};

// Staged pretraining with per-stage subset selection. Stage 0 always trains on
// a uniformly sampled size-k subset; at every later stage boundary t = sU the
// mode picks the next subset (mates and static probe a fresh block of the
// holdout there first). Batches are drawn from the current subset without
// replacement, reshuffling when it is exhausted. The reference loss is
// recorded every U/5 steps via the decay-tail measurement; those throwaway
// steps are not ledger compute. Seed streams for warmup, batching, probing,
// fitting, and selection depend only on the run seed and the stage index,
// never on the mode, so runs with different modes stay aligned draw for draw.
RunReport run_pipeline(const CorpusSplit& corpus, const PipelineConfig& cfg,
                       RunArtifacts* artifacts = nullptr);

// Mode-checked wrappers over run_pipeline.
RunReport run_mates(const CorpusSplit& corpus, const PipelineConfig& cfg,
                    RunArtifacts* artifacts = nullptr);
RunReport run_baseline(const CorpusSplit& corpus, const PipelineConfig& cfg,
                       RunArtifacts* artifacts = nullptr);

// Closed-form ledger for a corpus whose sequences all have length seq_len.
// A completed run on such a corpus produces exactly this ledger, so the cost
// model can be studied without training.
FlopsLedger project_ledger(const PipelineConfig& cfg, std::int64_t pool_size,
                           std::int64_t holdout_size, std::int64_t reference_size,
                           std::int64_t seq_len);

// JSON persistence. Serialization is canonical (fixed key order, exact
// shortest-round-trip doubles), so equal reports produce identical bytes.
std::string report_to_json(const RunReport& report);
RunReport report_from_json(const std::string& text);
void save_report(const RunReport& report, const std::string& path);
RunReport load_report(const std::string& path);

}  // namespace mates
