#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mates/corpus.hpp"
#include "mates/pipeline.hpp"
#include "mates/selection.hpp"

namespace mates {

// Composition of one stage's selection, judged by generation-time quality
// tags. precision is the clean fraction of the stage's picks.
struct StageAudit {
    std::int64_t stage = 0;
    std::int64_t clean = 0;
    std::int64_t noise = 0;
    std::int64_t shuffled = 0;
    double precision = 0.0;

    bool operator==(const StageAudit&) const = default;
};

struct SelectionAudit {
    std::vector<StageAudit> stages;  // ascending by stage
    double pool_clean_rate = 0.0;
    double pool_noise_rate = 0.0;
    double pool_shuffled_rate = 0.0;

    bool operator==(const SelectionAudit&) const = default;
};

// Tags every selection record against the pool it was drawn from. A selection
// id that is not a pool id is a contract violation.
SelectionAudit audit_selection(const std::vector<SelectionRecord>& selections,
                               const std::vector<Example>& pool);

// First evaluation step at which the reference loss is at or below the
// threshold, if the curve ever gets there.
std::optional<std::int64_t> steps_to_threshold(const RunReport& report, double threshold);

// Wide CSV comparison over a shared evaluation grid: one step column plus a
// loss and a flops column per report, labeled "<mode>_s<seed>". Reports whose
// grids disagree are rejected with the offending steps listed.
std::string compare_runs(const std::vector<RunReport>& reports);

// The per-collection scorer correlations of a completed probing run:
// total_steps / update_interval - 1 points, the first measured on the scorer
// fitted right after warmup.
std::vector<StageCorrelation> spearman_trajectory(const RunReport& report);

// Long-format CSV artifacts. Doubles are written in shortest-round-trip form,
// so the loaders recover them exactly.
void write_loss_curves_csv(const std::vector<RunReport>& reports, const std::string& path);
void write_audit_csv(const SelectionAudit& audit, const std::string& path);
void write_spearman_csv(const std::vector<RunReport>& reports, const std::string& path);

struct LossCurveRow {
    std::int64_t step = 0;
    std::string mode;
    double ref_loss = 0.0;
    std::int64_t flops = 0;

    bool operator==(const LossCurveRow&) const = default;
};

struct SpearmanRow {
    std::int64_t step = 0;
    std::string mode;
    double rho = 0.0;

    bool operator==(const SpearmanRow&) const = default;
};

std::vector<LossCurveRow> load_loss_curves_csv(const std::string& path);
std::vector<StageAudit> load_audit_csv(const std::string& path);
std::vector<SpearmanRow> load_spearman_csv(const std::string& path);

}  // namespace mates
