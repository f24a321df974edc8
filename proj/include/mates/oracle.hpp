#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mates/model.hpp"
#include "mates/numerics.hpp"
#include "mates/optim.hpp"

namespace mates {

// Locally probed influence of one training example: the drop in reference
// loss caused by a single optimizer step on that example alone.
struct OracleRecord {
    std::int64_t example_id = 0;
    std::int64_t step = 0;
    double influence = 0.0;

    bool operator==(const OracleRecord&) const = default;
};

enum class ProbeOptimizer { adam_clone, sgd };

struct ProbeConfig {
    ProbeOptimizer probe_optimizer = ProbeOptimizer::adam_clone;
    double probe_lr = 1e-3;
    std::int64_t reference_batch = 64;  // micro-batch size for reference evaluation

    bool operator==(const ProbeConfig&) const = default;
};

// Per-token mean NLL over the whole reference set. Per-example sums are
// combined in id order, so the value is independent of the micro-batch size.
double reference_loss(const ModelState& state, const std::vector<Example>& reference,
                      std::int64_t micro_batch = 64);

// One probe cycle: copy state, take one step on x alone, re-evaluate the
// reference set, discard the copy. influence = pre_loss - post_loss; the
// caller's state and optimizer are never written.
OracleRecord probe_influence(const ModelState& state, const AdamState& adam, const Example& x,
                             const std::vector<Example>& reference, const ProbeConfig& cfg);
OracleRecord probe_influence(const ModelState& state, const AdamState& adam, const Example& x,
                             const std::vector<Example>& reference, const ProbeConfig& cfg,
                             double pre_loss);

// Probes every example in the subset against one shared pre-loss. Each probe
// runs on its own state copy, so results do not depend on execution order and
// examples may be probed in parallel. Per-example numeric failures are
// reported in `failures` and skipped; if every probe fails, throws.
struct ProbeSweep {
    std::vector<OracleRecord> records;
    std::vector<std::string> failures;
};

ProbeSweep probe_many(const ModelState& state, const AdamState& adam,
                      const std::vector<Example>& subset,
                      const std::vector<Example>& reference, const ProbeConfig& cfg);

// LASSO by cyclic coordinate descent with soft thresholding: minimizes
// 0.5*||y - Xw||^2 + lambda*||w||_1. Used to decompose batch-level influence
// measurements (rows of a binary inclusion matrix) into per-example scores.
struct LassoDiag {
    std::vector<double> objective_per_sweep;
    std::int64_t sweeps = 0;
};

double lasso_default_lambda(const Tensor& inclusion, const std::vector<double>& y);
std::vector<double> lasso_decompose(const Tensor& inclusion, const std::vector<double>& y,
                                    double lambda_l1, LassoDiag* diag = nullptr);

// JSONL persistence (fields example_id, step, influence; doubles round-trip
// exactly) and a CSV export for analysis.
void save_records(const std::vector<OracleRecord>& records, const std::string& path);
std::vector<OracleRecord> load_records(const std::string& path);
void export_records_csv(const std::vector<OracleRecord>& records, const std::string& path);

}  // namespace mates
