#include "mates/oracle.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>

#include "mates/error.hpp"

namespace mates {

namespace {

using json = nlohmann::json;

constexpr int kMaxLassoSweeps = 10000;
constexpr double kLassoTol = 1e-8;

std::string format_double(double v) {
    char buf[32];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc())
        throw NumericError("cannot format value");
    return std::string(buf, end);
}

void take_step(ModelState& work, const AdamState& adam, const Example& x,
               const ProbeConfig& cfg) {
    const LossResult r = loss(work, {x});
    if (cfg.probe_optimizer == ProbeOptimizer::sgd) {
        sgd_step(work, r.grads, cfg.probe_lr);
    } else {
        AdamState probe_adam = clone_optimizer(adam);
        adam_step(work, r.grads, probe_adam, cfg.probe_lr);
    }
}

}  // namespace

double reference_loss(const ModelState& state, const std::vector<Example>& reference,
                      std::int64_t micro_batch) {
    if (reference.empty()) throw ContractError("reference_loss: empty reference set");
    if (micro_batch < 1)
        throw ConfigError("reference_loss: micro-batch must be positive, got " +
                          std::to_string(micro_batch));
    double nll = 0.0;
    std::int64_t positions = 0;
    const std::size_t chunk = static_cast<std::size_t>(micro_batch);
    for (std::size_t start = 0; start < reference.size(); start += chunk) {
        const std::size_t stop = std::min(reference.size(), start + chunk);
        const std::vector<Example> part(reference.begin() + static_cast<std::ptrdiff_t>(start),
                                        reference.begin() + static_cast<std::ptrdiff_t>(stop));
        for (const EvalSums& sums : eval_nll(state, part)) {
            nll += sums.nll_sum;
            positions += sums.positions;
        }
    }
    return nll / static_cast<double>(positions);
}

OracleRecord probe_influence(const ModelState& state, const AdamState& adam, const Example& x,
                             const std::vector<Example>& reference, const ProbeConfig& cfg,
                             double pre_loss) {
    ModelState work = snapshot(state);
    take_step(work, adam, x, cfg);
    const double post_loss = reference_loss(work, reference, cfg.reference_batch);

    OracleRecord record;
    record.example_id = x.id;
    record.step = state.step;
    record.influence = pre_loss - post_loss;
    if (!std::isfinite(record.influence))
        throw NumericError("probe of example " + std::to_string(x.id) +
                           " produced non-finite influence (post-step loss " +
                           std::to_string(post_loss) + ")");
    return record;
}

OracleRecord probe_influence(const ModelState& state, const AdamState& adam, const Example& x,
                             const std::vector<Example>& reference, const ProbeConfig& cfg) {
    return probe_influence(state, adam, x, reference, cfg,
                           reference_loss(state, reference, cfg.reference_batch));
}

ProbeSweep probe_many(const ModelState& state, const AdamState& adam,
                      const std::vector<Example>& subset,
                      const std::vector<Example>& reference, const ProbeConfig& cfg) {
    if (subset.empty()) throw ContractError("probe_many: empty subset");
    const double pre_loss = reference_loss(state, reference, cfg.reference_batch);

    const std::int64_t n = static_cast<std::int64_t>(subset.size());
    std::vector<OracleRecord> slots(subset.size());
    std::vector<std::string> errors(subset.size());
    std::vector<char> ok(subset.size(), 0);

#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < n; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        try {
            slots[idx] = probe_influence(state, adam, subset[idx], reference, cfg, pre_loss);
            ok[idx] = 1;
        } catch (const Error& e) {
            errors[idx] = e.what();
        }
    }

    ProbeSweep sweep;
    for (std::size_t i = 0; i < subset.size(); ++i) {
        if (ok[i])
            sweep.records.push_back(slots[i]);
        else
            sweep.failures.push_back(errors[i]);
    }
    if (sweep.records.empty())
        throw NumericError("all " + std::to_string(subset.size()) + " probes failed; first: " +
                           sweep.failures.front());
    return sweep;
}

double lasso_default_lambda(const Tensor& inclusion, const std::vector<double>& y) {
    if (!inclusion.is_matrix()) throw ContractError("lasso: inclusion must be a matrix");
    const std::int64_t rows = inclusion.rows(), cols = inclusion.cols();
    if (static_cast<std::int64_t>(y.size()) != rows)
        throw DimensionError("lasso: " + std::to_string(y.size()) + " responses for " +
                             std::to_string(rows) + " rows");
    double max_corr = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) {
        double dot = 0.0;
        for (std::int64_t i = 0; i < rows; ++i)
            dot += inclusion.at(i, j) * y[static_cast<std::size_t>(i)];
        max_corr = std::max(max_corr, std::abs(dot));
    }
    return 1e-3 * max_corr / static_cast<double>(rows);
}

std::vector<double> lasso_decompose(const Tensor& inclusion, const std::vector<double>& y,
                                    double lambda_l1, LassoDiag* diag) {
    if (!inclusion.is_matrix()) throw ContractError("lasso: inclusion must be a matrix");
    const std::int64_t rows = inclusion.rows(), cols = inclusion.cols();
    if (rows < 1) throw ContractError("lasso: need at least one row");
    if (static_cast<std::int64_t>(y.size()) != rows)
        throw DimensionError("lasso: " + std::to_string(y.size()) + " responses for " +
                             std::to_string(rows) + " rows");
    if (lambda_l1 < 0.0) throw ConfigError("lasso: negative penalty");
    if (!inclusion.all_finite()) throw NumericError("lasso: non-finite design matrix");
    for (double v : y)
        if (!std::isfinite(v)) throw NumericError("lasso: non-finite response");

    std::vector<double> col_sq(static_cast<std::size_t>(cols), 0.0);
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < cols; ++j)
            col_sq[static_cast<std::size_t>(j)] += inclusion.at(i, j) * inclusion.at(i, j);

    std::vector<double> w(static_cast<std::size_t>(cols), 0.0);
    std::vector<double> residual = y;
    if (diag != nullptr) {
        diag->objective_per_sweep.clear();
        diag->sweeps = 0;
    }

    auto objective = [&]() {
        double sq = 0.0;
        for (double r : residual) sq += r * r;
        double l1 = 0.0;
        for (double x : w) l1 += std::abs(x);
        return 0.5 * sq + lambda_l1 * l1;
    };

    for (int sweep = 0; sweep < kMaxLassoSweeps; ++sweep) {
        double max_change = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) {
            const auto ju = static_cast<std::size_t>(j);
            if (col_sq[ju] == 0.0) continue;
            double rho = col_sq[ju] * w[ju];
            for (std::int64_t i = 0; i < rows; ++i)
                rho += inclusion.at(i, j) * residual[static_cast<std::size_t>(i)];
            const double shrunk = std::abs(rho) <= lambda_l1
                                      ? 0.0
                                      : (rho > 0 ? rho - lambda_l1 : rho + lambda_l1);
            const double w_new = shrunk / col_sq[ju];
            const double delta = w_new - w[ju];
            if (delta != 0.0) {
                for (std::int64_t i = 0; i < rows; ++i)
                    residual[static_cast<std::size_t>(i)] -= inclusion.at(i, j) * delta;
                w[ju] = w_new;
            }
            max_change = std::max(max_change, std::abs(delta));
        }
        if (diag != nullptr) {
            diag->objective_per_sweep.push_back(objective());
            diag->sweeps = sweep + 1;
        }
        if (max_change < kLassoTol) return w;
    }
    double res_norm = 0.0;
    for (double r : residual) res_norm += r * r;
    throw ConvergenceError("lasso: no convergence after " + std::to_string(kMaxLassoSweeps) +
                           " sweeps, residual norm " + std::to_string(std::sqrt(res_norm)));
}

void save_records(const std::vector<OracleRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IOError("cannot open '" + path + "' for writing");
    for (const auto& r : records) {
        if (!std::isfinite(r.influence))
            throw ContractError("record for example " + std::to_string(r.example_id) +
                                " has non-finite influence");
        out << "{\"example_id\":" << r.example_id << ",\"step\":" << r.step
            << ",\"influence\":" << format_double(r.influence) << "}\n";
    }
    if (!out) throw IOError("write failed for '" + path + "'");
}

std::vector<OracleRecord> load_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IOError("cannot open '" + path + "' for reading");
    std::vector<OracleRecord> records;
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw ParseError(path + " line " + std::to_string(line_no) + ": invalid JSON");
        if (!j.contains("example_id") || !j.contains("step") || !j.contains("influence") ||
            !j["example_id"].is_number_integer() || !j["step"].is_number_integer() ||
            !j["influence"].is_number())
            throw ParseError(path + " line " + std::to_string(line_no) +
                             ": expected integer example_id, integer step, numeric influence");
        OracleRecord r;
        r.example_id = j["example_id"].get<std::int64_t>();
        r.step = j["step"].get<std::int64_t>();
        r.influence = j["influence"].get<double>();
        if (!std::isfinite(r.influence))
            throw ParseError(path + " line " + std::to_string(line_no) +
                             ": non-finite influence");
        records.push_back(r);
    }
    return records;
}

void export_records_csv(const std::vector<OracleRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IOError("cannot open '" + path + "' for writing");
    out << "example_id,step,influence\n";
    for (const auto& r : records)
        out << r.example_id << ',' << r.step << ',' << format_double(r.influence) << "\n";
    if (!out) throw IOError("write failed for '" + path + "'");
}

}  // namespace mates
