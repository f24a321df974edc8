#include "mates/eval_report.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mates/error.hpp"

namespace mates {

namespace {

std::string format_double(double v) {
    char buf[32];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw NumericError("cannot format value");
    return std::string(buf, end);
}

std::string run_label(const RunReport& report) {
    return to_string(report.config.mode) + "_s" + std::to_string(report.seed);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

std::int64_t parse_i64(const std::string& s, const std::string& where) {
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ParseError(where + ": '" + s + "' is not an integer");
    }
    return v;
}

double parse_double(const std::string& s, const std::string& where) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
        throw ParseError(where + ": '" + s + "' is not a finite number");
    }
    return v;
}

// Reads all lines, checks the header, and hands each data line's fields to
// the row callback with a "path line N" context string.
template <typename RowFn>
void load_csv(const std::string& path, const std::string& header, std::size_t n_fields,
              RowFn row) {
    std::ifstream in(path);
    if (!in) throw IOError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    if (line != header) {
        throw ParseError(path + ": expected header '" + header + "', got '" + line + "'");
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_csv_line(line);
        if (fields.size() != n_fields) {
            throw ParseError(path + " line " + std::to_string(line_no) + ": expected " +
                             std::to_string(n_fields) + " fields, got " +
                             std::to_string(fields.size()));
        }
        row(fields, path + " line " + std::to_string(line_no));
    }
}

std::ofstream open_for_write(const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IOError("cannot open '" + path + "' for writing");
    return out;
}

}  // namespace

SelectionAudit audit_selection(const std::vector<SelectionRecord>& selections,
                               const std::vector<Example>& pool) {
    if (pool.empty()) throw ContractError("cannot audit selections against an empty pool");
    std::unordered_map<std::int64_t, QualityTag> tag_of;
    tag_of.reserve(pool.size());
    for (const Example& x : pool) tag_of.emplace(x.id, x.quality_tag);

    std::map<std::int64_t, StageAudit> stages;
    for (const SelectionRecord& r : selections) {
        const auto it = tag_of.find(r.id);
        if (it == tag_of.end()) {
            throw ContractError("selection id " + std::to_string(r.id) + " (stage " +
                                std::to_string(r.stage) + ") is not in the pool");
        }
        StageAudit& a = stages[r.stage];
        a.stage = r.stage;
        switch (it->second) {
            case QualityTag::clean: ++a.clean; break;
            case QualityTag::noise: ++a.noise; break;
            case QualityTag::shuffled: ++a.shuffled; break;
        }
    }

    SelectionAudit audit;
    for (auto& [stage, a] : stages) {
        const std::int64_t total = a.clean + a.noise + a.shuffled;
        a.precision = static_cast<double>(a.clean) / static_cast<double>(total);
        audit.stages.push_back(a);
    }
    std::int64_t clean = 0;
    std::int64_t noise = 0;
    std::int64_t shuffled = 0;
    for (const Example& x : pool) {
        switch (x.quality_tag) {
            case QualityTag::clean: ++clean; break;
            case QualityTag::noise: ++noise; break;
            case QualityTag::shuffled: ++shuffled; break;
        }
    }
    const double n = static_cast<double>(pool.size());
    audit.pool_clean_rate = static_cast<double>(clean) / n;
    audit.pool_noise_rate = static_cast<double>(noise) / n;
    audit.pool_shuffled_rate = static_cast<double>(shuffled) / n;
    return audit;
}

std::optional<std::int64_t> steps_to_threshold(const RunReport& report, double threshold) {
    if (!std::isfinite(threshold)) throw ContractError("threshold must be finite");
    for (const EvalPoint& p : report.eval_points) {
        if (p.ref_loss <= threshold) return p.step;
    }
    return std::nullopt;
}

std::string compare_runs(const std::vector<RunReport>& reports) {
    if (reports.empty()) throw ContractError("no reports to compare");
    std::vector<std::int64_t> grid;
    for (const EvalPoint& p : reports[0].eval_points) grid.push_back(p.step);
    for (std::size_t r = 1; r < reports.size(); ++r) {
        std::vector<std::int64_t> other;
        for (const EvalPoint& p : reports[r].eval_points) other.push_back(p.step);
        if (other == grid) continue;
        const std::set<std::int64_t> a(grid.begin(), grid.end());
        const std::set<std::int64_t> b(other.begin(), other.end());
        std::string offending;
        for (std::int64_t s : a) {
            if (!b.count(s)) offending += (offending.empty() ? "" : ", ") + std::to_string(s);
        }
        for (std::int64_t s : b) {
            if (!a.count(s)) offending += (offending.empty() ? "" : ", ") + std::to_string(s);
        }
        if (offending.empty()) offending = "(same steps, different order)";
        throw ContractError("report " + std::to_string(r) +
                            " evaluation grid disagrees with report 0 at steps: " + offending);
    }

    std::ostringstream out;
    out << "step";
    for (const RunReport& rep : reports) {
        const std::string label = run_label(rep);
        out << ',' << label << "_loss," << label << "_flops";
    }
    out << '\n';
    for (std::size_t i = 0; i < grid.size(); ++i) {
        out << grid[i];
        for (const RunReport& rep : reports) {
            const EvalPoint& p = rep.eval_points[i];
            out << ',' << format_double(p.ref_loss) << ',' << p.flops;
        }
        out << '\n';
    }
    return out.str();
}

std::vector<StageCorrelation> spearman_trajectory(const RunReport& report) {
    if (report.config.mode != SelectionMode::mates &&
        report.config.mode != SelectionMode::static_influence) {
        throw ContractError("no scorer trajectory for mode '" + to_string(report.config.mode) +
                            "'");
    }
    const std::int64_t expected =
        report.config.total_steps / report.config.update_interval - 1;
    if (static_cast<std::int64_t>(report.stage_spearman.size()) != expected) {
        throw ContractError("expected " + std::to_string(expected) +
                            " correlation points, report has " +
                            std::to_string(report.stage_spearman.size()));
    }
    return report.stage_spearman;
}

void write_loss_curves_csv(const std::vector<RunReport>& reports, const std::string& path) {
    std::ofstream out = open_for_write(path);
    out << "step,mode,ref_loss,flops\n";
    for (const RunReport& rep : reports) {
        const std::string mode = to_string(rep.config.mode);
        for (const EvalPoint& p : rep.eval_points) {
            out << p.step << ',' << mode << ',' << format_double(p.ref_loss) << ',' << p.flops
                << '\n';
        }
    }
    if (!out) throw IOError("write failed for '" + path + "'");
}

void write_audit_csv(const SelectionAudit& audit, const std::string& path) {
    std::ofstream out = open_for_write(path);
    out << "stage,clean,noise,shuffled,precision\n";
    for (const StageAudit& a : audit.stages) {
        out << a.stage << ',' << a.clean << ',' << a.noise << ',' << a.shuffled << ','
            << format_double(a.precision) << '\n';
    }
    if (!out) throw IOError("write failed for '" + path + "'");
}

void write_spearman_csv(const std::vector<RunReport>& reports, const std::string& path) {
    std::ofstream out = open_for_write(path);
    out << "step,mode,rho\n";
    for (const RunReport& rep : reports) {
        const std::string mode = to_string(rep.config.mode);
        for (const StageCorrelation& c : rep.stage_spearman) {
            out << c.step << ',' << mode << ',' << format_double(c.rho) << '\n';
        }
    }
    if (!out) throw IOError("write failed for '" + path + "'");
}

std::vector<LossCurveRow> load_loss_curves_csv(const std::string& path) {
    std::vector<LossCurveRow> rows;
    load_csv(path, "step,mode,ref_loss,flops", 4,
             [&](const std::vector<std::string>& f, const std::string& where) {
                 rows.push_back({parse_i64(f[0], where), f[1], parse_double(f[2], where),
                                 parse_i64(f[3], where)});
             });
    return rows;
}

std::vector<StageAudit> load_audit_csv(const std::string& path) {
    std::vector<StageAudit> rows;
    load_csv(path, "stage,clean,noise,shuffled,precision", 5,
             [&](const std::vector<std::string>& f, const std::string& where) {
                 rows.push_back({parse_i64(f[0], where), parse_i64(f[1], where),
                                 parse_i64(f[2], where), parse_i64(f[3], where),
                                 parse_double(f[4], where)});
             });
    return rows;
}

std::vector<SpearmanRow> load_spearman_csv(const std::string& path) {
    std::vector<SpearmanRow> rows;
    load_csv(path, "step,mode,rho", 3,
             [&](const std::vector<std::string>& f, const std::string& where) {
                 rows.push_back({parse_i64(f[0], where), f[1], parse_double(f[2], where)});
             });
    return rows;
}

}  // namespace mates
