#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mates/corpus.hpp"
#include "mates/error.hpp"
#include "mates/eval_report.hpp"
#include "mates/influence_model.hpp"
#include "mates/oracle.hpp"
#include "mates/pipeline.hpp"
#include "mates/selection.hpp"

namespace py = pybind11;
using namespace mates;

PYBIND11_MODULE(_core, m) {
    m.doc() = "model-aware data selection laboratory: corpus generation, staged "
              "selection-and-pretraining runs, influence models, and run reports";

    auto err = py::register_exception<Error>(m, "Error");
    py::register_exception<ConfigError>(m, "ConfigError", err);
    py::register_exception<ContractError>(m, "ContractError", err);
    py::register_exception<NumericError>(m, "NumericError", err);
    py::register_exception<ParseError>(m, "ParseError", err);
    py::register_exception<RangeError>(m, "RangeError", err);
    py::register_exception<IOError>(m, "IOError", err);

    py::enum_<QualityTag>(m, "QualityTag")
        .value("clean", QualityTag::clean)
        .value("noise", QualityTag::noise)
        .value("shuffled", QualityTag::shuffled);
    py::enum_<Arch>(m, "Arch")
        .value("bigram", Arch::bigram)
        .value("transformer", Arch::transformer);
    py::enum_<SelectionMode>(m, "SelectionMode")
        .value("mates", SelectionMode::mates)
        .value("random", SelectionMode::random)
        .value("static_influence", SelectionMode::static_influence)
        .value("ngram", SelectionMode::ngram);
    py::enum_<ProbeOptimizer>(m, "ProbeOptimizer")
        .value("adam_clone", ProbeOptimizer::adam_clone)
        .value("sgd", ProbeOptimizer::sgd);
    py::enum_<HeadKind>(m, "HeadKind")
        .value("linear", HeadKind::linear)
        .value("mlp", HeadKind::mlp);
    py::enum_<FitConfig::Init>(m, "FitInit")
        .value("fresh", FitConfig::Init::fresh)
        .value("continue_from_last", FitConfig::Init::continue_from_last);

    py::class_<Example>(m, "Example")
        .def(py::init<>())
        .def_readwrite("id", &Example::id)
        .def_readwrite("tokens", &Example::tokens)
        .def_readwrite("quality_tag", &Example::quality_tag)
        .def(py::self == py::self);
    py::class_<CorpusSplit>(m, "CorpusSplit")
        .def(py::init<>())
        .def_readwrite("train_pool", &CorpusSplit::train_pool)
        .def_readwrite("holdout", &CorpusSplit::holdout)
        .def_readwrite("reference", &CorpusSplit::reference)
        .def(py::self == py::self);
    py::class_<CorpusSizes>(m, "CorpusSizes")
        .def(py::init<>())
        .def_readwrite("train", &CorpusSizes::train)
        .def_readwrite("holdout", &CorpusSizes::holdout)
        .def_readwrite("reference", &CorpusSizes::reference);
    py::class_<QualityMix>(m, "QualityMix")
        .def(py::init<>())
        .def_readwrite("clean", &QualityMix::clean)
        .def_readwrite("noise", &QualityMix::noise)
        .def_readwrite("shuffled", &QualityMix::shuffled);

    m.def("generate", &generate, py::arg("seed"), py::arg("sizes"), py::arg("mix"),
          py::arg("vocab_size") = 256, py::arg("seq_len") = 64,
          "Generate a mixed-quality corpus split");
    m.def("save_corpus", &save, py::arg("split"), py::arg("path"),
          "Write a corpus as JSON lines (.gz honored)");
    m.def("load_corpus", &load, py::arg("path"), "Read a corpus written by save_corpus");

    py::class_<LMConfig>(m, "LMConfig")
        .def(py::init<>())
        .def_readwrite("vocab_size", &LMConfig::vocab_size)
        .def_readwrite("context_len", &LMConfig::context_len)
        .def_readwrite("d_model", &LMConfig::d_model)
        .def_readwrite("n_layers", &LMConfig::n_layers)
        .def_readwrite("n_heads", &LMConfig::n_heads)
        .def_readwrite("arch", &LMConfig::arch)
        .def_readwrite("seed", &LMConfig::seed);
    py::class_<WSDConfig>(m, "WSDConfig")
        .def(py::init<>())
        .def_readwrite("warmup", &WSDConfig::warmup)
        .def_readwrite("stable_end", &WSDConfig::stable_end)
        .def_readwrite("decay", &WSDConfig::decay)
        .def_readwrite("eta", &WSDConfig::eta);
    py::class_<ProbeConfig>(m, "ProbeConfig")
        .def(py::init<>())
        .def_readwrite("probe_optimizer", &ProbeConfig::probe_optimizer)
        .def_readwrite("probe_lr", &ProbeConfig::probe_lr)
        .def_readwrite("reference_batch", &ProbeConfig::reference_batch);
    py::class_<FeaturizerConfig>(m, "FeaturizerConfig")
        .def(py::init<>())
        .def_readwrite("orders", &FeaturizerConfig::orders)
        .def_readwrite("dim", &FeaturizerConfig::dim)
        .def_readwrite("hash_seed", &FeaturizerConfig::hash_seed)
        .def_readwrite("chunk_limit", &FeaturizerConfig::chunk_limit);
    py::class_<FitConfig>(m, "FitConfig")
        .def(py::init<>())
        .def_readwrite("epochs", &FitConfig::epochs)
        .def_readwrite("batch", &FitConfig::batch)
        .def_readwrite("lr", &FitConfig::lr)
        .def_readwrite("validation_fraction", &FitConfig::validation_fraction)
        .def_readwrite("init", &FitConfig::init)
        .def_readwrite("head", &FitConfig::head)
        .def_readwrite("hidden", &FitConfig::hidden)
        .def_readwrite("seed", &FitConfig::seed)
        .def_readwrite("features", &FitConfig::features);

    py::class_<OracleRecord>(m, "OracleRecord")
        .def(py::init<>())
        .def_readwrite("example_id", &OracleRecord::example_id)
        .def_readwrite("step", &OracleRecord::step)
        .def_readwrite("influence", &OracleRecord::influence)
        .def(py::self == py::self);
    m.def("save_records", &save_records, py::arg("records"), py::arg("path"),
          "Write influence records as JSON lines");
    m.def("load_records", &load_records, py::arg("path"),
          "Read influence records written by save_records");

    py::class_<Regressor>(m, "Regressor")
        .def(py::init<>())
        .def_readwrite("kind", &Regressor::kind)
        .def_readwrite("features", &Regressor::features)
        .def_readwrite("hidden", &Regressor::hidden)
        .def_readwrite("params", &Regressor::params)
        .def(py::self == py::self);
    py::class_<FitResult>(m, "FitResult")
        .def(py::init<>())
        .def_readwrite("regressor", &FitResult::regressor)
        .def_readwrite("validation_spearman", &FitResult::validation_spearman)
        .def_readwrite("train_count", &FitResult::train_count)
        .def_readwrite("val_count", &FitResult::val_count);

    m.def("featurize", &featurize, py::arg("example"), py::arg("config"),
          "Hashed n-gram feature vector for one example");
    m.def(
        "fit",
        [](const std::vector<std::pair<Example, double>>& records, const FitConfig& cfg,
           const Regressor* last) { return fit(records, cfg, last); },
        py::arg("records"), py::arg("config"), py::arg("last") = nullptr,
        "Fit the influence regressor on (example, influence) pairs");
    m.def("predict_features", &predict_features, py::arg("regressor"), py::arg("features"),
          "Score one pre-featurized example");
    m.def("predict_pool", &predict_pool, py::arg("regressor"), py::arg("pool"),
          "Score every example in a pool");
    m.def("save_regressor", &save_regressor, py::arg("regressor"), py::arg("path"),
          "Write a regressor to a .mtif file");
    m.def("load_regressor", &load_regressor, py::arg("path"),
          "Read a regressor written by save_regressor");

    py::class_<SelectionRecord>(m, "SelectionRecord")
        .def(py::init<>())
        .def_readwrite("id", &SelectionRecord::id)
        .def_readwrite("score", &SelectionRecord::score)
        .def_readwrite("stage", &SelectionRecord::stage)
        .def(py::self == py::self);
    m.def(
        "gumbel_top_k",
        [](const std::vector<double>& scores, std::int64_t k, double tau, std::uint64_t seed) {
            return gumbel_top_k(scores, {k, tau, seed});
        },
        py::arg("scores"), py::arg("k"), py::arg("tau") = 1.0, py::arg("seed") = 0,
        "Ids of the k largest (score/tau + Gumbel noise); tau = 0 is plain top-k");
    m.def("random_select", &random_select, py::arg("n"), py::arg("k"), py::arg("seed"),
          "Uniform sample of k distinct ids from [0, n)");
    m.def("ngram_proximity_weights", &ngram_proximity_weights, py::arg("pool"),
          py::arg("reference"), "Bigram importance weight of each pool example");
    m.def("ngram_proximity_select", &ngram_proximity_select, py::arg("pool"),
          py::arg("reference"), py::arg("k"), py::arg("seed"),
          "Gumbel-Top-k over the proximity weights");
    m.def("save_selection", &save_selection, py::arg("records"), py::arg("path"),
          "Write selection records as JSON lines");
    m.def("load_selection", &load_selection, py::arg("path"),
          "Read selection records written by save_selection");

    py::class_<EvalPoint>(m, "EvalPoint")
        .def(py::init<>())
        .def_readwrite("step", &EvalPoint::step)
        .def_readwrite("ref_loss", &EvalPoint::ref_loss)
        .def_readwrite("flops", &EvalPoint::flops)
        .def(py::self == py::self);
    py::class_<StageCorrelation>(m, "StageCorrelation")
        .def(py::init<>())
        .def_readwrite("step", &StageCorrelation::step)
        .def_readwrite("rho", &StageCorrelation::rho)
        .def(py::self == py::self);
    py::class_<FlopsLedger>(m, "FlopsLedger")
        .def(py::init<>())
        .def_readwrite("model_pretraining", &FlopsLedger::model_pretraining)
        .def_readwrite("oracle_collection", &FlopsLedger::oracle_collection)
        .def_readwrite("influence_training", &FlopsLedger::influence_training)
        .def_readwrite("influence_inference", &FlopsLedger::influence_inference)
        .def(py::self == py::self);
    py::class_<PipelineConfig>(m, "PipelineConfig")
        .def(py::init<>())
        .def_readwrite("total_steps", &PipelineConfig::total_steps)
        .def_readwrite("update_interval", &PipelineConfig::update_interval)
        .def_readwrite("batch_size", &PipelineConfig::batch_size)
        .def_readwrite("probe_budget_first", &PipelineConfig::probe_budget_first)
        .def_readwrite("probe_budget_later", &PipelineConfig::probe_budget_later)
        .def_readwrite("selection_ratio", &PipelineConfig::selection_ratio)
        .def_readwrite("tau", &PipelineConfig::tau)
        .def_readwrite("mode", &PipelineConfig::mode)
        .def_readwrite("static_stage", &PipelineConfig::static_stage)
        .def_readwrite("seed", &PipelineConfig::seed)
        .def_readwrite("model", &PipelineConfig::model)
        .def_readwrite("schedule", &PipelineConfig::schedule)
        .def_readwrite("probe", &PipelineConfig::probe)
        .def_readwrite("fit", &PipelineConfig::fit)
        .def(py::self == py::self);
    py::class_<RunReport>(m, "RunReport")
        .def(py::init<>())
        .def_readwrite("config", &RunReport::config)
        .def_readwrite("seed", &RunReport::seed)
        .def_readwrite("completed", &RunReport::completed)
        .def_readwrite("error", &RunReport::error)
        .def_readwrite("eval_points", &RunReport::eval_points)
        .def_readwrite("stage_spearman", &RunReport::stage_spearman)
        .def_readwrite("selections", &RunReport::selections)
        .def_readwrite("ledger", &RunReport::ledger)
        .def(py::self == py::self);

    m.def("default_schedule", &default_schedule, py::arg("total_steps"),
          py::arg("update_interval"), "WSD schedule a run of this shape uses by default");
    m.def("selection_size", &selection_size, py::arg("config"), py::arg("pool_size"),
          "Number of examples selected per stage");
    m.def(
        "run_pipeline",
        [](const CorpusSplit& corpus, const PipelineConfig& cfg) {
            return run_pipeline(corpus, cfg);
        },
        py::arg("corpus"), py::arg("config"),
        "Staged selection-and-pretraining run; returns the run report");
    m.def(
        "run_mates",
        [](const CorpusSplit& corpus, const PipelineConfig& cfg) {
            return run_mates(corpus, cfg);
        },
        py::arg("corpus"), py::arg("config"), "run_pipeline, checked to be in mates mode");
    m.def(
        "run_baseline",
        [](const CorpusSplit& corpus, const PipelineConfig& cfg) {
            return run_baseline(corpus, cfg);
        },
        py::arg("corpus"), py::arg("config"), "run_pipeline, checked to be a baseline mode");
    m.def("project_ledger", &project_ledger, py::arg("config"), py::arg("pool_size"),
          py::arg("holdout_size"), py::arg("reference_size"), py::arg("seq_len"),
          "Closed-form compute ledger for a uniform-length corpus");
    m.def("ledger_add", &ledger_add, py::arg("ledger"), py::arg("category"), py::arg("flops"),
          "Add flops to one of the four fixed categories");
    m.def("ledger_total", &ledger_total, py::arg("ledger"), "Sum over the four categories");
    m.def("report_to_json", &report_to_json, py::arg("report"),
          "Canonical JSON text for a run report");
    m.def("report_from_json", &report_from_json, py::arg("text"),
          "Parse a report written by report_to_json");
    m.def("save_report", &save_report, py::arg("report"), py::arg("path"),
          "Write a run report as JSON");
    m.def("load_report", &load_report, py::arg("path"),
          "Read a report written by save_report");

    py::class_<StageAudit>(m, "StageAudit")
        .def(py::init<>())
        .def_readwrite("stage", &StageAudit::stage)
        .def_readwrite("clean", &StageAudit::clean)
        .def_readwrite("noise", &StageAudit::noise)
        .def_readwrite("shuffled", &StageAudit::shuffled)
        .def_readwrite("precision", &StageAudit::precision)
        .def(py::self == py::self);
    py::class_<SelectionAudit>(m, "SelectionAudit")
        .def(py::init<>())
        .def_readwrite("stages", &SelectionAudit::stages)
        .def_readwrite("pool_clean_rate", &SelectionAudit::pool_clean_rate)
        .def_readwrite("pool_noise_rate", &SelectionAudit::pool_noise_rate)
        .def_readwrite("pool_shuffled_rate", &SelectionAudit::pool_shuffled_rate)
        .def(py::self == py::self);
    m.def("audit_selection", &audit_selection, py::arg("selections"), py::arg("pool"),
          "Per-stage quality composition of a selection log");
    m.def("steps_to_threshold", &steps_to_threshold, py::arg("report"), py::arg("threshold"),
          "First evaluation step at or below the threshold loss, or None");
    m.def("compare_runs", &compare_runs, py::arg("reports"),
          "Side-by-side loss/flops CSV text for runs on one evaluation grid");
    m.def("spearman_trajectory", &spearman_trajectory, py::arg("report"),
          "Scorer validation Spearman at every collection of a probing run");
    m.def("write_loss_curves_csv", &write_loss_curves_csv, py::arg("reports"), py::arg("path"),
          "Long-format loss curve CSV for a set of reports");
    m.def("write_audit_csv", &write_audit_csv, py::arg("audit"), py::arg("path"),
          "Per-stage audit CSV");
    m.def("write_spearman_csv", &write_spearman_csv, py::arg("reports"), py::arg("path"),
          "Scorer correlation trajectory CSV");
}
