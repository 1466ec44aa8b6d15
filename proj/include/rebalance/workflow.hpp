#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rebalance/csv.hpp"
#include "rebalance/diagnostics.hpp"
#include "rebalance/error.hpp"
#include "rebalance/estimators.hpp"
#include "rebalance/report.hpp"
#include "rebalance/sample.hpp"
#include "rebalance/transforms.hpp"

namespace rebalance {

/// Everything one CLI invocation needs.
struct RunConfig {
    std::filesystem::path sample_path;
    std::filesystem::path target_path;
    std::string id_col = "id";
    std::optional<std::string> weight_col;
    std::vector<std::string> outcome_cols;
    Method method = Method::Ipw;
    std::optional<std::string> formula;
    std::optional<double> max_de;
    std::vector<std::string> margins;
    std::vector<std::string> strata;
    double trim_cap = 20.0;
    std::uint64_t seed = 0;
    double alpha = 0.05;
    int folds = 10;
    bool plots = false;
    std::optional<std::filesystem::path> weights_path;
    std::optional<std::filesystem::path> config_path;
    std::filesystem::path out_dir = ".";
    TransformConfig transforms{};
    std::map<std::string, double> penalty_factors;

    void validate() const {
        if (sample_path.empty() || target_path.empty())
            throw Error(ErrorCode::InvalidArgument, "sample and target paths are required");
        if (id_col.empty()) throw Error(ErrorCode::InvalidArgument, "id column name is empty");
        if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
        if (!(trim_cap > 1.0)) throw Error(ErrorCode::InvalidArgument, "trim cap must exceed 1");
        if (max_de && !(*max_de > 1.0)) throw Error(ErrorCode::InvalidArgument, "max_de must exceed 1");
        if (folds < 2) throw Error(ErrorCode::InvalidArgument, "folds must be at least 2");
        transforms.validate();
    }
};

/// An Error tagged with the process exit code it maps to.
class CommandError : public Error {
public:
    CommandError(const Error& e, int exit_code, FitMeta context = FitMeta::object())
        : Error(e), exit_code_(exit_code), context_(std::move(context)) {}

    int exit_code() const { return exit_code_; }
    const FitMeta& context() const { return context_; }

    /// One-line JSON for stderr.
    std::string structured() const {
        nlohmann::ordered_json j;
        j["error"] = std::string(to_string(code()));
        j["message"] = what();
        j["exit_code"] = exit_code_;
        if (!context_.empty()) j["context"] = context_;
        return j.dump();
    }

private:
    int exit_code_;
    FitMeta context_;
};

inline constexpr int kExitInput = 2;
inline constexpr int kExitEstimator = 3;

/// Reads the optional JSON config: {"transforms": {...}, "penalty_factors": {...}}.
inline void apply_config_file(RunConfig& cfg) {
    if (!cfg.config_path) return;
    std::ifstream in(*cfg.config_path);
    if (!in) throw Error(ErrorCode::MissingFile, "cannot open config '" + cfg.config_path->string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, "config '" + cfg.config_path->string() + "': " + e.what());
    }
    try {
        if (j.contains("transforms")) {
            const auto& t = j.at("transforms");
            cfg.transforms.quantile_buckets = t.value("quantile_buckets", cfg.transforms.quantile_buckets);
            cfg.transforms.rare_level_min_prop = t.value("rare_level_min_prop", cfg.transforms.rare_level_min_prop);
            cfg.transforms.add_missing_indicators =
                t.value("add_missing_indicators", cfg.transforms.add_missing_indicators);
        }
        if (j.contains("penalty_factors"))
            for (const auto& [term, factor] : j.at("penalty_factors").items()) cfg.penalty_factors[term] = factor.get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, "config '" + cfg.config_path->string() + "': " + e.what());
    }
}

inline Sample load_csv(const std::filesystem::path& path, const std::string& id_col,
                       const std::optional<std::string>& weight_col = std::nullopt,
                       const std::vector<std::string>& outcome_cols = {}) {
    try {
        return build_sample(read_csv_file(path), id_col, weight_col, outcome_cols);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::MissingFile) throw;
        throw Error(e.code(), path.string() + ": " + e.detail());
    }
}

/// Loads both files and pairs them. The target keeps only the outcome
/// columns it actually has.
inline PairedSample load_pair(const RunConfig& cfg) {
    try {
        cfg.validate();
        Sample sample = load_csv(cfg.sample_path, cfg.id_col, cfg.weight_col, cfg.outcome_cols);
        Table target_table = read_csv_file(cfg.target_path);
        std::vector<std::string> target_outcomes;
        for (const auto& o : cfg.outcome_cols)
            if (target_table.has_column(o)) target_outcomes.push_back(o);
        std::optional<std::string> target_weight;
        if (cfg.weight_col && target_table.has_column(*cfg.weight_col)) target_weight = cfg.weight_col;
        Sample target;
        try {
            target = build_sample(target_table, cfg.id_col, target_weight, target_outcomes);
        } catch (const Error& e) {
            throw Error(e.code(), cfg.target_path.string() + ": " + e.detail());
        }
        return pair_with_target(std::move(sample), std::move(target));
    } catch (const Error& e) {
        throw CommandError(e, kExitInput);
    }
}

// ---------------------------------------------------------------------------
// Weights CSV

inline std::string write_weights_csv(const std::vector<std::string>& ids, const std::vector<double>& weights) {
    Table t;
    t.header = {"id", "weight"};
    for (std::size_t i = 0; i < ids.size(); ++i) t.rows.push_back({ids[i], format_double(weights[i])});
    return write_csv(t);
}

/// Reads an (id, weight) file and aligns it to the sample's id order.
inline std::vector<double> read_weights_csv(const std::filesystem::path& path, const Sample& sample) {
    Table t = read_csv_file(path);
    if (t.header.size() < 2) throw Error(ErrorCode::MalformedCsv, path.string() + ": expected columns id,weight");
    const std::size_t id_idx = t.has_column("id") ? t.column_index("id") : 0;
    const std::size_t w_idx = t.has_column("weight") ? t.column_index("weight") : 1;
    std::map<std::string, double> by_id;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const std::string& id = t.rows[r][id_idx];
        auto v = parse_decimal(t.rows[r][w_idx]);
        if (!v || !(*v > 0.0))
            throw Error(ErrorCode::NonPositiveWeight,
                        "weight '" + t.rows[r][w_idx] + "' for id '" + id + "' is not a positive number");
        if (!by_id.emplace(id, *v).second) throw Error(ErrorCode::DuplicateId, "id '" + id + "' appears twice in weights");
    }
    std::vector<std::string> missing;
    std::vector<double> out;
    out.reserve(sample.size());
    std::set<std::string> seen;
    for (const auto& id : sample.ids()) {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            missing.push_back(id);
            continue;
        }
        out.push_back(it->second);
        seen.insert(id);
    }
    std::vector<std::string> extra;
    for (const auto& [id, w] : by_id)
        if (!seen.count(id)) extra.push_back(id);
    if (!missing.empty() || !extra.empty()) {
        auto list = [](const std::vector<std::string>& ids) {
            std::string s;
            for (std::size_t i = 0; i < ids.size() && i < 20; ++i) s += (i ? ", " : "") + ids[i];
            if (ids.size() > 20) s += ", ... (" + std::to_string(ids.size()) + " total)";
            return s;
        };
        std::string msg = "weights do not match sample ids;";
        if (!missing.empty()) msg += " missing: " + list(missing) + ";";
        if (!extra.empty()) msg += " extra: " + list(extra) + ";";
        msg.pop_back();
        throw Error(ErrorCode::IdMismatch, msg);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Report assembly

namespace detail {

inline ReportDocument run_metadata(const RunConfig& cfg, std::string_view command) {
    ReportDocument j;
    j["tool"] = "rebalance";
    j["tool_version"] = kToolVersion;
    j["command"] = std::string(command);
    j["seed"] = cfg.seed;
    // Timestamps only when pinned, so reruns stay byte-identical.
    if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"))
        j["timestamp"] = std::string(epoch);
    else
        j["timestamp"] = nullptr;
    j["sample_path"] = cfg.sample_path.string();
    j["target_path"] = cfg.target_path.string();
    j["id_col"] = cfg.id_col;
    j["weight_col"] = cfg.weight_col ? ReportDocument(*cfg.weight_col) : ReportDocument(nullptr);
    return j;
}

inline ReportDocument plots_section(const PairedSample& pair, std::span<const double> weights,
                                    std::vector<std::string>& warnings) {
    ReportDocument plots = ReportDocument::array();
    for (const auto& name : pair.common_covariates) {
        try {
            plots.push_back(to_json(plot_data(pair, weights, name, PlotKind::Auto)));
        } catch (const Error& e) {
            warnings.push_back("plot for '" + name + "' skipped: " + e.detail());
        }
    }
    return plots;
}

/// Post-adjustment sections shared by adjust and report.
inline void add_evaluation(ReportDocument& doc, const RunConfig& cfg, const PairedSample& pair,
                           const std::vector<double>& weights, std::optional<double> deviance_explained,
                           std::vector<std::string>& warnings) {
    const CovariateMatrix cm = build_covariate_matrix(pair);
    const AsmdTable before = asmd(cm, pair, std::nullopt, true);
    const AsmdTable after = asmd(cm, pair, std::span<const double>(weights), true);
    const AsmdTable after_columns = asmd(cm, pair, std::span<const double>(weights), false);

    ReportDocument summary;
    summary["asmd_reduction_pct"] = asmd_reduction_pct(after);
    summary["mean_asmd_before"] = after.mean.unadjusted;
    summary["mean_asmd_after"] = after.mean.self;
    summary["deviance_explained"] = deviance_explained ? ReportDocument(*deviance_explained) : ReportDocument(nullptr);
    summary["design_effect"] = kish_deff(weights);
    doc["summary"] = summary;
    doc["asmd_before"] = to_json(before);
    doc["asmd_after"] = to_json(after);
    doc["asmd_after_by_column"] = to_json(after_columns);
    doc["weights_summary"] = to_json(weights_summary(weights));

    ReportDocument outcomes = ReportDocument::array();
    if (!pair.sample.outcomes().empty()) {
        OutcomeReport o = outcome_report(pair, weights, cfg.alpha);
        for (const auto& r : o.rows) outcomes.push_back(to_json(r));
        warnings.insert(warnings.end(), o.warnings.begin(), o.warnings.end());
    }
    doc["alpha"] = cfg.alpha;
    doc["outcomes"] = outcomes;
}

}  // namespace detail

/// Step 1: balance of the unadjusted sample against the target.
inline ReportDocument cmd_diagnose(const RunConfig& cfg) {
    const PairedSample pair = load_pair(cfg);
    std::vector<std::string> warnings;
    ReportDocument doc;
    doc["schema_version"] = kSchemaVersion;
    doc["run"] = detail::run_metadata(cfg, "diagnose");
    doc["input"] = input_summary(pair);
    const CovariateMatrix cm = build_covariate_matrix(pair);
    const AsmdTable aggregated = asmd(cm, pair, std::nullopt, true);
    const AsmdTable by_column = asmd(cm, pair, std::nullopt, false);
    doc["asmd_before"] = to_json(aggregated);
    doc["asmd_before_by_column"] = to_json(by_column);
    doc["weights_summary"] = to_json(weights_summary(pair.sample.design_weights()));
    ReportDocument outcomes = ReportDocument::array();
    if (!pair.sample.outcomes().empty()) {
        OutcomeReport o = outcome_report(pair, pair.sample.design_weights(), cfg.alpha);
        for (const auto& r : o.rows) outcomes.push_back(to_json(r));
        warnings.insert(warnings.end(), o.warnings.begin(), o.warnings.end());
    }
    doc["alpha"] = cfg.alpha;
    doc["outcomes"] = outcomes;
    if (cfg.plots) doc["plots"] = detail::plots_section(pair, pair.sample.design_weights(), warnings);
    warnings.insert(warnings.end(), aggregated.warnings.begin(), aggregated.warnings.end());
    doc["warnings"] = warnings;
    return doc;
}

struct AdjustOutput {
    WeightResult result;
    std::vector<std::string> ids;
    ReportDocument report;
};

inline WeightResult run_estimator(const RunConfig& cfg, const PairedSample& pair) {
    switch (cfg.method) {
        case Method::Poststratify: {
            TransformedPair tp = apply_transforms(pair, cfg.transforms);
            WeightResult r = poststratify(tp.pair, cfg.strata);
            r.fit_meta["transform_warnings"] = tp.transform.warnings;
            return r;
        }
        case Method::Rake: {
            TransformedPair tp = apply_transforms(pair, cfg.transforms);
            WeightResult r = rake(tp.pair, cfg.margins);
            r.fit_meta["transform_warnings"] = tp.transform.warnings;
            return r;
        }
        case Method::Ipw: {
            IpwConfig ic;
            ic.max_de = cfg.max_de;
            ic.formula = cfg.formula;
            ic.penalty_factors = cfg.penalty_factors;
            ic.cv_folds = cfg.folds;
            ic.seed = cfg.seed;
            ic.trim_ratio_cap = cfg.trim_cap;
            ic.transforms = cfg.transforms;
            return ipw(pair, ic);
        }
        case Method::Cbps: {
            CbpsConfig cc;
            cc.formula = cfg.formula;
            cc.seed = cfg.seed;
            cc.cv_folds = cfg.folds;
            cc.trim_ratio_cap = cfg.trim_cap;
            cc.transforms = cfg.transforms;
            return cbps(pair, cc);
        }
    }
    throw Error(ErrorCode::InvalidArgument, "unknown method");
}

/// Step 2: fit weights with the configured method and evaluate them.
inline AdjustOutput cmd_adjust(const RunConfig& cfg) {
    const PairedSample pair = load_pair(cfg);
    AdjustOutput out;
    try {
        out.result = run_estimator(cfg, pair);
    } catch (const Error& e) {
        FitMeta context;
        context["method"] = std::string(to_string(cfg.method));
        context["seed"] = cfg.seed;
        if (cfg.max_de) context["max_de"] = *cfg.max_de;
        if (cfg.formula) context["formula"] = *cfg.formula;
        throw CommandError(e, kExitEstimator, context);
    }
    out.ids = pair.sample.ids();

    std::vector<std::string> warnings;
    const auto& w = out.result.weights.values;
    std::optional<double> dev;
    if (out.result.fit_meta.contains("deviance_explained"))
        dev = out.result.fit_meta["deviance_explained"].get<double>();

    ReportDocument& doc = out.report;
    doc["schema_version"] = kSchemaVersion;
    doc["run"] = detail::run_metadata(cfg, "adjust");
    doc["run"]["method"] = std::string(to_string(cfg.method));
    doc["input"] = input_summary(pair);
    detail::add_evaluation(doc, cfg, pair, w, dev, warnings);
    doc["fit_meta"] = out.result.fit_meta;
    if (cfg.plots) doc["plots"] = detail::plots_section(pair, w, warnings);
    doc["warnings"] = warnings;
    return out;
}

/// Step 3: evaluate externally supplied weights.
inline ReportDocument cmd_report(const RunConfig& cfg) {
    if (!cfg.weights_path)
        throw CommandError(Error(ErrorCode::InvalidArgument, "report needs --weights"), kExitInput);
    const PairedSample pair = load_pair(cfg);
    std::vector<double> w;
    try {
        w = read_weights_csv(*cfg.weights_path, pair.sample);
    } catch (const Error& e) {
        throw CommandError(e, kExitInput);
    }
    std::vector<std::string> warnings;
    ReportDocument doc;
    doc["schema_version"] = kSchemaVersion;
    doc["run"] = detail::run_metadata(cfg, "report");
    doc["run"]["weights_path"] = cfg.weights_path->string();
    doc["input"] = input_summary(pair);
    detail::add_evaluation(doc, cfg, pair, w, std::nullopt, warnings);
    if (cfg.plots) doc["plots"] = detail::plots_section(pair, w, warnings);
    doc["warnings"] = warnings;
    return doc;
}

/// Writes report.json (and weights.csv for adjust) into cfg.out_dir.
inline void write_outputs(const RunConfig& cfg, const ReportDocument& report,
                          const AdjustOutput* adjust = nullptr) {
    try {
        std::filesystem::create_directories(cfg.out_dir);
        if (adjust) {
            std::ofstream f(cfg.out_dir / "weights.csv", std::ios::binary);
            if (!f) throw Error(ErrorCode::Io, "cannot write '" + (cfg.out_dir / "weights.csv").string() + "'");
            f << write_weights_csv(adjust->ids, adjust->result.weights.values);
        }
        export_report(report, cfg.out_dir / "report.json");
    } catch (const std::filesystem::filesystem_error& e) {
        throw CommandError(Error(ErrorCode::Io, e.what()), kExitInput);
    } catch (const Error& e) {
        throw CommandError(e, kExitInput);
    }
}

}  // namespace rebalance
