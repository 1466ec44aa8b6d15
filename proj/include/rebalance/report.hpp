#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rebalance/diagnostics.hpp"
#include "rebalance/error.hpp"
#include "rebalance/sample.hpp"

namespace rebalance {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

/// Report documents are insertion-ordered JSON objects.
using ReportDocument = nlohmann::ordered_json;

/// 17 significant digits, enough to round-trip every finite double.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

inline void emit_string(std::string& out, const std::string& s) {
    out += nlohmann::ordered_json(s).dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::replace);
}

inline void emit(std::string& out, const ReportDocument& j, int indent) {
    const std::string pad(static_cast<std::size_t>(indent + 2), ' ');
    const std::string close_pad(static_cast<std::size_t>(indent), ' ');
    switch (j.type()) {
        case nlohmann::json::value_t::object: {
            if (j.empty()) {
                out += "{}";
                return;
            }
            out += "{\n";
            bool first = true;
            for (auto it = j.begin(); it != j.end(); ++it) {
                if (!first) out += ",\n";
                first = false;
                out += pad;
                emit_string(out, it.key());
                out += ": ";
                emit(out, it.value(), indent + 2);
            }
            out += "\n" + close_pad + "}";
            return;
        }
        case nlohmann::json::value_t::array: {
            if (j.empty()) {
                out += "[]";
                return;
            }
            // Arrays of scalars stay on one line.
            bool scalar = true;
            for (const auto& v : j) scalar = scalar && !v.is_structured();
            if (scalar) {
                out += "[";
                for (std::size_t i = 0; i < j.size(); ++i) {
                    if (i) out += ", ";
                    emit(out, j[i], indent);
                }
                out += "]";
                return;
            }
            out += "[\n";
            for (std::size_t i = 0; i < j.size(); ++i) {
                if (i) out += ",\n";
                out += pad;
                emit(out, j[i], indent + 2);
            }
            out += "\n" + close_pad + "]";
            return;
        }
        case nlohmann::json::value_t::number_float: {
            double v = j.get<double>();
            out += std::isfinite(v) ? format_double(v) : "null";
            return;
        }
        case nlohmann::json::value_t::string: emit_string(out, j.get<std::string>()); return;
        default: out += j.dump(); return;
    }
}

}  // namespace detail

/// Canonical text: two-space indent, insertion key order, doubles with 17
/// significant digits, NaN and infinities as null.
inline std::string serialize_report(const ReportDocument& doc) {
    std::string out;
    detail::emit(out, doc, 0);
    out += "\n";
    return out;
}

inline void export_report(const ReportDocument& doc, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
    f << serialize_report(doc);
    if (!f) throw Error(ErrorCode::Io, "failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Section builders

inline ReportDocument to_json(const AsmdRow& r) {
    return {{"name", r.name}, {"self", r.self}, {"unadjusted", r.unadjusted}, {"diff", r.diff}};
}

inline ReportDocument to_json(const AsmdTable& t) {
    ReportDocument rows = ReportDocument::array();
    for (const auto& r : t.rows) rows.push_back(to_json(r));
    ReportDocument j;
    j["aggregated"] = t.aggregated;
    j["adjusted"] = t.adjusted;
    j["rows"] = rows;
    j["mean"] = to_json(t.mean);
    j["warnings"] = t.warnings;
    return j;
}

inline ReportDocument to_json(const WeightSummary& s) {
    ReportDocument j;
    j["design_effect"] = s.design_effect;
    j["effective_sample_proportion"] = s.effective_sample_proportion;
    j["effective_sample_size"] = s.effective_sample_size;
    j["describe"] = {{"min", s.min}, {"q25", s.q25},   {"median", s.median}, {"q75", s.q75},
                     {"max", s.max}, {"mean", s.mean}, {"std", s.std}};
    j["prop"] = {{"w<0.5", s.prop_below_half},
                 {"w<1", s.prop_below_one},
                 {"w>=2", s.prop_at_least_two},
                 {"w>=10", s.prop_at_least_ten}};
    return j;
}

inline ReportDocument to_json(const Estimate& e) {
    return {{"mean", e.mean}, {"variance", e.variance}, {"ci_lower", e.ci_lower}, {"ci_upper", e.ci_upper}};
}

inline ReportDocument to_json(const OutcomeRow& r) {
    ReportDocument j;
    j["name"] = r.name;
    j["self"] = to_json(r.self);
    j["target"] = r.target ? to_json(*r.target) : ReportDocument(nullptr);
    j["unadjusted"] = to_json(r.unadjusted);
    return j;
}

inline ReportDocument to_json(const PlotSeries& p) {
    ReportDocument sources = ReportDocument::array();
    for (const auto& s : p.sources) {
        ReportDocument j;
        j["source"] = s.source;
        if (p.kind == PlotKind::Bar) {
            j["levels"] = s.levels;
            j["proportions"] = s.proportions;
        } else {
            j["bandwidth"] = s.bandwidth;
            j["x"] = s.grid_x;
            j["density"] = s.density;
        }
        sources.push_back(std::move(j));
    }
    return {{"variable", p.variable}, {"kind", std::string(to_string(p.kind))}, {"sources", sources}};
}

inline ReportDocument input_summary(const PairedSample& pair) {
    ReportDocument j;
    j["n"] = pair.n();
    j["N"] = pair.N();
    j["sample_design_weight_total"] = pair.sample.design_weight_total();
    j["target_design_weight_total"] = pair.population_size();
    j["common_covariates"] = pair.common_covariates;
    std::vector<std::string> outcomes;
    for (const auto& o : pair.sample.outcomes()) outcomes.push_back(o.name);
    j["outcomes"] = outcomes;
    return j;
}

}  // namespace rebalance
