#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rebalance/csv.hpp"
#include "rebalance/error.hpp"

namespace rebalance {

enum class ColumnKind { Numeric, Categorical, Id, Weight, Outcome };

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

/// Empty string, "NA" and "NaN" (any case) are missing markers.
inline bool is_missing_marker(std::string_view cell) {
    auto lower_eq = [&](std::string_view word) {
        if (cell.size() != word.size()) return false;
        for (std::size_t i = 0; i < cell.size(); ++i) {
            char c = cell[i];
            if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
            if (c != word[i]) return false;
        }
        return true;
    };
    return cell.empty() || lower_eq("na") || lower_eq("nan");
}

/// Parses a finite decimal number, tolerating surrounding spaces.
inline std::optional<double> parse_decimal(std::string_view cell) {
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t')) cell.remove_suffix(1);
    if (cell.empty()) return std::nullopt;
    if (cell.front() == '+') cell.remove_prefix(1);
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
    if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(value))
        return std::nullopt;
    return value;
}

/// A typed data column. Numeric cells use NaN for missing; categorical cells
/// are codes into a sorted level list with -1 for missing.
struct Column {
    std::string name;
    ColumnKind kind = ColumnKind::Numeric;
    std::vector<double> numeric;
    std::vector<std::string> levels;
    std::vector<int> codes;

    static Column make_numeric(std::string name, std::vector<double> values) {
        Column c;
        c.name = std::move(name);
        c.kind = ColumnKind::Numeric;
        c.numeric = std::move(values);
        return c;
    }

    static Column make_categorical(std::string name, const std::vector<std::optional<std::string>>& cells) {
        Column c;
        c.name = std::move(name);
        c.kind = ColumnKind::Categorical;
        for (const auto& cell : cells)
            if (cell) c.levels.push_back(*cell);
        std::sort(c.levels.begin(), c.levels.end());
        c.levels.erase(std::unique(c.levels.begin(), c.levels.end()), c.levels.end());
        c.codes.reserve(cells.size());
        for (const auto& cell : cells) c.codes.push_back(cell ? c.level_code(*cell) : -1);
        return c;
    }

    bool is_numeric() const { return kind == ColumnKind::Numeric; }
    std::size_t size() const { return is_numeric() ? numeric.size() : codes.size(); }
    bool is_missing(std::size_t i) const { return is_numeric() ? std::isnan(numeric[i]) : codes[i] < 0; }

    bool has_missing() const {
        for (std::size_t i = 0; i < size(); ++i)
            if (is_missing(i)) return true;
        return false;
    }

    int level_code(std::string_view level) const {
        auto it = std::lower_bound(levels.begin(), levels.end(), level);
        if (it == levels.end() || *it != level) return -1;
        return static_cast<int>(it - levels.begin());
    }

    std::optional<std::string> categorical_value(std::size_t i) const {
        if (codes[i] < 0) return std::nullopt;
        return levels[static_cast<std::size_t>(codes[i])];
    }
};

/// A sample or target population: ids, design weights, covariates, outcomes.
/// Immutable after construction.
class Sample {
public:
    static Sample from_columns(std::string id_name, std::vector<std::string> ids,
                               std::optional<std::string> weight_name, std::vector<double> design_weights,
                               std::vector<Column> covariates, std::vector<Column> outcomes = {}) {
        Sample s;
        s.id_name_ = std::move(id_name);
        s.ids_ = std::move(ids);
        s.weight_name_ = std::move(weight_name);
        s.design_weights_ = std::move(design_weights);
        s.covariates_ = std::move(covariates);
        s.outcomes_ = std::move(outcomes);
        if (s.design_weights_.empty()) s.design_weights_.assign(s.ids_.size(), 1.0);
        s.validate();
        return s;
    }

    Sample with_covariates(std::vector<Column> covariates) const {
        Sample s = *this;
        s.covariates_ = std::move(covariates);
        s.validate();
        return s;
    }

    std::size_t size() const { return ids_.size(); }
    const std::string& id_name() const { return id_name_; }
    const std::vector<std::string>& ids() const { return ids_; }
    const std::optional<std::string>& weight_name() const { return weight_name_; }
    const std::vector<double>& design_weights() const { return design_weights_; }
    const std::vector<Column>& covariates() const { return covariates_; }
    const std::vector<Column>& outcomes() const { return outcomes_; }

    double design_weight_total() const {
        double total = 0.0;
        for (double d : design_weights_) total += d;
        return total;
    }

    const Column* find_covariate(std::string_view name) const {
        for (const auto& c : covariates_)
            if (c.name == name) return &c;
        return nullptr;
    }

    const Column& covariate(std::string_view name) const {
        if (const Column* c = find_covariate(name)) return *c;
        throw Error(ErrorCode::UnknownColumn, "no covariate named '" + std::string(name) + "'");
    }

    const Column* find_outcome(std::string_view name) const {
        for (const auto& c : outcomes_)
            if (c.name == name) return &c;
        return nullptr;
    }

    std::optional<ColumnKind> kind_of(std::string_view name) const {
        if (name == id_name_) return ColumnKind::Id;
        if (weight_name_ && name == *weight_name_) return ColumnKind::Weight;
        if (find_outcome(name)) return ColumnKind::Outcome;
        if (const Column* c = find_covariate(name)) return c->kind;
        return std::nullopt;
    }

    std::vector<std::string> covariate_names() const {
        std::vector<std::string> names;
        for (const auto& c : covariates_) names.push_back(c.name);
        return names;
    }

private:
    void validate() const {
        if (ids_.empty()) throw Error(ErrorCode::EmptyTable, "sample has no rows");
        std::unordered_set<std::string> seen;
        for (const auto& id : ids_)
            if (!seen.insert(id).second) throw Error(ErrorCode::DuplicateId, "duplicate id '" + id + "'");
        if (design_weights_.size() != ids_.size())
            throw Error(ErrorCode::DimensionMismatch, "design weights do not match row count");
        for (std::size_t i = 0; i < design_weights_.size(); ++i)
            if (!(design_weights_[i] > 0.0) || !std::isfinite(design_weights_[i]))
                throw Error(ErrorCode::NonPositiveWeight, "design weight of id '" + ids_[i] + "' is not positive and finite");
        std::unordered_set<std::string> names{id_name_};
        if (weight_name_ && !names.insert(*weight_name_).second)
            throw Error(ErrorCode::InvalidArgument, "weight column duplicates id column");
        for (const auto* group : {&covariates_, &outcomes_})
            for (const auto& c : *group) {
                if (c.size() != ids_.size())
                    throw Error(ErrorCode::DimensionMismatch, "column '" + c.name + "' has wrong length");
                if (!names.insert(c.name).second)
                    throw Error(ErrorCode::InvalidArgument, "column name '" + c.name + "' used twice");
            }
    }

    std::string id_name_;
    std::vector<std::string> ids_;
    std::optional<std::string> weight_name_;
    std::vector<double> design_weights_;
    std::vector<Column> covariates_;
    std::vector<Column> outcomes_;
};

namespace detail {

inline Column type_column(const std::string& name, const std::vector<const std::string*>& cells) {
    bool numeric = true;
    std::vector<double> values(cells.size(), kMissing);
    for (std::size_t i = 0; i < cells.size() && numeric; ++i) {
        if (is_missing_marker(*cells[i])) continue;
        if (auto v = parse_decimal(*cells[i]))
            values[i] = *v;
        else
            numeric = false;
    }
    if (numeric) return Column::make_numeric(name, std::move(values));
    std::vector<std::optional<std::string>> levels(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i)
        if (!is_missing_marker(*cells[i])) levels[i] = *cells[i];
    return Column::make_categorical(name, levels);
}

}  // namespace detail

/// Builds a Sample from a parsed table. Columns other than id, weight and
/// outcomes become covariates; a column is Numeric iff every non-missing cell
/// parses as a finite decimal.
inline Sample build_sample(const Table& table, const std::string& id_col,
                           const std::optional<std::string>& weight_col = std::nullopt,
                           const std::vector<std::string>& outcome_cols = {}) {
    if (table.rows.empty()) throw Error(ErrorCode::EmptyTable, "table has a header but no rows");
    std::size_t id_idx = table.column_index(id_col);
    std::optional<std::size_t> weight_idx;
    if (weight_col) weight_idx = table.column_index(*weight_col);
    std::vector<std::size_t> outcome_idx;
    for (const auto& o : outcome_cols) outcome_idx.push_back(table.column_index(o));

    const std::size_t n = table.rows.size();
    std::vector<std::string> ids;
    ids.reserve(n);
    for (const auto& row : table.rows) ids.push_back(row[id_idx]);

    std::vector<double> weights(n, 1.0);
    if (weight_idx) {
        for (std::size_t i = 0; i < n; ++i) {
            const std::string& cell = table.rows[i][*weight_idx];
            if (is_missing_marker(cell)) continue;
            auto v = parse_decimal(cell);
            if (!v || !(*v > 0.0))
                throw Error(ErrorCode::NonPositiveWeight,
                            "design weight '" + cell + "' for id '" + ids[i] + "' is not a positive number");
            weights[i] = *v;
        }
    }

    auto column_cells = [&](std::size_t j) {
        std::vector<const std::string*> cells;
        cells.reserve(n);
        for (const auto& row : table.rows) cells.push_back(&row[j]);
        return cells;
    };

    std::vector<Column> covariates, outcomes;
    for (std::size_t k = 0; k < outcome_idx.size(); ++k)
        outcomes.push_back(detail::type_column(table.header[outcome_idx[k]], column_cells(outcome_idx[k])));
    for (std::size_t j = 0; j < table.header.size(); ++j) {
        if (j == id_idx || (weight_idx && j == *weight_idx)) continue;
        if (std::find(outcome_idx.begin(), outcome_idx.end(), j) != outcome_idx.end()) continue;
        covariates.push_back(detail::type_column(table.header[j], column_cells(j)));
    }
    return Sample::from_columns(id_col, std::move(ids), weight_col, std::move(weights), std::move(covariates),
                                std::move(outcomes));
}

/// A sample bound to its target population over their shared covariates.
struct PairedSample {
    Sample sample;
    Sample target;
    std::vector<std::string> common_covariates;

    std::size_t n() const { return sample.size(); }
    std::size_t N() const { return target.size(); }
    double population_size() const { return target.design_weight_total(); }
};

/// Intersects covariate names (sample order) and checks kinds agree.
inline PairedSample pair_with_target(Sample sample, Sample target) {
    std::vector<std::string> common;
    for (const auto& c : sample.covariates()) {
        const Column* t = target.find_covariate(c.name);
        if (!t) continue;
        if (t->kind != c.kind)
            throw Error(ErrorCode::KindMismatch, "covariate '" + c.name + "' is " +
                                                     (c.is_numeric() ? "numeric" : "categorical") +
                                                     " in the sample but not in the target");
        common.push_back(c.name);
    }
    if (common.empty()) throw Error(ErrorCode::NoCommonCovariates, "sample and target share no covariates");
    return PairedSample{std::move(sample), std::move(target), std::move(common)};
}

enum class WeightScale { PopulationSum, SampleSum, Raw };

inline std::string_view to_string(WeightScale s) {
    switch (s) {
        case WeightScale::PopulationSum: return "population_sum";
        case WeightScale::SampleSum: return "sample_sum";
        case WeightScale::Raw: return "raw";
    }
    return "raw";
}

/// Per-sample-unit weights aligned with the sample's id order.
struct WeightVector {
    std::vector<double> values;
    WeightScale scale = WeightScale::Raw;

    std::size_t size() const { return values.size(); }
    double sum() const {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }
    double mean() const { return sum() / static_cast<double>(values.size()); }
};

inline void validate_weights(std::span<const double> w) {
    if (w.empty()) throw Error(ErrorCode::InvalidArgument, "empty weight vector");
    bool any_positive = false;
    for (double v : w) {
        if (!std::isfinite(v) || v < 0.0)
            throw Error(ErrorCode::InvalidArgument, "weights must be finite and non-negative");
        any_positive = any_positive || v > 0.0;
    }
    if (!any_positive) throw Error(ErrorCode::AllZeroWeights, "all weights are zero");
}

/// Rescales by one positive constant so the requested scale invariant holds.
inline WeightVector normalize_weights(const WeightVector& w, WeightScale target_scale, const PairedSample& reference) {
    if (w.size() != reference.n())
        throw Error(ErrorCode::DimensionMismatch, "weights are not aligned to the sample");
    validate_weights(w.values);
    WeightVector out{w.values, target_scale};
    double total = w.sum();
    double desired = total;
    switch (target_scale) {
        case WeightScale::PopulationSum: desired = reference.population_size(); break;
        case WeightScale::SampleSum: desired = static_cast<double>(w.size()); break;
        case WeightScale::Raw: return out;
    }
    const double factor = desired / total;
    for (double& v : out.values) v *= factor;
    return out;
}

}  // namespace rebalance
