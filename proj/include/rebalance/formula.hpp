#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "rebalance/error.hpp"

namespace rebalance {

/// One model term: a main effect (one name) or an interaction (several).
struct Term {
    std::vector<std::string> names;

    bool is_interaction() const { return names.size() > 1; }

    std::string label() const {
        std::string out;
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (i) out.push_back(':');
            out += names[i];
        }
        return out;
    }

    /// Interactions are unordered: a:b and b:a are the same term.
    bool same_as(const Term& other) const {
        if (names.size() != other.names.size()) return false;
        auto a = names, b = other.names;
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        return a == b;
    }

    bool operator==(const Term& other) const { return names == other.names; }
};

struct FormulaAST {
    std::vector<Term> terms;

    std::vector<std::string> labels() const {
        std::vector<std::string> out;
        for (const auto& t : terms) out.push_back(t.label());
        return out;
    }
};

namespace detail {

inline void add_unique(std::vector<Term>& terms, const Term& term) {
    for (const auto& t : terms)
        if (t.same_as(term)) return;
    terms.push_back(term);
}

inline std::vector<Term> merge(std::vector<Term> lhs, const std::vector<Term>& rhs) {
    for (const auto& t : rhs) add_unique(lhs, t);
    return lhs;
}

inline std::vector<Term> interact(const std::vector<Term>& lhs, const std::vector<Term>& rhs) {
    std::vector<Term> out;
    for (const auto& a : lhs)
        for (const auto& b : rhs) {
            Term t = a;
            for (const auto& name : b.names)
                if (std::find(t.names.begin(), t.names.end(), name) == t.names.end()) t.names.push_back(name);
            add_unique(out, t);
        }
    return out;
}

/// Recursive-descent parser for  expr := product ('+' product)*,
/// product := atom ((':' | '*') atom)*,  atom := NAME | '(' expr ')'.
class FormulaParser {
public:
    FormulaParser(std::string_view text, const std::vector<std::string>& known) : text_(text), known_(known) {}

    std::vector<Term> parse() {
        auto terms = expr();
        skip_space();
        if (pos_ != text_.size()) fail("unexpected '" + std::string(1, text_[pos_]) + "'");
        return terms;
    }

private:
    std::vector<Term> expr() {
        auto terms = product();
        for (;;) {
            skip_space();
            if (!consume('+')) return terms;
            terms = merge(std::move(terms), product());
        }
    }

    std::vector<Term> product() {
        auto terms = atom();
        for (;;) {
            skip_space();
            if (consume(':')) {
                terms = interact(terms, atom());
            } else if (consume('*')) {
                auto rhs = atom();
                terms = merge(merge(terms, rhs), interact(terms, rhs));
            } else {
                return terms;
            }
        }
    }

    std::vector<Term> atom() {
        skip_space();
        if (consume('(')) {
            auto terms = expr();
            skip_space();
            if (!consume(')')) fail("expected ')'");
            return terms;
        }
        std::size_t start = pos_;
        while (pos_ < text_.size() && is_name_char(text_[pos_])) ++pos_;
        if (start == pos_) fail(pos_ < text_.size() ? "expected a name" : "unexpected end of formula");
        std::string name(text_.substr(start, pos_ - start));
        if (std::find(known_.begin(), known_.end(), name) == known_.end())
            throw Error(ErrorCode::UnknownCovariate, "formula references unknown covariate '" + name + "' at position " +
                                                         std::to_string(start));
        return {Term{{name}}};
    }

    static bool is_name_char(char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
    }

    void skip_space() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    bool consume(char c) {
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw Error(ErrorCode::FormulaSyntax, what + " at position " + std::to_string(pos_));
    }

    std::string_view text_;
    const std::vector<std::string>& known_;
    std::size_t pos_ = 0;
};

}  // namespace detail

/// Parses a formula over the given covariate names. Supports +, : and *
/// with parentheses; a*b expands to a + b + a:b. Terms are deduplicated.
inline FormulaAST parse_formula(std::string_view text, const std::vector<std::string>& covariates) {
    std::size_t first = text.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) throw Error(ErrorCode::FormulaSyntax, "empty formula at position 0");
    return FormulaAST{detail::FormulaParser(text, covariates).parse()};
}

/// Additive model over every covariate.
inline FormulaAST default_formula(const std::vector<std::string>& covariates) {
    FormulaAST ast;
    for (const auto& c : covariates) ast.terms.push_back(Term{{c}});
    return ast;
}

}  // namespace rebalance
