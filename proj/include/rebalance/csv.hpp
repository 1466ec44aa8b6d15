#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rebalance/error.hpp"

namespace rebalance {

/// Parsed tabular data: a header row plus string cells, one vector per record.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column_index(std::string_view name) const {
        for (std::size_t j = 0; j < header.size(); ++j)
            if (header[j] == name) return j;
        throw Error(ErrorCode::UnknownColumn, "no column named '" + std::string(name) + "'");
    }

    bool has_column(std::string_view name) const {
        for (const auto& h : header)
            if (h == name) return true;
        return false;
    }
};

/// RFC 4180 reader: comma separated, double-quote quoting with "" escapes,
/// quoted fields may span lines. CRLF and LF line endings are both accepted.
inline Table parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::size_t> record_lines;
    std::vector<std::string> record;
    std::string cell;
    bool in_quotes = false;
    bool cell_was_quoted = false;
    bool record_has_content = false;
    std::size_t line = 1;
    std::size_t record_start_line = 1;

    auto end_cell = [&] {
        record.push_back(std::move(cell));
        cell.clear();
        cell_was_quoted = false;
    };
    auto end_record = [&] {
        end_cell();
        // A blank line is not a record.
        if (!(record.size() == 1 && record[0].empty() && !record_has_content)) {
            records.push_back(std::move(record));
            record_lines.push_back(record_start_line);
        }
        record.clear();
        record_has_content = false;
    };

    std::size_t i = 0;
    if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") i = 3;
    for (; i < text.size(); ++i) {
        char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    cell.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++line;
                cell.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"':
                if (!cell.empty() || cell_was_quoted)
                    throw Error(ErrorCode::MalformedCsv,
                                "unexpected quote inside unquoted field at line " + std::to_string(line));
                in_quotes = true;
                cell_was_quoted = true;
                record_has_content = true;
                break;
            case ',':
                record_has_content = true;
                end_cell();
                break;
            case '\r':
                if (i + 1 < text.size() && text[i + 1] == '\n') break;
                [[fallthrough]];
            case '\n':
                end_record();
                ++line;
                record_start_line = line;
                break;
            default:
                if (cell_was_quoted)
                    throw Error(ErrorCode::MalformedCsv,
                                "text after closing quote at line " + std::to_string(line));
                cell.push_back(c);
                record_has_content = true;
        }
    }
    if (in_quotes)
        throw Error(ErrorCode::MalformedCsv, "unterminated quoted field starting at line " +
                                                 std::to_string(record_start_line));
    if (!cell.empty() || !record.empty() || record_has_content) end_record();

    if (records.empty()) throw Error(ErrorCode::EmptyTable, "no header row");
    Table table;
    table.header = std::move(records.front());
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != table.header.size())
            throw Error(ErrorCode::MalformedCsv,
                        "line " + std::to_string(record_lines[r]) + ": expected " +
                            std::to_string(table.header.size()) + " fields, found " +
                            std::to_string(records[r].size()));
        table.rows.push_back(std::move(records[r]));
    }
    return table;
}

inline Table read_csv_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingFile, "cannot open '" + path.string() + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_csv(buffer.str());
}

inline std::string csv_escape(std::string_view field) {
    bool needs_quotes = field.find_first_of(",\"\r\n") != std::string_view::npos;
    if (!needs_quotes) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline std::string write_csv(const Table& table) {
    std::string out;
    auto emit = [&](const std::vector<std::string>& row) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (j) out.push_back(',');
            out += csv_escape(row[j]);
        }
        out.push_back('\n');
    };
    emit(table.header);
    for (const auto& row : table.rows) emit(row);
    return out;
}

}  // namespace rebalance
