#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dcformer/common.hpp"

namespace dcformer {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw ContractError("csv: no column named '" + name + "'");
    }
    bool has_column(const std::string& name) const {
        for (const auto& h : header)
            if (h == name) return true;
        return false;
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            out.push_back(field);
            field.clear();
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    out.push_back(field);
    return out;
}

inline double csv_double(const std::string& s, std::size_t lineno) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ContractError("csv parse error at line " + std::to_string(lineno) +
                            ": not a number: '" + s + "'");
    return v;
}

// Plain CSV with a mandatory header row.
inline CsvTable read_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open csv file: " + path);
    CsvTable table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv_line(line);
        if (table.header.empty()) {
            table.header = fields;
            continue;
        }
        if (fields.size() != table.header.size())
            throw ContractError("csv parse error at line " + std::to_string(lineno) + " of " +
                                path + ": expected " + std::to_string(table.header.size()) +
                                " fields, got " + std::to_string(fields.size()));
        table.rows.push_back(fields);
    }
    if (table.header.empty()) throw ContractError("csv file is empty: " + path);
    return table;
}

// Block-structured CSV: sections introduced by "# <name>" lines, each with
// its own header row.
struct CsvBlocks {
    std::vector<std::string> order;
    std::map<std::string, CsvTable> blocks;

    const CsvTable& at(const std::string& name) const {
        auto it = blocks.find(name);
        if (it == blocks.end()) throw ContractError("report: missing block '" + name + "'");
        return it->second;
    }
    bool has(const std::string& name) const { return blocks.count(name) > 0; }
};

inline CsvBlocks read_csv_blocks(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open file: " + path);
    CsvBlocks out;
    std::string line, current;
    std::size_t lineno = 0;
    bool saw_header = false;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        if (line[0] == '#') {
            current = line.substr(1);
            const auto b = current.find_first_not_of(' ');
            current = b == std::string::npos ? "" : current.substr(b);
            if (!current.empty() && !out.blocks.count(current)) {
                out.order.push_back(current);
                out.blocks[current] = CsvTable{};
            }
            saw_header = false;
            continue;
        }
        if (current.empty())
            throw ContractError("parse error at line " + std::to_string(lineno) + " of " + path +
                                ": data before the first block header");
        CsvTable& table = out.blocks[current];
        const auto fields = split_csv_line(line);
        if (!saw_header) {
            table.header = fields;
            saw_header = true;
            continue;
        }
        if (fields.size() != table.header.size())
            throw ContractError("parse error at line " + std::to_string(lineno) + " of " + path +
                                ": expected " + std::to_string(table.header.size()) +
                                " fields, got " + std::to_string(fields.size()));
        table.rows.push_back(fields);
    }
    if (out.order.empty()) throw ContractError("no blocks found in " + path);
    return out;
}

}  // namespace dcformer
