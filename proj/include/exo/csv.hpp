#pragma once

// Small CSV helpers shared by every file writer. Numbers are printed with
// %.17g so that files round-trip exactly and are byte-stable across runs.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace exo::csv {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Shorter rendering for human-facing tables.
inline std::string num6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Provenance line written as the first row of every emitted file.
inline std::string header_line(const std::string& config_hash, std::uint64_t seed) {
    return "# config_hash=" + config_hash + " seed=" + std::to_string(seed);
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline double to_double(const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw std::runtime_error("csv: not a number: '" + s + "'");
    }
    if (used != s.size()) throw std::runtime_error("csv: trailing characters in number: '" + s + "'");
    return v;
}

/// Rows of a CSV file with comment lines ('#') and blank lines removed.
struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return static_cast<int>(i);
        throw std::runtime_error("csv: missing column '" + name + "'");
    }

    bool has_column(const std::string& name) const {
        for (const auto& c : columns)
            if (c == name) return true;
        return false;
    }

    double value(std::size_t row, const std::string& name) const {
        return to_double(rows.at(row).at(static_cast<std::size_t>(column(name))));
    }
};

inline std::vector<std::vector<std::string>> read_rows(std::istream& is) {
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#' || line == "\r") continue;
        rows.push_back(split(line));
    }
    return rows;
}

inline Table read_table(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    auto rows = read_rows(is);
    if (rows.empty()) throw std::runtime_error(path + ": no header row");
    Table t;
    t.columns = rows.front();
    t.rows.assign(rows.begin() + 1, rows.end());
    return t;
}

template <typename Range>
std::string join(const Range& items, char sep = ',') {
    std::string out;
    bool first = true;
    for (const auto& it : items) {
        if (!first) out.push_back(sep);
        first = false;
        if constexpr (std::is_convertible_v<decltype(it), std::string>)
            out += it;
        else
            out += num(static_cast<double>(it));
    }
    return out;
}

}  // namespace exo::csv
