#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "embp/errors.hpp"

namespace embp {

// Flat key=value configuration text: one `key = value` pair per line,
// '#' starts a comment. CLI flags override file values.
struct KvConfig {
    std::map<std::string, std::string> values;

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    static KvConfig from_string(const std::string& text) {
        KvConfig cfg;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string t = trim(line);
            if (t.empty()) continue;
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                throw InvalidParameter("config line " + std::to_string(lineno) +
                                       ": expected key = value");
            const std::string key = trim(t.substr(0, eq));
            const std::string value = trim(t.substr(eq + 1));
            if (key.empty()) throw InvalidParameter("config line " + std::to_string(lineno) +
                                                    ": empty key");
            cfg.values[key] = value;
        }
        return cfg;
    }

    static KvConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw InvalidParameter("cannot open config file: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return from_string(buf.str());
    }

    bool has(const std::string& key) const { return values.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values[key] = value; }

    std::string get(const std::string& key, const std::string& fallback) const {
        const auto it = values.find(key);
        return it == values.end() ? fallback : it->second;
    }
    double get_double(const std::string& key, double fallback) const {
        const auto it = values.find(key);
        if (it == values.end()) return fallback;
        try {
            std::size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw InvalidParameter("config key '" + key + "': not a number: " + it->second);
        }
    }
    long long get_int(const std::string& key, long long fallback) const {
        const auto it = values.find(key);
        if (it == values.end()) return fallback;
        try {
            std::size_t pos = 0;
            const long long v = std::stoll(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw InvalidParameter("config key '" + key + "': not an integer: " + it->second);
        }
    }
    std::vector<double> get_list(const std::string& key,
                                 const std::vector<double>& fallback) const {
        const auto it = values.find(key);
        if (it == values.end()) return fallback;
        std::vector<double> out;
        std::string item;
        std::istringstream in(it->second);
        while (std::getline(in, item, ',')) {
            const std::string t = trim(item);
            if (t.empty()) continue;
            try {
                out.push_back(std::stod(t));
            } catch (const std::exception&) {
                throw InvalidParameter("config key '" + key + "': bad list entry: " + t);
            }
        }
        if (out.empty()) throw InvalidParameter("config key '" + key + "': empty list");
        return out;
    }

    // Sorted dump, used verbatim in the sidecar.
    std::string dump() const {
        std::string s;
        for (const auto& [k, v] : values) s += k + " = " + v + "\n";
        return s;
    }
};

// Stable decimal formatting for CSV cells: '.' decimal point, no separators.
inline std::string csv_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header) : out_(path, std::ios::binary) {
        if (!out_) throw InvalidParameter("cannot open output file: " + path);
        write_row_strings(header);
    }

    void write_row_strings(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

    void write_row(const std::vector<double>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << csv_num(cells[i]);
        }
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

// Every experiment writes `<out>.meta` with the fully resolved configuration.
inline void write_sidecar(const std::string& out_path, const KvConfig& resolved) {
    std::ofstream meta(out_path + ".meta", std::ios::binary);
    if (!meta) throw InvalidParameter("cannot open sidecar file: " + out_path + ".meta");
    meta << "schema_version = 1\n" << resolved.dump();
}

} // namespace embp
