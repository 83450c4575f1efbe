#pragma once

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "multishot/errors.hpp"
#include "multishot/metrics.hpp"

namespace multishot {

inline constexpr const char* kToolVersion = "multishot 0.1.0";

// Write-then-rename so partially written artifacts never exist under their
// final name.
inline void write_file_atomic(const std::string& path, const std::string& contents) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot open for writing: " + tmp);
        out << contents;
        if (!out) throw DataError("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw DataError("rename failed for " + path + ": " + ec.message());
}

// Provenance sidecar written next to every artifact the CLI produces.
struct RunManifest {
    std::string command;
    nlohmann::json config;
    std::uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::string tool_version = kToolVersion;
    double wall_seconds = 0.0;
};

inline void write_manifest(const std::string& artifact_path, const RunManifest& m) {
    nlohmann::json j;
    j["command"] = m.command;
    j["config"] = m.config;
    j["seed"] = m.seed;
    j["inputs"] = m.inputs;
    j["outputs"] = m.outputs;
    j["tool_version"] = m.tool_version;
    j["wall_seconds"] = m.wall_seconds;
    write_file_atomic(artifact_path + ".manifest.json", j.dump(1) + "\n");
}

// --- CSV ----------------------------------------------------------------------

// Shortest representation that still round-trips.
inline std::string format_double(double v) {
    char buf[48];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

inline std::string pck_report_csv(const PckReport& r) {
    std::ostringstream out;
    out << "alpha,pck,pairs\n";
    for (size_t a = 0; a < r.alphas.size(); ++a)
        out << format_double(r.alphas[a]) << "," << format_double(r.pck[a]) << ","
            << r.pairs << "\n";
    return out.str();
}

inline nlohmann::json pck_report_json(const PckReport& r) {
    nlohmann::json j;
    j["alphas"] = r.alphas;
    j["pck"] = r.pck;
    j["pairs"] = r.pairs;
    j["joints_evaluated"] = r.joints_evaluated;
    nlohmann::json per_joint = nlohmann::json::array();
    for (Eigen::Index a = 0; a < r.per_joint.rows(); ++a) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < r.per_joint.cols(); ++c)
            row.push_back(r.per_joint(a, c));
        per_joint.push_back(row);
    }
    j["per_joint"] = per_joint;
    return j;
}

inline std::string scalar_metric_csv(const std::string& name, double value, long count) {
    std::ostringstream out;
    out << "metric,value,count\n" << name << "," << format_double(value) << "," << count
        << "\n";
    return out.str();
}

// Generic key,value[,...] CSV with one header row, used by `compare`.
struct CsvReport {
    std::vector<std::string> header;
    std::vector<std::pair<std::string, double>> rows;  // first column -> second column
};

inline CsvReport read_csv_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    CsvReport r;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() < 2)
            throw DataError(path + ":" + std::to_string(line_no) + ": expected >= 2 columns");
        if (line_no == 1) {
            r.header = cells;
            continue;
        }
        char* end = nullptr;
        const double v = std::strtod(cells[1].c_str(), &end);
        if (end == cells[1].c_str())
            throw DataError(path + ":" + std::to_string(line_no) + ": non-numeric value");
        r.rows.emplace_back(cells[0], v);
    }
    if (r.rows.empty()) throw DataError(path + ": no data rows");
    return r;
}

// Paired comparison of two reports over their shared keys.
inline std::string compare_reports(const CsvReport& a, const CsvReport& b,
                                   const std::string& label_a, const std::string& label_b) {
    std::map<std::string, double> bmap(b.rows.begin(), b.rows.end());
    std::ostringstream out;
    out << "key," << label_a << "," << label_b << ",diff\n";
    double mean_a = 0.0, mean_b = 0.0;
    long wins_a = 0, wins_b = 0, n = 0;
    for (const auto& [key, va] : a.rows) {
        auto it = bmap.find(key);
        if (it == bmap.end()) continue;
        const double vb = it->second;
        out << key << "," << format_double(va) << "," << format_double(vb) << ","
            << format_double(va - vb) << "\n";
        mean_a += va;
        mean_b += vb;
        wins_a += va > vb ? 1 : 0;
        wins_b += vb > va ? 1 : 0;
        ++n;
    }
    if (n == 0) throw DataError("compare: reports share no keys");
    mean_a /= static_cast<double>(n);
    mean_b /= static_cast<double>(n);
    out << "\n";
    out << "paired keys: " << n << "\n";
    out << "mean " << label_a << ": " << format_double(mean_a) << "\n";
    out << "mean " << label_b << ": " << format_double(mean_b) << "\n";
    out << "mean diff (" << label_a << " - " << label_b
        << "): " << format_double(mean_a - mean_b) << "\n";
    out << "wins: " << label_a << " " << wins_a << ", " << label_b << " " << wins_b
        << "\n";
    out << "verdict: "
        << (mean_a > mean_b ? label_a + " > " + label_b
                            : (mean_b > mean_a ? label_b + " > " + label_a : "tie"))
        << "\n";
    return out.str();
}

// Comparison table over labeled PCK reports (rows = labels, columns =
// alphas) plus per-label means; the Fig-8-style artifact.
inline std::string emit_report(const std::vector<std::string>& labels,
                               const std::vector<PckReport>& reports) {
    if (labels.empty() || labels.size() != reports.size())
        throw DataError("emit_report: empty or mismatched results");
    std::ostringstream out;
    out << "label";
    for (const double a : reports[0].alphas) out << ",pck@" << format_double(a);
    out << "\n";
    for (size_t i = 0; i < labels.size(); ++i) {
        if (reports[i].alphas != reports[0].alphas)
            throw DataError("emit_report: reports disagree on alphas");
        out << labels[i];
        for (const double v : reports[i].pck) out << "," << format_double(v);
        out << "\n";
    }
    return out.str();
}

}  // namespace multishot
