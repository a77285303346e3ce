#pragma once

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bridgeflow/common.hpp"

namespace bridgeflow {

namespace detail {

inline std::uint64_t fnv1a_bytes(const std::string& data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// shortest round-trip double formatting; fixed across runs
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline std::string content_hash(const std::string& data) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, detail::fnv1a_bytes(data));
    return std::string("fnv1a64:") + buf;
}

// CSV with a header row; every numeric cell printed with %.17g so identical
// runs produce byte-identical files.
inline void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                      const Matrix& rows) {
    if (static_cast<Eigen::Index>(header.size()) != rows.cols())
        throw std::invalid_argument("write_csv: header/column mismatch");
    std::ofstream out(path);
    if (!out) throw SolverError("cannot open output file: " + path.string());
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << "\n";
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
        for (Eigen::Index c = 0; c < rows.cols(); ++c)
            out << (c ? "," : "") << detail::format_double(rows(r, c));
        out << "\n";
    }
}

inline Matrix read_csv(const std::filesystem::path& path, std::vector<std::string>* header_out) {
    std::ifstream in(path);
    if (!in) throw SolverError("cannot open file: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw SolverError("empty csv: " + path.string());
    std::vector<std::string> header;
    {
        std::size_t pos = 0;
        while (pos <= line.size()) {
            std::size_t comma = line.find(',', pos);
            if (comma == std::string::npos) {
                header.push_back(line.substr(pos));
                break;
            }
            header.push_back(line.substr(pos, comma - pos));
            pos = comma + 1;
        }
    }
    std::vector<std::vector<double>> data;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            std::size_t comma = line.find(',', pos);
            std::string cell =
                comma == std::string::npos ? line.substr(pos) : line.substr(pos, comma - pos);
            row.push_back(std::strtod(cell.c_str(), nullptr));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (row.size() != header.size()) throw SolverError("ragged csv row: " + path.string());
        data.push_back(std::move(row));
    }
    Matrix out(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(header.size()));
    for (std::size_t r = 0; r < data.size(); ++r)
        for (std::size_t c = 0; c < header.size(); ++c)
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = data[r][c];
    if (header_out) *header_out = std::move(header);
    return out;
}

// Accumulates the run manifest: config echo and hash, stage wall times, the
// outer-iteration residual table, and the emitted file inventory.
class RunManifest {
public:
    RunManifest(std::string command, nlohmann::json config_echo)
        : command_(std::move(command)), config_(std::move(config_echo)) {
        hash_ = content_hash(config_.dump());
    }

    void add_stage(const std::string& name, double wall_ms) {
        stages_.push_back({{"name", name}, {"wall_ms", wall_ms}});
    }

    void add_residual_row(int iter, double residual_phihat0, double residual_p0, double wall_ms) {
        nlohmann::json row{{"iter", iter}, {"wall_ms", wall_ms}};
        row["residual_phihat0"] =
            std::isfinite(residual_phihat0) ? nlohmann::json(residual_phihat0) : nlohmann::json();
        row["residual_p0"] =
            std::isfinite(residual_p0) ? nlohmann::json(residual_p0) : nlohmann::json();
        residuals_.push_back(std::move(row));
    }

    void add_warning(const std::string& w) { warnings_.push_back(w); }
    void add_file(const std::string& name) { files_.push_back(name); }
    const std::string& config_hash() const { return hash_; }
    const nlohmann::json& config() const { return config_; }

    void write(const std::filesystem::path& dir) {
        nlohmann::json j;
        j["command"] = command_;
        j["config"] = config_;
        j["config_hash"] = hash_;
        j["stages"] = stages_;
        j["residuals"] = residuals_;
        j["warnings"] = warnings_;
        files_.push_back("manifest.json");
        j["files"] = files_;
        std::ofstream out(dir / "manifest.json");
        if (!out) throw SolverError("cannot write manifest");
        out << j.dump(2) << "\n";
    }

private:
    std::string command_;
    nlohmann::json config_;
    std::string hash_;
    nlohmann::json stages_ = nlohmann::json::array();
    nlohmann::json residuals_ = nlohmann::json::array();
    std::vector<std::string> warnings_;
    std::vector<std::string> files_;
};

}  // namespace bridgeflow
