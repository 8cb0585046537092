#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfbsde/analysis.hpp"
#include "qfbsde/backward.hpp"
#include "qfbsde/derivatives.hpp"
#include "qfbsde/forward.hpp"

namespace qfbsde::io {

static_assert(std::endian::native == std::endian::little, "binary containers assume a little-endian host");

// Container layout (little-endian): u64 seed, u64 M, u64 N, u64 d, (N+1) f64 times, then the
// body arrays in row-major order.

struct ContainerHeader {
    std::uint64_t seed = 0;
    std::uint64_t paths = 0;
    std::uint64_t steps = 0;
    std::uint64_t dim = 0;
    Vec times;
};

namespace detail {

inline void put(std::ofstream& out, const void* data, std::size_t bytes) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    require(static_cast<bool>(out), Errc::io, "binary write failed");
}

inline void get(std::ifstream& in, void* data, std::size_t bytes) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
    require(static_cast<bool>(in), Errc::io, "binary read failed (truncated file?)");
}

inline std::ofstream open_out(const std::string& path, bool binary) {
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    require(static_cast<bool>(out), Errc::io, "cannot open " + path + " for writing");
    return out;
}

inline void write_header(std::ofstream& out, const ContainerHeader& h) {
    const std::uint64_t head[4] = {h.seed, h.paths, h.steps, h.dim};
    put(out, head, sizeof head);
    put(out, h.times.data(), h.times.size() * sizeof(double));
}

inline ContainerHeader read_header(std::ifstream& in) {
    ContainerHeader h;
    std::uint64_t head[4];
    get(in, head, sizeof head);
    h.seed = head[0];
    h.paths = head[1];
    h.steps = head[2];
    h.dim = head[3];
    require(h.steps < (1ull << 32) && h.dim < (1ull << 16), Errc::io, "implausible container header");
    h.times.resize(h.steps + 1);
    get(in, h.times.data(), h.times.size() * sizeof(double));
    return h;
}

inline void put_vec(std::ofstream& out, const Vec& v) { put(out, v.data(), v.size() * sizeof(double)); }

inline Vec get_vec(std::ifstream& in, std::size_t n) {
    Vec v(n);
    get(in, v.data(), n * sizeof(double));
    return v;
}

} // namespace detail

inline void write_ensemble(const std::string& path, const PathEnsemble& e) {
    auto out = detail::open_out(path, true);
    detail::write_header(out, {e.seed, e.paths, e.steps(), e.dim, e.grid.times()});
    detail::put_vec(out, e.increments);
    detail::put_vec(out, e.states);
}

inline PathEnsemble read_ensemble(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), Errc::io, "cannot open " + path);
    const ContainerHeader h = detail::read_header(in);
    PathEnsemble e;
    e.grid = TimeGrid(h.times);
    e.paths = h.paths;
    e.dim = h.dim;
    e.seed = h.seed;
    e.increments = detail::get_vec(in, h.paths * h.steps * h.dim);
    e.states = detail::get_vec(in, h.paths * (h.steps + 1) * h.dim);
    return e;
}

inline void write_solution(const std::string& path, const BackwardSolution& s, const PathEnsemble& e) {
    auto out = detail::open_out(path, true);
    detail::write_header(out, {e.seed, s.paths, s.steps, s.dim, e.grid.times()});
    detail::put_vec(out, s.Y);
    detail::put_vec(out, s.Z);
}

inline BackwardSolution read_solution(const std::string& path, ContainerHeader* header = nullptr) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), Errc::io, "cannot open " + path);
    const ContainerHeader h = detail::read_header(in);
    BackwardSolution s;
    s.paths = h.paths;
    s.steps = h.steps;
    s.dim = h.dim;
    s.Y = detail::get_vec(in, h.paths * (h.steps + 1));
    s.Z = detail::get_vec(in, h.paths * h.steps * h.dim);
    if (header) *header = h;
    return s;
}

/// Derivative fields: grad Y then grad Z, then per anchor D_u Y and D_u Z.
inline void write_derivatives(const std::string& path, const DerivativeSolution& s, const PathEnsemble& e) {
    auto out = detail::open_out(path, true);
    detail::write_header(out, {e.seed, e.paths, e.steps(), e.dim, e.grid.times()});
    detail::put_vec(out, s.gradient.G);
    detail::put_vec(out, s.gradient.H);
    for (const auto& f : s.malliavin) {
        detail::put_vec(out, f.G);
        detail::put_vec(out, f.H);
    }
}

inline std::string fmt(double v) {
    if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// RFC-4180 field quoting.
inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline void write_text(const std::string& path, const std::string& text) {
    auto out = detail::open_out(path, false);
    out << text;
    require(static_cast<bool>(out), Errc::io, "write failed for " + path);
}

/// Columns: t_i, mean Y, sd Y, mean |Z|, picard_iters.
inline std::string summary_csv(const BackwardSolution& s, const TimeGrid& grid) {
    std::ostringstream os;
    os << "t_i,mean_Y,sd_Y,mean_abs_Z,picard_iters\r\n";
    const std::size_t M = s.paths;
    for (std::size_t i = 0; i <= s.steps; ++i) {
        double sum = 0, sum2 = 0, zs = 0;
        for (std::size_t m = 0; m < M; ++m) {
            sum += s.y(m, i);
            sum2 += s.y(m, i) * s.y(m, i);
            if (i < s.steps) {
                double z2 = 0;
                for (std::size_t k = 0; k < s.dim; ++k) z2 += s.z(m, i, k) * s.z(m, i, k);
                zs += std::sqrt(z2);
            }
        }
        const double mean = sum / static_cast<double>(M);
        const double sd = std::sqrt(std::max(0.0, sum2 / static_cast<double>(M) - mean * mean));
        os << fmt(grid[i]) << ',' << fmt(mean) << ',' << fmt(sd) << ','
           << (i < s.steps ? fmt(zs / static_cast<double>(M)) : std::string()) << ','
           << (i < s.steps ? std::to_string(s.picard_iters[i]) : std::string()) << "\r\n";
    }
    return os.str();
}

/// Plot data with columns x, y, yerr.
inline std::string plot_csv(const ConvergenceReport& r) {
    std::ostringstream os;
    os << "x,y,yerr\r\n";
    for (std::size_t i = 0; i < r.abscissae.size(); ++i)
        os << fmt(r.abscissae[i]) << ',' << fmt(r.errors[i]) << ',' << fmt(i < r.stderrs.size() ? r.stderrs[i] : 0.0) << "\r\n";
    return os.str();
}

inline nlohmann::json number(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

/// Report schema: experiment, abscissae, errors, stderrs, slope, intercept, r2, seed, timestamp.
inline nlohmann::json report_json(const ConvergenceReport& r, const std::string& timestamp) {
    nlohmann::json j;
    j["experiment"] = r.experiment;
    j["abscissae"] = nlohmann::json::array();
    j["errors"] = nlohmann::json::array();
    j["stderrs"] = nlohmann::json::array();
    for (double v : r.abscissae) j["abscissae"].push_back(number(v));
    for (double v : r.errors) j["errors"].push_back(number(v));
    for (double v : r.stderrs) j["stderrs"].push_back(number(v));
    j["slope"] = r.fit ? number(r.fit->slope) : nlohmann::json(nullptr);
    j["intercept"] = r.fit ? number(r.fit->intercept) : nlohmann::json(nullptr);
    j["r2"] = r.fit ? number(r.fit->r2) : nlohmann::json(nullptr);
    j["seed"] = r.seed;
    j["timestamp"] = timestamp;
    return j;
}

} // namespace qfbsde::io
