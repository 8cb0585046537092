#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "qfbsde/core.hpp"

namespace qfbsde::registry {

inline constexpr std::array<std::string_view, 5> drifts = {"zero", "constant", "sign", "holder_sqrt", "smooth_sin"};
inline constexpr std::array<std::string_view, 4> terminals = {"tanh", "clip", "constant", "coordinate"};
inline constexpr std::array<std::string_view, 5> drivers = {"zero", "linear", "colehopf", "f_power",
                                                            "general_assumption2"};
inline constexpr std::array<std::string_view, 4> fs = {"zero", "constant", "power", "log1p"};

template <std::size_t N>
bool contains(const std::array<std::string_view, N>& names, std::string_view name) {
    return std::find(names.begin(), names.end(), name) != names.end();
}

inline double param(const std::vector<double>& p, std::size_t i, double fallback) {
    return i < p.size() ? p[i] : fallback;
}

inline ScalarFn make_f(const std::string& name, const std::vector<double>& p) {
    if (name == "zero") return [](double) { return 0.0; };
    if (name == "constant") {
        const double c = param(p, 0, 0.5);
        require(c >= 0.0, Errc::config, "f constant must be non-negative");
        return [c](double) { return c; };
    }
    if (name == "power") {
        const double q = param(p, 0, 1.0);
        require(q >= 0.0, Errc::config, "f power exponent must be non-negative");
        return [q](double u) { return std::pow(std::abs(u), q); };
    }
    if (name == "log1p") return [](double u) { return std::log1p(std::abs(u)); };
    throw Error(Errc::config, "unknown f '" + name + "'");
}

inline double sgn(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

inline Drift make_drift(const std::string& name, const std::vector<double>& p, std::size_t d) {
    Drift b;
    b.name = name;
    b.time_homogeneous = true;
    if (name == "zero") return zero_drift(d);
    if (name == "constant") {
        const double c = param(p, 0, 0.0);
        b.value = [c](double, ConstSpan, MutSpan out) { std::fill(out.begin(), out.end(), c); };
        b.jacobian = [](double, ConstSpan, MutSpan jac) { std::fill(jac.begin(), jac.end(), 0.0); };
        b.regularity = DriftRegularity::smooth;
        b.bound = std::abs(c);
        return b;
    }
    if (name == "sign") {
        b.value = [](double, ConstSpan x, MutSpan out) {
            for (std::size_t k = 0; k < out.size(); ++k) out[k] = sgn(x[k]);
        };
        b.regularity = DriftRegularity::bounded_measurable;
        b.holder_beta = 0.0;
        b.bound = 1.0;
        return b;
    }
    if (name == "holder_sqrt") {
        b.value = [](double, ConstSpan x, MutSpan out) {
            for (std::size_t k = 0; k < out.size(); ++k)
                out[k] = std::clamp(sgn(x[k]) * std::sqrt(std::abs(x[k])), -1.0, 1.0);
        };
        b.regularity = DriftRegularity::holder;
        b.holder_beta = 0.5;
        b.bound = 1.0;
        return b;
    }
    if (name == "smooth_sin") {
        const double a = param(p, 0, 1.0);
        b.value = [a](double, ConstSpan x, MutSpan out) {
            for (std::size_t k = 0; k < out.size(); ++k) out[k] = a * std::sin(x[k]);
        };
        b.jacobian = [a](double, ConstSpan x, MutSpan jac) {
            const std::size_t dd = x.size();
            std::fill(jac.begin(), jac.end(), 0.0);
            for (std::size_t k = 0; k < dd; ++k) jac[k * dd + k] = a * std::cos(x[k]);
        };
        b.regularity = DriftRegularity::smooth;
        b.bound = std::abs(a);
        return b;
    }
    throw Error(Errc::config, "unknown drift '" + name + "'");
}

inline Terminal make_terminal(const std::string& name, const std::vector<double>& p, std::size_t d) {
    Terminal t;
    t.name = name;
    if (name == "tanh") {
        const double scale = param(p, 0, 1.0), slope = param(p, 1, 1.0);
        t.value = [scale, slope](ConstSpan x) { return scale * std::tanh(slope * x[0]); };
        t.gradient = [scale, slope](ConstSpan x, MutSpan g) {
            std::fill(g.begin(), g.end(), 0.0);
            const double th = std::tanh(slope * x[0]);
            g[0] = scale * slope * (1.0 - th * th);
        };
        t.bound = std::abs(scale);
        t.lipschitz = std::abs(scale * slope);
        return t;
    }
    if (name == "clip") {
        const double c = param(p, 0, 1.0);
        require(c >= 0.0, Errc::config, "clip level must be non-negative");
        t.value = [c](ConstSpan x) { return std::clamp(x[0], -c, c); };
        t.gradient = [c](ConstSpan x, MutSpan g) {
            std::fill(g.begin(), g.end(), 0.0);
            g[0] = std::abs(x[0]) < c ? 1.0 : 0.0;
        };
        t.bound = c;
        t.lipschitz = 1.0;
        return t;
    }
    if (name == "constant") {
        const double c = param(p, 0, 0.0);
        t.value = [c](ConstSpan) { return c; };
        t.gradient = [](ConstSpan, MutSpan g) { std::fill(g.begin(), g.end(), 0.0); };
        t.bound = std::abs(c);
        t.lipschitz = 0.0;
        return t;
    }
    if (name == "coordinate") {
        const auto i = static_cast<std::size_t>(param(p, 0, 0.0));
        require(i < d, Errc::config, "coordinate index out of range");
        t.value = [i](ConstSpan x) { return x[i]; };
        t.gradient = [i](ConstSpan, MutSpan g) {
            std::fill(g.begin(), g.end(), 0.0);
            g[i] = 1.0;
        };
        t.lipschitz = 1.0;
        return t;
    }
    throw Error(Errc::config, "unknown terminal '" + name + "'");
}

inline double norm2(ConstSpan z) {
    double s = 0.0;
    for (double v : z) s += v * v;
    return s;
}

/// Driver with its structural constants; `f` is used by colehopf and general_assumption2.
inline DriverSpec make_driver(const std::string& name, const std::vector<double>& p, const ScalarFn& f, std::size_t d) {
    DriverSpec g;
    g.name = name;
    if (name == "zero") {
        g.grad_x = [](double, ConstSpan, double, ConstSpan, MutSpan o) { std::fill(o.begin(), o.end(), 0.0); };
        g.grad_y = [](double, ConstSpan, double, ConstSpan) { return 0.0; };
        g.grad_z = [](double, ConstSpan, double, ConstSpan, MutSpan o) { std::fill(o.begin(), o.end(), 0.0); };
        return g;
    }
    if (name == "linear") {
        const double a = param(p, 0, 0.0);
        std::vector<double> c(d, 0.0);
        for (std::size_t k = 0; k < d; ++k) c[k] = param(p, k + 1, 0.0);
        g.g = [a, c](double, ConstSpan, double y, ConstSpan z) {
            double acc = a * y;
            for (std::size_t k = 0; k < z.size(); ++k) acc += c[k] * z[k];
            return acc;
        };
        g.grad_x = [](double, ConstSpan, double, ConstSpan, MutSpan o) { std::fill(o.begin(), o.end(), 0.0); };
        g.grad_y = [a](double, ConstSpan, double, ConstSpan) { return a; };
        g.grad_z = [c](double, ConstSpan, double, ConstSpan, MutSpan o) { std::copy(c.begin(), c.end(), o.begin()); };
        g.lambda_y = std::abs(a);
        g.lambda_z = std::sqrt(norm2(c));
        return g;
    }
    if (name == "colehopf" || name == "f_power") {
        ScalarFn ff = f;
        if (name == "f_power") {
            const double q = param(p, 0, 1.0);
            require(q >= 0.0, Errc::config, "f_power exponent must be non-negative");
            ff = [q](double u) { return 0.5 * std::pow(std::abs(u), q); };
        }
        g.f = ff;
        g.g = [ff](double, ConstSpan, double y, ConstSpan z) { return ff(std::abs(y)) * norm2(z); };
        g.grad_x = [](double, ConstSpan, double, ConstSpan, MutSpan o) { std::fill(o.begin(), o.end(), 0.0); };
        g.grad_z = [ff](double, ConstSpan, double y, ConstSpan z, MutSpan o) {
            const double c = 2.0 * ff(std::abs(y));
            for (std::size_t k = 0; k < z.size(); ++k) o[k] = c * z[k];
        };
        g.lambda_z = 1.0;
        return g;
    }
    if (name == "general_assumption2") {
        const double l0 = param(p, 0, 0.5), ly = param(p, 1, 0.5), lz = param(p, 2, 1.0);
        g.f = f;
        g.g = [l0, ly, lz, f](double t, ConstSpan x, double y, ConstSpan z) {
            const double z2 = norm2(z);
            return l0 * std::sin(t + x[0]) - ly * y + lz * (std::sqrt(1.0 + z2) - 1.0) + 0.5 * lz * f(std::abs(y)) * z2;
        };
        g.grad_x = [l0](double t, ConstSpan x, double, ConstSpan, MutSpan o) {
            std::fill(o.begin(), o.end(), 0.0);
            o[0] = l0 * std::cos(t + x[0]);
        };
        g.grad_z = [lz, f](double, ConstSpan, double y, ConstSpan z, MutSpan o) {
            const double z2 = norm2(z);
            for (std::size_t k = 0; k < z.size(); ++k)
                o[k] = lz * z[k] / std::sqrt(1.0 + z2) + lz * f(std::abs(y)) * z[k];
        };
        g.lambda0 = l0;
        g.lambda_y = ly;
        g.lambda_z = lz;
        return g;
    }
    throw Error(Errc::config, "unknown driver '" + name + "'");
}

} // namespace qfbsde::registry
