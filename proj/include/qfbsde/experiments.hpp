#pragma once

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfbsde/analysis.hpp"
#include "qfbsde/backward.hpp"
#include "qfbsde/config.hpp"
#include "qfbsde/derivatives.hpp"
#include "qfbsde/forward.hpp"
#include "qfbsde/io.hpp"
#include "qfbsde/oracles.hpp"
#include "qfbsde/registry.hpp"

namespace qfbsde {

inline constexpr const char* kVersion = "0.1.0";

struct ExperimentSetup {
    FBSDEProblem problem;
    Drift raw_drift;
    RunConfig run;
    TimeGrid grid;
    Truncation truncation;
};

inline RegressionBasis basis_from(const config::ExperimentConfig& c) {
    RegressionBasis b;
    if (c.string("numerics.basis") == "polynomial") {
        b = RegressionBasis::polynomial(static_cast<int>(c.integer("numerics.degree")), c.number("numerics.winsor"));
    } else {
        b = RegressionBasis::piecewise_linear(static_cast<int>(c.integer("numerics.bins")));
    }
    b.ridge = c.number("numerics.ridge");
    return b;
}

inline ExperimentSetup setup_from(const config::ExperimentConfig& c) {
    ExperimentSetup s;
    auto& p = s.problem;
    p.dim = static_cast<std::size_t>(c.integer("problem.dim"));
    p.horizon = c.number("problem.horizon");
    p.x0 = c.numbers("problem.x0");
    s.raw_drift = registry::make_drift(c.string("problem.drift"), c.numbers("problem.drift_params"), p.dim);
    p.drift = s.raw_drift;
    const double eps = c.number("numerics.mollify_eps");
    if (eps > 0.0) {
        p.drift = mollify_drift(s.raw_drift, eps, static_cast<int>(c.integer("numerics.mollify_points")));
        if (p.dim == 1 && p.drift.time_homogeneous) {
            const double reach = 12.0 * std::sqrt(p.horizon) + std::abs(p.x0[0]) + 2.0 * p.drift.bound * p.horizon;
            const auto pts = static_cast<std::size_t>(std::ceil(2.0 * reach / (eps / 16.0))) + 1;
            p.drift = tabulate_drift_1d(p.drift, p.x0[0] - reach, p.x0[0] + reach, pts);
        }
    }
    p.terminal = registry::make_terminal(c.string("problem.terminal"), c.numbers("problem.terminal_params"), p.dim);
    const ScalarFn f = registry::make_f(c.string("problem.f"), c.numbers("problem.f_params"));
    p.driver = registry::make_driver(c.string("problem.driver"), c.numbers("problem.driver_params"), f, p.dim);
    p.driver.alpha = c.number("problem.alpha");
    s.run.seed = static_cast<std::uint64_t>(c.integer("numerics.seed"));
    s.run.paths = static_cast<std::size_t>(c.integer("numerics.paths"));
    s.run.picard_tol = c.number("numerics.picard_tol");
    s.run.picard_max = static_cast<int>(c.integer("numerics.picard_max"));
    s.run.basis = basis_from(c);
    s.grid = TimeGrid::uniform(p.horizon, static_cast<std::size_t>(c.integer("numerics.steps")));
    const auto n = c.integer("numerics.truncation");
    s.truncation = n > 0 ? Truncation(static_cast<int>(n)) : untruncated;
    return s;
}

struct ExperimentOutcome {
    bool pass = true;
    ConvergenceReport report;
    nlohmann::json details = nlohmann::json::object();
    std::string summary_csv; ///< optional per-time summary
};

inline std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

namespace detail {

inline ExperimentOutcome run_solve(const ExperimentSetup& s, bool with_bounds, PathEnsemble& e, BackwardSolution& sol) {
    ExperimentOutcome o;
    e = simulate(s.problem, s.grid, s.run.paths, s.run.seed);
    sol = lsmc_solve_with_bmo(s.problem, e, s.run.basis, s.truncation, s.run);
    o.report.experiment = with_bounds ? "bounds" : "solve";
    o.details["y0"] = io::number(sol.y0());
    o.details["sup_abs_y"] = io::number(sol.sup_abs_y);
    o.details["bmo_estimate"] = io::number(sol.bmo);
    o.details["max_picard_iters"] = *std::max_element(sol.picard_iters.begin(), sol.picard_iters.end());
    o.summary_csv = io::summary_csv(sol, e.grid);
    if (with_bounds) {
        const AprioriReport r = apriori_check(sol, s.problem);
        o.details["upsilon1"] = io::number(r.upsilon1);
        o.details["upsilon2"] = io::number(r.upsilon2);
        o.details["y_bound_pass"] = r.y_pass;
        o.details["bmo_bound_pass"] = r.bmo_pass;
        o.pass = r.pass();
    }
    return o;
}

inline ExperimentOutcome run_oracle(const config::ExperimentConfig& c, const ExperimentSetup& s) {
    ExperimentOutcome o;
    o.report.experiment = "oracle";
    const PathEnsemble e = simulate(s.problem, s.grid, s.run.paths, s.run.seed);
    const BackwardSolution sol = lsmc_solve(s.problem, e, s.run.basis, s.truncation, s.run);
    const std::string drv = c.string("problem.driver");
    double oracle = 0.0, oracle_se = 0.0;
    const bool zero_drift_1d = c.string("problem.drift") == "zero" && s.problem.dim == 1;
    if ((drv == "colehopf" || drv == "f_power") && zero_drift_1d) {
        oracle = domination_oracle(s.problem.driver.f, s.problem.terminal, s.problem.x0[0], s.problem.horizon,
                                   static_cast<int>(c.integer("experiment.quad_nodes"))).y0;
        o.details["oracle"] = "domination";
    } else if (drv == "colehopf" || drv == "f_power") {
        oracle = domination_oracle_mc(s.problem.driver.f, s.problem.terminal, e, &oracle_se);
        o.details["oracle"] = "domination_mc";
    } else if (drv == "linear" || drv == "zero") {
        const auto prm = c.numbers("problem.driver_params");
        const double a = drv == "zero" ? 0.0 : registry::param(prm, 0, 0.0);
        Vec cc(s.problem.dim, 0.0);
        if (drv == "linear")
            for (std::size_t k = 0; k < cc.size(); ++k) cc[k] = registry::param(prm, k + 1, 0.0);
        const Estimate est = linear_oracle(a, cc, nullptr, s.problem, s.run.paths, s.grid.steps(), s.run.seed + 1);
        oracle = est.value;
        oracle_se = est.std_error;
        o.details["oracle"] = "linear";
    } else {
        throw Error(Errc::invalid_argument, "oracle experiment: no closed-form oracle for driver " + drv);
    }
    const double err = std::abs(sol.y0() - oracle);
    o.details["lsmc_y0"] = io::number(sol.y0());
    o.details["oracle_y0"] = io::number(oracle);
    o.details["oracle_stderr"] = io::number(oracle_se);
    o.details["abs_error"] = io::number(err);
    o.details["tolerance"] = io::number(c.number("experiment.tolerance"));
    o.report.abscissae = {static_cast<double>(s.grid.steps())};
    o.report.errors = {err};
    o.report.stderrs = {oracle_se};
    o.pass = err <= c.number("experiment.tolerance");
    return o;
}

inline ExperimentOutcome run_convergence(const config::ExperimentConfig& c, const ExperimentSetup& s) {
    ExperimentOutcome o;
    o.report.experiment = "convergence";
    const PathEnsemble e = simulate(s.problem, s.grid, s.run.paths, s.run.seed);
    const BackwardSolution sol = lsmc_solve(s.problem, e, s.run.basis, s.truncation, s.run);
    const double p = c.number("experiment.p");
    bool projection_ok = true;
    nlohmann::json zbar = nlohmann::json::array();
    for (double mesh : c.numbers("experiment.meshes")) {
        const TimeGrid part = TimeGrid::uniform(s.problem.horizon, static_cast<std::size_t>(mesh));
        const StatEstimate left = path_regularity_stat(sol, e, part, p, RegularityMode::left_endpoint, s.run.basis);
        const StatEstimate zb = path_regularity_stat(sol, e, part, p, RegularityMode::zbar, s.run.basis);
        o.report.abscissae.push_back(part.mesh());
        o.report.errors.push_back(left.value);
        o.report.stderrs.push_back(left.std_error);
        zbar.push_back(io::number(zb.value));
        projection_ok = projection_ok && zb.value <= left.value;
    }
    o.report.refit();
    o.details["zbar_statistic"] = zbar;
    o.details["projection_inequality_holds"] = projection_ok;
    o.pass = projection_ok && o.report.fit && o.report.fit->slope >= c.number("experiment.slope_min") &&
             o.report.fit->slope <= c.number("experiment.slope_max") && o.report.fit->r2 >= c.number("experiment.r2_min");
    return o;
}

inline ExperimentOutcome run_regularity(const config::ExperimentConfig& c, const ExperimentSetup& s) {
    ExperimentOutcome o;
    o.report.experiment = "regularity";
    const PathEnsemble e = simulate(s.problem, s.grid, s.run.paths, s.run.seed);
    const BackwardSolution sol = lsmc_solve(s.problem, e, s.run.basis, s.truncation, s.run);
    std::vector<std::size_t> lags;
    for (double l : c.numbers("experiment.lags")) lags.push_back(static_cast<std::size_t>(l));
    if (lags.empty())
        for (std::size_t l = std::max<std::size_t>(1, s.grid.steps() / 64); l <= s.grid.steps() / 8; l *= 2) lags.push_back(l);
    require(!lags.empty(), Errc::invalid_argument, "regularity experiment: grid too coarse for default lags");
    const auto rows = y_increment_stat(sol, e.grid, c.number("experiment.p"), lags);
    nlohmann::json ratios = nlohmann::json::array();
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& r : rows) {
        o.report.abscissae.push_back(r.lag);
        o.report.errors.push_back(r.value);
        o.report.stderrs.push_back(r.std_error);
        ratios.push_back(io::number(r.ratio));
        lo = std::min(lo, r.ratio);
        hi = std::max(hi, r.ratio);
    }
    o.report.refit();
    o.details["ratios"] = ratios;
    o.details["ratio_spread"] = io::number(lo > 0 ? hi / lo : std::numeric_limits<double>::infinity());
    o.pass = lo > 0 && hi / lo <= 1.5;
    return o;
}

inline ExperimentOutcome run_truncation(const config::ExperimentConfig& c, const ExperimentSetup& s) {
    ExperimentOutcome o;
    const PathEnsemble e = simulate(s.problem, s.grid, s.run.paths, s.run.seed);
    std::vector<int> nl;
    for (double v : c.numbers("experiment.n_list")) nl.push_back(static_cast<int>(v));
    const TruncationCurve tc = truncation_error_curve(s.problem, e, s.run.basis, nl, TruncationReference::large_n, s.run);
    o.report = tc.report;
    o.details["reference_level"] = tc.reference_level;
    o.details["stabilization_level"] = tc.stabilization ? nlohmann::json(*tc.stabilization) : nlohmann::json(nullptr);
    o.details["z_errors"] = tc.z_errors;
    bool zeros = true;
    for (std::size_t j = 0; j < nl.size(); ++j)
        if (tc.stabilization && nl[j] >= *tc.stabilization) zeros = zeros && tc.bit_identical[j];
    const auto& err = tc.report.errors;
    const bool decay = err.front() == 0.0 ? err.back() == 0.0 : err.back() / err.front() <= c.number("experiment.decay_ratio");
    const bool mono = monotone_within(err, tc.report.stderrs, 2.0);
    o.details["exact_zeros_beyond_stabilization"] = zeros;
    o.details["decay_ok"] = decay;
    o.details["monotone_within_2se"] = mono;
    o.pass = zeros && decay && mono;
    return o;
}

inline ExperimentOutcome run_derivatives(const config::ExperimentConfig& c, const ExperimentSetup& s) {
    ExperimentOutcome o;
    o.report.experiment = "derivatives";
    const PathEnsemble e = simulate(s.problem, s.grid, s.run.paths, s.run.seed);
    const BackwardSolution sol = lsmc_solve(s.problem, e, s.run.basis, s.truncation, s.run);
    const FlowFields flow = variational_flow(s.problem, e, c.number("numerics.mollify_eps"));
    std::vector<std::size_t> anchors;
    for (double a : c.numbers("experiment.anchors")) anchors.push_back(static_cast<std::size_t>(a));
    if (anchors.empty()) anchors = default_anchors(s.grid.steps());
    const DerivativeSolution ds = solve_derivatives(s.problem, e, flow, sol, anchors, s.run.basis);
    const RepresentationReport rep = representation_check(sol, ds, flow);
    const FdGradient fd = fd_gradient(s.problem, c.number("experiment.fd_h"), s.run, s.grid, s.truncation);
    double grad0 = 0.0;
    for (std::size_t m = 0; m < e.paths; ++m) grad0 += ds.gradient.g(m, 0, 0);
    grad0 /= static_cast<double>(e.paths);
    const double rel = std::abs(grad0 - fd.value[0]) / std::max(std::abs(fd.value[0]), 1e-300);
    o.details["grad_y0_bsde"] = io::number(grad0);
    o.details["grad_y0_fd"] = io::number(fd.value[0]);
    o.details["grad_y0_fd_stderr"] = io::number(fd.std_error[0]);
    o.details["grad_rel_diff"] = io::number(rel);
    o.details["dev_z_gradx_vs_grady"] = io::number(rep.z_gradient.max_deviation);
    o.details["dev_z_gradx_vs_grady_argmax"] = rep.z_gradient.argmax;
    o.details["dev_z_gradx_vs_grady_left"] = io::number(rep.z_gradient_left.max_deviation);
    o.details["dev_dy_gradxu_vs_grady"] = io::number(rep.malliavin_y.max_deviation);
    o.details["dev_dz_gradxu_vs_gradz"] = io::number(rep.malliavin_z.max_deviation);
    o.details["flow_inverse_defect"] = io::number(flow_inverse_defect(flow));
    o.report.abscissae = {1.0, 2.0, 3.0};
    o.report.errors = {rep.z_gradient.max_deviation, rep.malliavin_y.max_deviation, rep.malliavin_z.max_deviation};
    o.report.stderrs = {rep.z_gradient.stderr_at_max, rep.malliavin_y.stderr_at_max, rep.malliavin_z.stderr_at_max};
    const double tol = c.number("experiment.tolerance");
    o.pass = rep.z_gradient.max_deviation <= tol && rel <= tol;
    return o;
}

inline ExperimentOutcome run_stability(const config::ExperimentConfig& c, const ExperimentSetup& s) {
    ExperimentOutcome o;
    const PathEnsemble e = simulate(s.problem, s.grid, s.run.paths, s.run.seed);
    const auto K = static_cast<std::size_t>(c.integer("experiment.ladder_size"));
    std::vector<FBSDEProblem> ladder;
    for (std::size_t k = 1; k <= K; ++k) {
        FBSDEProblem p = s.problem;
        if (c.string("experiment.ladder") == "terminal") {
            const double w = 1.0 - 1.0 / static_cast<double>(k);
            auto base = s.problem.terminal.value;
            p.terminal.value = [base, w](ConstSpan x) { return w * base(x); };
        } else {
            const double cap = static_cast<double>(k);
            auto g = s.problem.driver.g;
            p.driver.g = [g, cap](double t, ConstSpan x, double y, ConstSpan z) { return std::clamp(g(t, x, y, z), -cap, cap); };
        }
        ladder.push_back(std::move(p));
    }
    const StabilityResult r = stability_experiment(s.problem, ladder, e, s.run.basis, s.run, s.truncation);
    o.report = r.report;
    o.details["z_errors"] = r.z_errors;
    nlohmann::json ratios = nlohmann::json::array();
    for (double v : r.rhs_ratio) ratios.push_back(io::number(v));
    o.details["rhs_ratio"] = ratios;
    o.pass = r.report.errors.back() <= r.report.errors.front();
    return o;
}

} // namespace detail

struct RunStatus {
    int exit_code = 0;
    std::string message;
};

/// Executes the configured experiment and writes report.json, plot.csv, summary.csv,
/// binary containers (format "bin") and manifest.json into the output directory.
/// Exit codes: 0 pass, 2 threshold failure, 1 error.
inline RunStatus run(const config::ExperimentConfig& c) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string timestamp = utc_timestamp();
    const std::filesystem::path dir = c.string("output.directory");
    RunStatus status;
    nlohmann::json manifest;
    manifest["config_hash"] = [&] {
        char buf[20];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config::hash(c)));
        return std::string(buf);
    }();
    manifest["seed"] = static_cast<std::uint64_t>(c.integer("numerics.seed"));
    manifest["version"] = kVersion;
    manifest["compiler"] = __VERSION__;
    manifest["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION);
    manifest["json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                       "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH);
    manifest["timestamp"] = timestamp;
    try {
        std::filesystem::create_directories(dir);
        const ExperimentSetup s = setup_from(c);
        const std::string kind = c.string("experiment.kind");
        ExperimentOutcome o;
        PathEnsemble e;
        BackwardSolution sol;
        if (kind == "solve" || kind == "bounds") o = detail::run_solve(s, kind == "bounds", e, sol);
        else if (kind == "oracle") o = detail::run_oracle(c, s);
        else if (kind == "convergence") o = detail::run_convergence(c, s);
        else if (kind == "regularity") o = detail::run_regularity(c, s);
        else if (kind == "truncation") o = detail::run_truncation(c, s);
        else if (kind == "derivatives") o = detail::run_derivatives(c, s);
        else if (kind == "stability") o = detail::run_stability(c, s);
        else throw Error(Errc::config, "unknown experiment kind " + kind);
        o.report.seed = s.run.seed;
        o.report.paths = s.run.paths;
        o.report.basis = describe(s.run.basis);
        if (c.has_format("json")) {
            nlohmann::json j = io::report_json(o.report, timestamp);
            j["details"] = o.details;
            j["pass"] = o.pass;
            j["paths"] = o.report.paths;
            j["basis"] = o.report.basis;
            io::write_text((dir / "report.json").string(), j.dump(2) + "\n");
        }
        if (c.has_format("csv")) {
            io::write_text((dir / "plot.csv").string(), io::plot_csv(o.report));
            if (!o.summary_csv.empty()) io::write_text((dir / "summary.csv").string(), o.summary_csv);
        }
        if (c.has_format("bin") && e.has_paths()) {
            io::write_ensemble((dir / "ensemble.bin").string(), e);
            io::write_solution((dir / "solution.bin").string(), sol, e);
        }
        status.exit_code = o.pass ? 0 : 2;
        status.message = o.pass ? "pass" : "threshold failure";
    } catch (const std::exception& ex) {
        status.exit_code = 1;
        status.message = ex.what();
    }
    manifest["exit_code"] = status.exit_code;
    manifest["message"] = status.message;
    manifest["wall_time_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    try {
        std::filesystem::create_directories(dir);
        io::write_text((dir / "manifest.json").string(), manifest.dump(2) + "\n");
    } catch (const std::exception& ex) {
        if (status.exit_code == 0) {
            status.exit_code = 1;
            status.message = ex.what();
        }
    }
    return status;
}

} // namespace qfbsde
