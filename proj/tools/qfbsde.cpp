// Command-line front end: run, validate and list-registry.
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "qfbsde/config.hpp"
#include "qfbsde/experiments.hpp"
#include "qfbsde/registry.hpp"

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw qfbsde::Error(qfbsde::Errc::io, "cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

template <std::size_t N>
void list(const char* title, const std::array<std::string_view, N>& names) {
    std::cout << title << ':';
    for (auto n : names) std::cout << ' ' << n;
    std::cout << '\n';
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Monte Carlo solver and diagnostics for quadratic FBSDEs with irregular drift"};
    app.require_subcommand(1);

    std::string run_path, validate_path;
    bool emit = false;
    auto* run = app.add_subcommand("run", "execute the experiment described by a config file");
    run->add_option("config", run_path, "config file")->required();
    auto* val = app.add_subcommand("validate", "parse and validate a config file without running it");
    val->add_option("config", validate_path, "config file")->required();
    val->add_flag("--emit", emit, "print the canonical form of the config");
    auto* reg = app.add_subcommand("list-registry", "print the names accepted in config files");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*reg) {
            list("drifts", qfbsde::registry::drifts);
            list("terminals", qfbsde::registry::terminals);
            list("drivers", qfbsde::registry::drivers);
            list("f", qfbsde::registry::fs);
            list("experiments", qfbsde::config::kinds);
            return 0;
        }
        const std::string& path = *run ? run_path : validate_path;
        const auto parsed = qfbsde::config::parse(slurp(path));
        if (!parsed.ok()) {
            for (const auto& d : parsed.diagnostics) std::cerr << path << ':' << d.str() << '\n';
            return 1;
        }
        if (*val) {
            if (emit) std::cout << qfbsde::config::emit(*parsed.config);
            else std::cout << "ok\n";
            return 0;
        }
        const auto status = qfbsde::run(*parsed.config);
        std::cerr << "qfbsde: " << status.message << '\n';
        return status.exit_code;
    } catch (const std::exception& ex) {
        std::cerr << "qfbsde: " << ex.what() << '\n';
        return 1;
    }
}
