#pragma once

#include <stdexcept>
#include <string>

namespace qfbsde {

enum class Errc {
    invalid_argument,
    non_finite,
    rank_deficient,
    picard_divergence,
    missing_gradient,
    diffeomorphism,
    index_order,
    io,
    config,
};

inline const char* to_string(Errc code) {
    switch (code) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::non_finite: return "non_finite";
    case Errc::rank_deficient: return "rank_deficient";
    case Errc::picard_divergence: return "picard_divergence";
    case Errc::missing_gradient: return "missing_gradient";
    case Errc::diffeomorphism: return "diffeomorphism";
    case Errc::index_order: return "index_order";
    case Errc::io: return "io";
    case Errc::config: return "config";
    }
    return "unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

inline void require(bool cond, Errc code, const std::string& what) {
    if (!cond) throw Error(code, what);
}

} // namespace qfbsde
