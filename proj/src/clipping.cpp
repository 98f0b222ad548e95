#include "dcpo/clipping.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dcpo {

namespace {
constexpr double kQFloor = 1e-12;
}

std::string to_string(ClipMode mode) {
    switch (mode) {
        case ClipMode::FixedSymmetric: return "fixed";
        case ClipMode::FixedAsymmetric: return "asymmetric";
        case ClipMode::DynamicAdaptive: return "dynamic";
        case ClipMode::SequenceLevel: return "sequence";
    }
    return "unknown";
}

ClipConfig ClipConfig::fixed_symmetric(double eps) {
    ClipConfig cfg{ClipMode::FixedSymmetric, eps, eps, eps, 10.0};
    cfg.validate();
    return cfg;
}

ClipConfig ClipConfig::fixed_asymmetric(double eps_low, double eps_high) {
    ClipConfig cfg{ClipMode::FixedAsymmetric, eps_low, eps_low, eps_high, 10.0};
    cfg.validate();
    return cfg;
}

ClipConfig ClipConfig::dynamic_adaptive(double eps_low, double eps_high, double r_max) {
    ClipConfig cfg{ClipMode::DynamicAdaptive, eps_high, eps_low, eps_high, r_max};
    cfg.validate();
    return cfg;
}

ClipConfig ClipConfig::sequence_level(double eps_low, double eps_high) {
    ClipConfig cfg{ClipMode::SequenceLevel, eps_low, eps_low, eps_high, 10.0};
    cfg.validate();
    return cfg;
}

void ClipConfig::validate() const {
    if (!(eps >= 0.0) || !(eps_low >= 0.0) || !(eps_high >= 0.0))
        throw std::invalid_argument("clip thresholds must be non-negative");
    if (!(r_max > 1.0))
        throw std::invalid_argument("r_max must exceed 1");
    if (mode == ClipMode::FixedSymmetric && eps > 1.0)
        throw std::invalid_argument("fixed symmetric eps would push the lower bound below 0");
    if ((mode == ClipMode::FixedAsymmetric || mode == ClipMode::SequenceLevel) && eps_low >= 1.0)
        throw std::invalid_argument("asymmetric eps_low must stay below 1");
}

ClipBounds dynamic_bounds(double q, const ClipConfig& cfg) {
    if (cfg.mode != ClipMode::DynamicAdaptive)
        throw std::invalid_argument("dynamic_bounds requires DynamicAdaptive mode");
    if (!std::isfinite(q) || q < 0.0 || q > 1.0)
        throw std::domain_error("old-policy probability out of range (0, 1]");
    q = std::max(q, kQFloor);

    const double lower = 0.5 + 0.5 * std::sqrt(std::max(1.0 - 4.0 * cfg.eps_low / q, 0.0));
    const double upper = std::min(0.5 + 0.5 * std::sqrt(1.0 + 4.0 * cfg.eps_high / q), cfg.r_max);
    return {lower, upper};
}

ClipBounds fixed_bounds(const ClipConfig& cfg) {
    cfg.validate();
    switch (cfg.mode) {
        case ClipMode::FixedSymmetric:
            return {1.0 - cfg.eps, 1.0 + cfg.eps};
        case ClipMode::FixedAsymmetric:
            return {1.0 - cfg.eps_low, 1.0 + cfg.eps_high};
        default:
            throw std::invalid_argument("fixed_bounds requires a fixed clipping mode");
    }
}

std::pair<double, double> calibrate_thresholds(double eps) {
    if (!std::isfinite(eps) || eps <= 0.0 || eps >= 1.0)
        throw std::domain_error("calibration requires eps in (0, 1)");
    return {eps * (1.0 - eps), eps};
}

std::vector<BoundRow> bound_curve(const ClipConfig& cfg, std::span<const double> q_grid) {
    cfg.validate();
    std::vector<BoundRow> rows;
    rows.reserve(q_grid.size());
    for (double q : q_grid) {
        if (!std::isfinite(q) || q <= 0.0 || q > 1.0)
            throw std::domain_error("grid probabilities must lie in (0, 1]");
        const ClipBounds b = bounds_for_token(cfg, q);
        rows.push_back({q, b.lower, b.upper});
    }
    return rows;
}

ClipBounds bounds_for_token(const ClipConfig& cfg, double q) {
    switch (cfg.mode) {
        case ClipMode::DynamicAdaptive:
            return dynamic_bounds(q, cfg);
        case ClipMode::FixedSymmetric:
        case ClipMode::FixedAsymmetric:
            return fixed_bounds(cfg);
        case ClipMode::SequenceLevel:
            return {1.0 - cfg.eps_low, 1.0 + cfg.eps_high};
    }
    throw std::invalid_argument("unknown clip mode");
}

}  // namespace dcpo
