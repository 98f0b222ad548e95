#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dcpo {

enum class ClipMode {
    FixedSymmetric,   // [1-eps, 1+eps]
    FixedAsymmetric,  // [1-eps_low, 1+eps_high]
    DynamicAdaptive,  // probability-dependent bounds, widening as q shrinks
    SequenceLevel,    // fixed asymmetric bounds applied to the sequence ratio
};

std::string to_string(ClipMode mode);

struct ClipConfig {
    ClipMode mode = ClipMode::DynamicAdaptive;
    double eps = 0.2;        // fixed symmetric ratio offset
    double eps_low = 0.16;   // dynamic: probability-weighted slack; asymmetric: ratio offset
    double eps_high = 0.2;
    double r_max = 10.0;     // hard ratio ceiling for dual clipping

    static ClipConfig fixed_symmetric(double eps);
    static ClipConfig fixed_asymmetric(double eps_low, double eps_high);
    static ClipConfig dynamic_adaptive(double eps_low, double eps_high, double r_max = 10.0);
    static ClipConfig sequence_level(double eps_low, double eps_high);

    // Throws std::invalid_argument on violated invariants.
    void validate() const;
};

struct ClipBounds {
    double lower = 1.0;
    double upper = 1.0;
};

// Bounds that widen as the old-policy token probability q shrinks:
//   lower = 0.5 + 0.5*sqrt(max(1 - 4*eps_low/q, 0))
//   upper = min(0.5 + 0.5*sqrt(1 + 4*eps_high/q), r_max)
// q is clamped to a floor of 1e-12; exact zero comes from underflow of the
// old-policy probability and the r_max ceiling makes the result insensitive
// to the floor value. Throws std::domain_error for q < 0, q > 1 or non-finite q.
ClipBounds dynamic_bounds(double q, const ClipConfig& cfg);

// Constant bounds for the two fixed modes.
ClipBounds fixed_bounds(const ClipConfig& cfg);

// The (eps_low, eps_high) pair that makes the dynamic bounds pass through the
// fixed-scheme anchor points (q, r) = (1, 1-eps) and (1/(1+eps), 1+eps).
// Closed forms: eps_low = eps*(1-eps), eps_high = eps.
std::pair<double, double> calibrate_thresholds(double eps);

struct BoundRow {
    double q;
    double lower;
    double upper;
};

// One row per grid point, bounds evaluated under cfg.
std::vector<BoundRow> bound_curve(const ClipConfig& cfg, std::span<const double> q_grid);

// Dispatch helper: per-token admissible interval for a token whose old-policy
// probability is q. Sequence-level configs use the fixed asymmetric shape.
ClipBounds bounds_for_token(const ClipConfig& cfg, double q);

}  // namespace dcpo
