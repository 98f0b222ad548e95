#include "dcpo/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace dcpo {

double tcr(std::span<const MicrobatchClipCount> counts) {
    if (counts.empty()) throw std::logic_error("tcr requires at least one microbatch");
    double acc = 0.0;
    for (const auto& c : counts) {
        if (c.total < 1 || c.clipped < 0 || c.clipped > c.total)
            throw std::invalid_argument("malformed microbatch clip count");
        acc += static_cast<double>(c.clipped) / static_cast<double>(c.total);
    }
    return acc / static_cast<double>(counts.size());
}

double rur(std::span<const double> advantages) {
    if (advantages.empty()) throw std::logic_error("rur requires at least one response");
    std::int64_t nonzero = 0;
    for (double a : advantages)
        if (std::abs(a) > 0.0) ++nonzero;
    return 100.0 * static_cast<double>(nonzero) / static_cast<double>(advantages.size());
}

}  // namespace dcpo
