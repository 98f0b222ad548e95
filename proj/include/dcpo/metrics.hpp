#pragma once

#include <cstdint>
#include <span>

namespace dcpo {

struct MicrobatchClipCount {
    std::int64_t clipped = 0;
    std::int64_t total = 0;
};

// Token clipping ratio: mean over microbatches of clipped/total (average of
// per-microbatch fractions, not pooled tokens). Throws std::logic_error on an
// empty list and std::invalid_argument on malformed counts.
double tcr(std::span<const MicrobatchClipCount> counts);

// Response utilization ratio: percentage of responses with |advantage| > 0.
// Throws std::logic_error on an empty list.
double rur(std::span<const double> advantages);

}  // namespace dcpo
