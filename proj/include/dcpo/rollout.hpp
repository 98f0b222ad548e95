#pragma once

#include <cstdint>
#include <vector>

namespace dcpo {

// One sampled response. Per-token vectors share the token index; logp_ref is
// empty unless a KL penalty is in use. `advantage` is the response-level
// value broadcast to every token.
struct Response {
    std::vector<int> tokens;
    std::vector<std::uint64_t> ctx_keys;  // context row per token position
    std::vector<double> logp_old;         // under the snapshot that sampled it
    std::vector<double> logp_new;         // under the policy being optimized
    std::vector<double> logp_ref;         // under the run-start reference
    double advantage = 0.0;
    double reward = 0.0;

    std::size_t length() const { return tokens.size(); }
};

// The G responses sampled for one prompt in one generation step.
struct RolloutGroup {
    std::uint64_t prompt_id = 0;
    std::vector<int> prompt;
    std::vector<Response> responses;
};

}  // namespace dcpo
