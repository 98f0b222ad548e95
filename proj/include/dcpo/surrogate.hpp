#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dcpo/clipping.hpp"
#include "dcpo/rollout.hpp"

namespace dcpo {

enum class LossMode { Grpo, Dapo, Gspo, Dcpo };

std::string to_string(LossMode mode);

// Which advantage signs the r_max ceiling applies to before branch
// evaluation. GRPO and GSPO use none, DAPO caps negative advantages only,
// DCPO caps both signs.
enum class DualClip { None, NegativeOnly, BothSigns };

struct ClippedTerm {
    double value = 0.0;
    bool clipped = false;   // true iff the gradient through the ratio is zero
    double dlogp = 0.0;     // d value / d logp_new at this token (= adv*r when live)
};

// Per-response bookkeeping produced by a loss evaluation. `dlogp` already
// carries the aggregation weight of the loss mode, so the analytic gradient
// of the objective w.r.t. a token's logp_new is exactly dlogp[t].
struct ResponseTerms {
    std::vector<std::uint8_t> clipped;
    std::vector<double> dlogp;
    double contribution = 0.0;  // this response's share of the objective
};

struct SurrogateResult {
    double objective = 0.0;        // value to maximize
    std::int64_t clipped_tokens = 0;
    std::int64_t total_tokens = 0;
    std::int64_t clipped_responses = 0;  // responses with every token flagged
    std::vector<std::vector<ResponseTerms>> terms;  // mirrors groups[g].responses[r]
};

// r_t = exp(logp_new - logp_old), elementwise. Throws on non-finite inputs.
std::vector<double> token_ratios(std::span<const double> logp_new,
                                 std::span<const double> logp_old);

// Geometric mean of token ratios, exp(mean(logp_new - logp_old)).
double sequence_ratio(std::span<const double> logp_new, std::span<const double> logp_old);

// min(r*adv, clip(r, lower, upper)*adv) with the ratio capped at r_max ahead
// of both branches when dual clipping covers sign(adv).
ClippedTerm clipped_term(double r, double adv, ClipBounds bounds, double r_max,
                         DualClip dual);

// Mean per-token k3 estimate of KL(policy || reference):
//   exp(logp_ref - logp_new) - (logp_ref - logp_new) - 1  >= 0.
double kl_penalty(std::span<const double> logp_new, std::span<const double> logp_ref);

// Sequence-level mean: (1/G) sum_i (1/|o_i|) sum_t term - beta*KL, averaged
// over the groups in the batch. Requires FixedSymmetric bounds.
SurrogateResult loss_grpo(std::span<const RolloutGroup> groups, const ClipConfig& cfg,
                          double beta);

// Token-level mean over the whole minibatch: (1/sum|o_i|) sum_i sum_t term.
// Requires FixedAsymmetric bounds.
SurrogateResult loss_dapo(std::span<const RolloutGroup> groups, const ClipConfig& cfg);

// Sequence-ratio clipping: (1/G) sum_i min(s_i*A_i, clip(s_i)*A_i), averaged
// over groups; a clipped response flags every one of its tokens.
SurrogateResult loss_gspo(std::span<const RolloutGroup> groups, const ClipConfig& cfg);

// Only-token-mean: sum_i (1/|o_i|) sum_t term over every response in the
// minibatch, no group averaging and no KL term. Normally runs with
// DynamicAdaptive per-token bounds (q = exp(logp_old)); fixed token-level
// bounds are accepted so the aggregation can be studied in isolation.
SurrogateResult loss_dcpo(std::span<const RolloutGroup> groups, const ClipConfig& cfg);

// Dispatch on mode; beta is only meaningful for Grpo.
SurrogateResult eval_loss(LossMode mode, std::span<const RolloutGroup> groups,
                          const ClipConfig& cfg, double beta);

}  // namespace dcpo
