#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <unordered_map>
#include <vector>

#include "dcpo/rng.hpp"
#include "dcpo/rollout.hpp"
#include "dcpo/surrogate.hpp"

namespace dcpo {

struct PolicyConfig {
    int vocab_size = 12;
    int context_order = 2;  // k-gram history length
    int max_len = 12;       // generation halts at the end token or this length
};

// Accumulated d objective / d logit values, lazily materialized per context
// row; contexts never visited stay absent (exactly zero).
struct GradientTable {
    std::unordered_map<std::uint64_t, std::vector<double>> rows;

    std::vector<double>& row(std::uint64_t key, int vocab_size);
    double at(std::uint64_t key, int token) const;  // 0 for absent rows
};

// Context-conditioned softmax policy over a fixed-order token history.
// Rows start at zero logits (uniform); positions before the start of the
// sequence use a pad symbol, so the context alphabet has V + 1 symbols.
class TabularPolicy {
public:
    explicit TabularPolicy(PolicyConfig cfg);

    const PolicyConfig& config() const { return cfg_; }
    int vocab_size() const { return cfg_.vocab_size; }
    int pad_token() const { return cfg_.vocab_size; }

    // Key of the k-gram ending the given history (pad-extended on the left).
    std::uint64_t context_key(std::span<const int> history) const;
    // Incremental form: key after appending `token` to a context.
    std::uint64_t shift_key(std::uint64_t key, int token) const;
    std::uint64_t initial_key() const;  // all-pad context

    std::vector<double> log_softmax_row(std::uint64_t key) const;
    std::vector<double> softmax_row(std::uint64_t key) const;
    double row_entropy(std::uint64_t key) const;  // nats

    // Zero-logit rows are left implicit; mutation materializes them.
    std::vector<double>& logits_row(std::uint64_t key);
    const std::vector<double>* find_row(std::uint64_t key) const;
    std::size_t materialized_rows() const { return logits_.size(); }

    void add_uniform_noise(double scale, std::uint64_t seed);  // logits in [-scale, scale]
    void apply_gradient(const GradientTable& grad, double step_size);

    // Versioned text checkpoint; exact double round trip.
    void save(const std::filesystem::path& path) const;
    static TabularPolicy load(const std::filesystem::path& path);

private:
    PolicyConfig cfg_;
    std::uint64_t base_ = 0;  // (V+1)^(k-1), the positional radix of the key
    std::unordered_map<std::uint64_t, std::vector<double>> logits_;
};

// G independent rollouts for one prompt; per-token log-probabilities are
// recorded under the unmodified policy. Deterministic for a fixed seed.
std::vector<Response> sample_group(const TabularPolicy& policy, std::span<const int> prompt,
                                   int group_size, double temperature, double top_p,
                                   std::uint64_t seed);

// Greedy (argmax, lowest token id on ties) decode of one response.
std::vector<int> greedy_decode(const TabularPolicy& policy, std::span<const int> prompt);

// Exact log-softmax evaluations of an existing response; throws
// std::domain_error on out-of-vocabulary tokens.
std::vector<double> logprob_of(const TabularPolicy& policy, std::span<const int> prompt,
                               std::span<const int> response);

// Mean token-level Shannon entropy over the contexts visited by the batch,
// weighted by visitation frequency. Throws std::logic_error on an empty batch.
double batch_entropy(const TabularPolicy& policy, std::span<const RolloutGroup> groups);

// Refreshes every response's logp_new from the policy (contexts from
// ctx_keys when present, otherwise recomputed from prompt + tokens).
void fill_logp_new(const TabularPolicy& policy, std::span<RolloutGroup> groups);

struct GradResult {
    SurrogateResult surrogate;
    GradientTable grad;
};

// Analytic gradient of the selected objective with respect to every logit,
// with the min-form subgradient (clipped tokens contribute zero through the
// ratio) and the softmax Jacobian applied per context row. Fills logp_new.
GradResult surrogate_grad(const TabularPolicy& policy, std::span<RolloutGroup> groups,
                          LossMode mode, const ClipConfig& cfg, double beta);

// Objective value under `policy` (fills logp_new on a scratch copy).
double eval_objective(const TabularPolicy& policy, std::span<const RolloutGroup> groups,
                      LossMode mode, const ClipConfig& cfg, double beta);

// Central finite differences over every (context, token) coordinate touched
// by the batch versus the analytic gradient; returns the max relative error
// with scale max(|analytic|, |fd|, 1e-6).
double fd_check(const TabularPolicy& policy, std::span<RolloutGroup> groups, LossMode mode,
                const ClipConfig& cfg, double beta, double h);

}  // namespace dcpo
