#include "dcpo/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dcpo {

std::string to_string(LossMode mode) {
    switch (mode) {
        case LossMode::Grpo: return "grpo";
        case LossMode::Dapo: return "dapo";
        case LossMode::Gspo: return "gspo";
        case LossMode::Dcpo: return "dcpo";
    }
    return "unknown";
}

namespace {

void check_response(const Response& r, bool need_ref) {
    const std::size_t n = r.tokens.size();
    if (n == 0) throw std::invalid_argument("response must contain at least one token");
    if (r.logp_old.size() != n || r.logp_new.size() != n)
        throw std::invalid_argument("per-token log-probability shape mismatch");
    if (need_ref && r.logp_ref.size() != n)
        throw std::invalid_argument("KL penalty requires reference log-probabilities");
}

double checked_ratio(double lp_new, double lp_old) {
    if (!std::isfinite(lp_new) || !std::isfinite(lp_old))
        throw std::domain_error("non-finite log-probability");
    const double r = std::exp(lp_new - lp_old);
    if (!std::isfinite(r)) throw std::domain_error("non-finite probability ratio");
    return r;
}

}  // namespace

std::vector<double> token_ratios(std::span<const double> logp_new,
                                 std::span<const double> logp_old) {
    if (logp_new.size() != logp_old.size())
        throw std::invalid_argument("token_ratios requires matching shapes");
    std::vector<double> out(logp_new.size());
    for (std::size_t t = 0; t < out.size(); ++t)
        out[t] = checked_ratio(logp_new[t], logp_old[t]);
    return out;
}

double sequence_ratio(std::span<const double> logp_new, std::span<const double> logp_old) {
    if (logp_new.size() != logp_old.size())
        throw std::invalid_argument("sequence_ratio requires matching shapes");
    if (logp_new.empty())
        throw std::invalid_argument("sequence_ratio requires at least one token");
    double acc = 0.0;
    for (std::size_t t = 0; t < logp_new.size(); ++t) {
        if (!std::isfinite(logp_new[t]) || !std::isfinite(logp_old[t]))
            throw std::domain_error("non-finite log-probability");
        acc += logp_new[t] - logp_old[t];
    }
    return std::exp(acc / static_cast<double>(logp_new.size()));
}

ClippedTerm clipped_term(double r, double adv, ClipBounds bounds, double r_max,
                         DualClip dual) {
    if (!std::isfinite(r) || r < 0.0) throw std::domain_error("ratio must be finite and >= 0");
    if (!std::isfinite(adv)) throw std::domain_error("advantage must be finite");

    const bool capped =
        dual == DualClip::BothSigns || (dual == DualClip::NegativeOnly && adv < 0.0);
    const double r_eff = capped ? std::min(r, r_max) : r;
    const double straight = r_eff * adv;
    const double clamped = std::clamp(r_eff, bounds.lower, bounds.upper) * adv;

    ClippedTerm out;
    out.value = std::min(straight, clamped);
    if (adv > 0.0) {
        out.clipped = r_eff >= bounds.upper;
    } else if (adv < 0.0) {
        out.clipped = r_eff <= bounds.lower || (capped && r >= r_max);
    } else {
        out.clipped = false;
    }
    out.dlogp = out.clipped ? 0.0 : adv * r_eff;
    return out;
}

double kl_penalty(std::span<const double> logp_new, std::span<const double> logp_ref) {
    if (logp_new.size() != logp_ref.size())
        throw std::invalid_argument("kl_penalty requires matching shapes");
    if (logp_new.empty()) throw std::invalid_argument("kl_penalty requires at least one token");
    double acc = 0.0;
    for (std::size_t t = 0; t < logp_new.size(); ++t) {
        if (!std::isfinite(logp_new[t]) || !std::isfinite(logp_ref[t]))
            throw std::domain_error("non-finite log-probability");
        const double u = logp_ref[t] - logp_new[t];
        acc += std::exp(u) - u - 1.0;
    }
    return acc / static_cast<double>(logp_new.size());
}

namespace {

// Shared token-level walk. divisor(group, response) supplies the aggregation
// divisor of a response: its token sum enters the objective as sum/divisor,
// a single division so the worked-example contributions stay exact.
template <typename DivisorFn>
SurrogateResult token_level_loss(std::span<const RolloutGroup> groups, const ClipConfig& cfg,
                                 DualClip dual, double beta, DivisorFn divisor) {
    SurrogateResult res;
    res.terms.resize(groups.size());
    const bool use_kl = beta > 0.0;

    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& group = groups[g];
        res.terms[g].resize(group.responses.size());
        for (std::size_t j = 0; j < group.responses.size(); ++j) {
            const Response& resp = group.responses[j];
            check_response(resp, use_kl);
            const std::size_t len = resp.length();
            const double div = divisor(group, resp);
            const double w = 1.0 / div;

            ResponseTerms& terms = res.terms[g][j];
            terms.clipped.assign(len, 0);
            terms.dlogp.assign(len, 0.0);

            double sum_terms = 0.0;
            double sum_kl = 0.0;
            std::size_t clipped_here = 0;
            for (std::size_t t = 0; t < len; ++t) {
                const double r = checked_ratio(resp.logp_new[t], resp.logp_old[t]);
                const ClipBounds b = bounds_for_token(cfg, std::exp(resp.logp_old[t]));
                const ClippedTerm ct = clipped_term(r, resp.advantage, b, cfg.r_max, dual);
                sum_terms += ct.value;
                terms.clipped[t] = ct.clipped ? 1 : 0;
                terms.dlogp[t] = w * ct.dlogp;
                if (ct.clipped) {
                    ++res.clipped_tokens;
                    ++clipped_here;
                }
                if (use_kl) {
                    const double u = resp.logp_ref[t] - resp.logp_new[t];
                    sum_kl += std::exp(u) - u - 1.0;
                    terms.dlogp[t] += beta * w * (std::exp(u) - 1.0);
                }
            }
            if (clipped_here == len) ++res.clipped_responses;
            res.total_tokens += static_cast<std::int64_t>(len);
            terms.contribution = (sum_terms - beta * sum_kl) / div;
            res.objective += terms.contribution;
        }
    }
    return res;
}

}  // namespace

SurrogateResult loss_grpo(std::span<const RolloutGroup> groups, const ClipConfig& cfg,
                          double beta) {
    if (cfg.mode != ClipMode::FixedSymmetric)
        throw std::invalid_argument("loss_grpo requires FixedSymmetric clipping");
    if (groups.empty()) throw std::logic_error("loss_grpo requires a non-empty batch");
    const double n_groups = static_cast<double>(groups.size());
    return token_level_loss(groups, cfg, DualClip::None, beta,
                            [n_groups](const RolloutGroup& g, const Response& r) {
                                return static_cast<double>(r.length()) *
                                       static_cast<double>(g.responses.size()) * n_groups;
                            });
}

SurrogateResult loss_dapo(std::span<const RolloutGroup> groups, const ClipConfig& cfg) {
    if (cfg.mode != ClipMode::FixedAsymmetric)
        throw std::invalid_argument("loss_dapo requires FixedAsymmetric clipping");
    if (groups.empty())
        throw std::logic_error("loss_dapo requires a non-empty batch (refill after filtering)");
    std::int64_t total = 0;
    for (const auto& g : groups)
        for (const auto& r : g.responses) total += static_cast<std::int64_t>(r.length());
    const double total_tokens = static_cast<double>(total);
    return token_level_loss(groups, cfg, DualClip::NegativeOnly, 0.0,
                            [total_tokens](const RolloutGroup&, const Response&) {
                                return total_tokens;
                            });
}

SurrogateResult loss_gspo(std::span<const RolloutGroup> groups, const ClipConfig& cfg) {
    if (cfg.mode != ClipMode::SequenceLevel)
        throw std::invalid_argument("loss_gspo requires SequenceLevel clipping");
    if (groups.empty()) throw std::logic_error("loss_gspo requires a non-empty batch");

    const ClipBounds bounds{1.0 - cfg.eps_low, 1.0 + cfg.eps_high};
    const double inv_groups = 1.0 / static_cast<double>(groups.size());

    SurrogateResult res;
    res.terms.resize(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& group = groups[g];
        res.terms[g].resize(group.responses.size());
        const double inv_g = 1.0 / static_cast<double>(group.responses.size());
        for (std::size_t j = 0; j < group.responses.size(); ++j) {
            const Response& resp = group.responses[j];
            check_response(resp, false);
            const std::size_t len = resp.length();
            const double s = sequence_ratio(resp.logp_new, resp.logp_old);
            const ClippedTerm ct =
                clipped_term(s, resp.advantage, bounds, cfg.r_max, DualClip::None);

            ResponseTerms& terms = res.terms[g][j];
            terms.clipped.assign(len, ct.clipped ? 1 : 0);
            terms.dlogp.assign(len, 0.0);
            if (!ct.clipped) {
                // d s / d logp_t = s / |o|; same live coefficient at every token.
                const double coeff =
                    inv_groups * inv_g * resp.advantage * s / static_cast<double>(len);
                std::fill(terms.dlogp.begin(), terms.dlogp.end(), coeff);
            } else {
                res.clipped_tokens += static_cast<std::int64_t>(len);
                ++res.clipped_responses;
            }
            res.total_tokens += static_cast<std::int64_t>(len);
            terms.contribution = ct.value * inv_g * inv_groups;
            res.objective += terms.contribution;
        }
    }
    return res;
}

SurrogateResult loss_dcpo(std::span<const RolloutGroup> groups, const ClipConfig& cfg) {
    if (cfg.mode == ClipMode::SequenceLevel)
        throw std::invalid_argument("loss_dcpo requires token-level clipping bounds");
    if (groups.empty()) throw std::logic_error("loss_dcpo requires a non-empty batch");
    return token_level_loss(groups, cfg, DualClip::BothSigns, 0.0,
                            [](const RolloutGroup&, const Response& r) {
                                return static_cast<double>(r.length());
                            });
}

SurrogateResult eval_loss(LossMode mode, std::span<const RolloutGroup> groups,
                          const ClipConfig& cfg, double beta) {
    switch (mode) {
        case LossMode::Grpo: return loss_grpo(groups, cfg, beta);
        case LossMode::Dapo: return loss_dapo(groups, cfg);
        case LossMode::Gspo: return loss_gspo(groups, cfg);
        case LossMode::Dcpo: return loss_dcpo(groups, cfg);
    }
    throw std::invalid_argument("unknown loss mode");
}

}  // namespace dcpo
