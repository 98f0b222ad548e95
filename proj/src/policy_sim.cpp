#include "dcpo/policy_sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dcpo {

std::vector<double>& GradientTable::row(std::uint64_t key, int vocab_size) {
    auto& r = rows[key];
    if (r.empty()) r.assign(static_cast<std::size_t>(vocab_size), 0.0);
    return r;
}

double GradientTable::at(std::uint64_t key, int token) const {
    const auto it = rows.find(key);
    if (it == rows.end()) return 0.0;
    return it->second[static_cast<std::size_t>(token)];
}

TabularPolicy::TabularPolicy(PolicyConfig cfg) : cfg_(cfg) {
    if (cfg_.vocab_size < 2) throw std::invalid_argument("vocab size must be at least 2");
    if (cfg_.context_order < 1) throw std::invalid_argument("context order must be at least 1");
    if (cfg_.max_len < 1) throw std::invalid_argument("max length must be at least 1");
    base_ = 1;
    for (int i = 1; i < cfg_.context_order; ++i)
        base_ *= static_cast<std::uint64_t>(cfg_.vocab_size + 1);
}

std::uint64_t TabularPolicy::context_key(std::span<const int> history) const {
    const auto radix = static_cast<std::uint64_t>(cfg_.vocab_size + 1);
    std::uint64_t key = 0;
    const int k = cfg_.context_order;
    for (int j = 0; j < k; ++j) {
        const std::int64_t idx = static_cast<std::int64_t>(history.size()) - k + j;
        const int tok = idx >= 0 ? history[static_cast<std::size_t>(idx)] : pad_token();
        key = key * radix + static_cast<std::uint64_t>(tok);
    }
    return key;
}

std::uint64_t TabularPolicy::shift_key(std::uint64_t key, int token) const {
    const auto radix = static_cast<std::uint64_t>(cfg_.vocab_size + 1);
    return (key % base_) * radix + static_cast<std::uint64_t>(token);
}

std::uint64_t TabularPolicy::initial_key() const {
    return context_key(std::span<const int>{});
}

std::vector<double> TabularPolicy::log_softmax_row(std::uint64_t key) const {
    const auto v = static_cast<std::size_t>(cfg_.vocab_size);
    const auto it = logits_.find(key);
    if (it == logits_.end())
        return std::vector<double>(v, -std::log(static_cast<double>(cfg_.vocab_size)));
    const auto& row = it->second;
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double x : row) z += std::exp(x - mx);
    const double log_z = mx + std::log(z);
    std::vector<double> out(v);
    for (std::size_t i = 0; i < v; ++i) out[i] = row[i] - log_z;
    return out;
}

std::vector<double> TabularPolicy::softmax_row(std::uint64_t key) const {
    std::vector<double> out = log_softmax_row(key);
    for (double& x : out) x = std::exp(x);
    return out;
}

double TabularPolicy::row_entropy(std::uint64_t key) const {
    const std::vector<double> lp = log_softmax_row(key);
    double h = 0.0;
    for (double x : lp) {
        const double p = std::exp(x);
        if (p > 0.0) h -= p * x;
    }
    return h;
}

std::vector<double>& TabularPolicy::logits_row(std::uint64_t key) {
    auto& row = logits_[key];
    if (row.empty()) row.assign(static_cast<std::size_t>(cfg_.vocab_size), 0.0);
    return row;
}

const std::vector<double>* TabularPolicy::find_row(std::uint64_t key) const {
    const auto it = logits_.find(key);
    return it == logits_.end() ? nullptr : &it->second;
}

void TabularPolicy::add_uniform_noise(double scale, std::uint64_t seed) {
    if (scale == 0.0) return;
    std::uint64_t n_keys = 1;
    for (int i = 0; i < cfg_.context_order; ++i) {
        n_keys *= static_cast<std::uint64_t>(cfg_.vocab_size + 1);
        if (n_keys > 200000)
            throw std::invalid_argument("context space too large for dense perturbation");
    }
    Rng rng(mix_seed(seed, 0x1717ULL));
    for (std::uint64_t key = 0; key < n_keys; ++key) {
        auto& row = logits_row(key);
        for (double& x : row) x += rng.uniform(-scale, scale);
    }
}

void TabularPolicy::apply_gradient(const GradientTable& grad, double step_size) {
    for (const auto& [key, g] : grad.rows) {
        auto& row = logits_row(key);
        for (std::size_t v = 0; v < row.size(); ++v) row[v] += step_size * g[v];
    }
}

void TabularPolicy::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open policy checkpoint for writing: " + path.string());
    out << "dcpo-policy v1\n";
    out << cfg_.vocab_size << ' ' << cfg_.context_order << ' ' << cfg_.max_len << '\n';
    std::vector<std::uint64_t> keys;
    keys.reserve(logits_.size());
    for (const auto& [key, row] : logits_) keys.push_back(key);
    std::sort(keys.begin(), keys.end());
    out << keys.size() << '\n';
    char buf[32];
    for (std::uint64_t key : keys) {
        out << key;
        for (double x : logits_.at(key)) {
            std::snprintf(buf, sizeof(buf), "%.17g", x);
            out << ' ' << buf;
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("failed writing policy checkpoint: " + path.string());
}

TabularPolicy TabularPolicy::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open policy checkpoint: " + path.string());
    std::string header;
    std::getline(in, header);
    if (header != "dcpo-policy v1")
        throw std::runtime_error("unsupported policy checkpoint header: " + header);
    PolicyConfig cfg;
    std::size_t n_rows = 0;
    if (!(in >> cfg.vocab_size >> cfg.context_order >> cfg.max_len >> n_rows))
        throw std::runtime_error("malformed policy checkpoint: " + path.string());
    TabularPolicy policy(cfg);
    for (std::size_t i = 0; i < n_rows; ++i) {
        std::uint64_t key;
        if (!(in >> key)) throw std::runtime_error("truncated policy checkpoint");
        auto& row = policy.logits_row(key);
        for (double& x : row) {
            if (!(in >> x)) throw std::runtime_error("truncated policy checkpoint row");
        }
    }
    return policy;
}

namespace {

// Distribution actually used for sampling, after temperature and top-p.
// Token ids of the nucleus are returned with their renormalized
// probabilities in descending-probability order (ties by token id).
struct SampleDist {
    std::vector<int> ids;
    std::vector<double> probs;
};

SampleDist sampling_distribution(const TabularPolicy& policy, std::uint64_t key,
                                 double temperature, double top_p) {
    const int v = policy.vocab_size();
    std::vector<double> probs;
    if (temperature == 1.0) {
        probs = policy.softmax_row(key);
    } else {
        std::vector<double> scaled(static_cast<std::size_t>(v), 0.0);
        if (const auto* row = policy.find_row(key)) {
            for (int i = 0; i < v; ++i) scaled[static_cast<std::size_t>(i)] = (*row)[static_cast<std::size_t>(i)] / temperature;
        }
        const double mx = *std::max_element(scaled.begin(), scaled.end());
        double z = 0.0;
        for (double x : scaled) z += std::exp(x - mx);
        probs.resize(static_cast<std::size_t>(v));
        for (int i = 0; i < v; ++i)
            probs[static_cast<std::size_t>(i)] = std::exp(scaled[static_cast<std::size_t>(i)] - mx) / z;
    }

    SampleDist dist;
    dist.ids.resize(static_cast<std::size_t>(v));
    std::iota(dist.ids.begin(), dist.ids.end(), 0);
    std::sort(dist.ids.begin(), dist.ids.end(), [&probs](int a, int b) {
        const double pa = probs[static_cast<std::size_t>(a)];
        const double pb = probs[static_cast<std::size_t>(b)];
        if (pa != pb) return pa > pb;
        return a < b;
    });
    double cum = 0.0;
    std::size_t kept = 0;
    for (; kept < dist.ids.size(); ++kept) {
        cum += probs[static_cast<std::size_t>(dist.ids[kept])];
        if (cum >= top_p) {
            ++kept;
            break;
        }
    }
    kept = std::max<std::size_t>(kept, 1);
    dist.ids.resize(kept);
    dist.probs.resize(kept);
    for (std::size_t i = 0; i < kept; ++i)
        dist.probs[i] = probs[static_cast<std::size_t>(dist.ids[i])] / cum;
    return dist;
}

int draw(const SampleDist& dist, Rng& rng) {
    const double u = rng.uniform();
    double cum = 0.0;
    for (std::size_t i = 0; i < dist.ids.size(); ++i) {
        cum += dist.probs[i];
        if (u < cum) return dist.ids[i];
    }
    return dist.ids.back();
}

}  // namespace

std::vector<Response> sample_group(const TabularPolicy& policy, std::span<const int> prompt,
                                   int group_size, double temperature, double top_p,
                                   std::uint64_t seed) {
    if (group_size < 1) throw std::invalid_argument("group size must be at least 1");
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    if (!(top_p > 0.0) || top_p > 1.0) throw std::invalid_argument("top_p must lie in (0, 1]");

    const bool plain = temperature == 1.0 && top_p == 1.0;
    std::vector<Response> out;
    out.reserve(static_cast<std::size_t>(group_size));
    Rng rng(seed);
    for (int j = 0; j < group_size; ++j) {
        Response resp;
        std::uint64_t key = policy.context_key(prompt);
        for (int t = 0; t < policy.config().max_len; ++t) {
            int tok;
            if (plain) {
                const std::vector<double> probs = policy.softmax_row(key);
                const double u = rng.uniform();
                double cum = 0.0;
                tok = policy.vocab_size() - 1;
                for (int i = 0; i < policy.vocab_size(); ++i) {
                    cum += probs[static_cast<std::size_t>(i)];
                    if (u < cum) {
                        tok = i;
                        break;
                    }
                }
            } else {
                tok = draw(sampling_distribution(policy, key, temperature, top_p), rng);
            }
            resp.tokens.push_back(tok);
            resp.ctx_keys.push_back(key);
            resp.logp_old.push_back(policy.log_softmax_row(key)[static_cast<std::size_t>(tok)]);
            key = policy.shift_key(key, tok);
            if (tok == 0) break;  // end token
        }
        out.push_back(std::move(resp));
    }
    return out;
}

std::vector<int> greedy_decode(const TabularPolicy& policy, std::span<const int> prompt) {
    std::vector<int> tokens;
    std::uint64_t key = policy.context_key(prompt);
    for (int t = 0; t < policy.config().max_len; ++t) {
        const std::vector<double> lp = policy.log_softmax_row(key);
        const int tok = static_cast<int>(
            std::max_element(lp.begin(), lp.end()) - lp.begin());
        tokens.push_back(tok);
        key = policy.shift_key(key, tok);
        if (tok == 0) break;
    }
    return tokens;
}

std::vector<double> logprob_of(const TabularPolicy& policy, std::span<const int> prompt,
                               std::span<const int> response) {
    std::vector<double> out;
    out.reserve(response.size());
    std::uint64_t key = policy.context_key(prompt);
    for (int tok : response) {
        if (tok < 0 || tok >= policy.vocab_size())
            throw std::domain_error("token outside the policy vocabulary");
        out.push_back(policy.log_softmax_row(key)[static_cast<std::size_t>(tok)]);
        key = policy.shift_key(key, tok);
    }
    return out;
}

double batch_entropy(const TabularPolicy& policy, std::span<const RolloutGroup> groups) {
    std::unordered_map<std::uint64_t, std::int64_t> visits;
    std::int64_t total = 0;
    for (const auto& group : groups) {
        for (const auto& resp : group.responses) {
            for (std::uint64_t key : resp.ctx_keys) {
                ++visits[key];
                ++total;
            }
        }
    }
    if (total == 0) throw std::logic_error("batch_entropy requires a non-empty batch");

    std::vector<std::uint64_t> keys;
    keys.reserve(visits.size());
    for (const auto& [key, count] : visits) keys.push_back(key);
    std::sort(keys.begin(), keys.end());

    double h = 0.0;
    for (std::uint64_t key : keys)
        h += static_cast<double>(visits[key]) * policy.row_entropy(key);
    return h / static_cast<double>(total);
}

void fill_logp_new(const TabularPolicy& policy, std::span<RolloutGroup> groups) {
    for (auto& group : groups) {
        for (auto& resp : group.responses) {
            if (resp.ctx_keys.size() != resp.tokens.size()) {
                resp.ctx_keys.clear();
                resp.ctx_keys.reserve(resp.tokens.size());
                std::uint64_t key = policy.context_key(group.prompt);
                for (int tok : resp.tokens) {
                    resp.ctx_keys.push_back(key);
                    key = policy.shift_key(key, tok);
                }
            }
            resp.logp_new.resize(resp.tokens.size());
            for (std::size_t t = 0; t < resp.tokens.size(); ++t) {
                const int tok = resp.tokens[t];
                if (tok < 0 || tok >= policy.vocab_size())
                    throw std::domain_error("token outside the policy vocabulary");
                resp.logp_new[t] =
                    policy.log_softmax_row(resp.ctx_keys[t])[static_cast<std::size_t>(tok)];
            }
        }
    }
}

GradResult surrogate_grad(const TabularPolicy& policy, std::span<RolloutGroup> groups,
                          LossMode mode, const ClipConfig& cfg, double beta) {
    fill_logp_new(policy, groups);
    GradResult out;
    out.surrogate = eval_loss(mode, {groups.data(), groups.size()}, cfg, beta);

    // Softmax rows are reused across tokens sharing a context.
    std::unordered_map<std::uint64_t, std::vector<double>> soft_cache;
    auto probs_of = [&](std::uint64_t key) -> const std::vector<double>& {
        auto it = soft_cache.find(key);
        if (it == soft_cache.end())
            it = soft_cache.emplace(key, policy.softmax_row(key)).first;
        return it->second;
    };

    for (std::size_t g = 0; g < groups.size(); ++g) {
        for (std::size_t j = 0; j < groups[g].responses.size(); ++j) {
            const Response& resp = groups[g].responses[j];
            const ResponseTerms& terms = out.surrogate.terms[g][j];
            for (std::size_t t = 0; t < resp.tokens.size(); ++t) {
                const double coeff = terms.dlogp[t];
                if (coeff == 0.0) continue;
                const std::uint64_t key = resp.ctx_keys[t];
                const std::vector<double>& p = probs_of(key);
                auto& row = out.grad.row(key, policy.vocab_size());
                for (std::size_t v = 0; v < p.size(); ++v) row[v] -= coeff * p[v];
                row[static_cast<std::size_t>(resp.tokens[t])] += coeff;
            }
        }
    }
    return out;
}

double eval_objective(const TabularPolicy& policy, std::span<const RolloutGroup> groups,
                      LossMode mode, const ClipConfig& cfg, double beta) {
    std::vector<RolloutGroup> scratch(groups.begin(), groups.end());
    fill_logp_new(policy, scratch);
    return eval_loss(mode, scratch, cfg, beta).objective;
}

double fd_check(const TabularPolicy& policy, std::span<RolloutGroup> groups, LossMode mode,
                const ClipConfig& cfg, double beta, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
    const GradResult analytic = surrogate_grad(policy, groups, mode, cfg, beta);

    std::vector<std::uint64_t> keys;
    {
        std::unordered_map<std::uint64_t, bool> seen;
        for (const auto& group : groups)
            for (const auto& resp : group.responses)
                for (std::uint64_t key : resp.ctx_keys)
                    if (!seen[key]) {
                        seen[key] = true;
                        keys.push_back(key);
                    }
    }
    std::sort(keys.begin(), keys.end());

    TabularPolicy probe = policy;
    double max_rel = 0.0;
    for (std::uint64_t key : keys) {
        auto& row = probe.logits_row(key);
        for (int v = 0; v < probe.vocab_size(); ++v) {
            const double saved = row[static_cast<std::size_t>(v)];
            row[static_cast<std::size_t>(v)] = saved + h;
            const double f_plus = eval_objective(probe, {groups.data(), groups.size()}, mode, cfg, beta);
            row[static_cast<std::size_t>(v)] = saved - h;
            const double f_minus = eval_objective(probe, {groups.data(), groups.size()}, mode, cfg, beta);
            row[static_cast<std::size_t>(v)] = saved;

            const double fd = (f_plus - f_minus) / (2.0 * h);
            const double an = analytic.grad.at(key, v);
            const double scale = std::max({std::abs(fd), std::abs(an), 1e-6});
            max_rel = std::max(max_rel, std::abs(fd - an) / scale);
        }
    }
    return max_rel;
}

}  // namespace dcpo
