#include "dcpo/advantage.hpp"

#include <cmath>
#include <stdexcept>

namespace dcpo {

namespace {

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

MeanStd group_moments(std::span<const double> rewards) {
    const auto n = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    var /= n;
    return {mean, std::sqrt(var)};
}

}  // namespace

std::vector<double> step_standardize(std::span<const double> rewards) {
    if (rewards.size() < 2)
        throw std::invalid_argument("step_standardize requires a group of at least 2 rewards");
    const MeanStd m = group_moments(rewards);
    std::vector<double> adv(rewards.size(), 0.0);
    if (m.std > 0.0) {
        for (std::size_t j = 0; j < rewards.size(); ++j)
            adv[j] = (rewards[j] - m.mean) / m.std;
    }
    return adv;
}

PromptStats update_stats(const PromptStats& stats, std::span<const double> rewards) {
    if (rewards.empty())
        throw std::invalid_argument("update_stats requires a non-empty group");
    PromptStats next = stats;
    if (stats.i >= 1) {
        const auto [mu_total, sigma_total] = pooled_total(stats);
        next.mu_old = mu_total;
        next.sigma_old = sigma_total;
        next.n_old = static_cast<std::int64_t>(rewards.size()) * stats.i;
    } else {
        next.mu_old = 0.0;
        next.sigma_old = 0.0;
        next.n_old = 0;
    }
    const MeanStd m = group_moments(rewards);
    next.mu_new = m.mean;
    next.sigma_new = m.std;
    next.i = stats.i + 1;
    return next;
}

std::pair<double, double> pooled_total(const PromptStats& stats) {
    if (stats.i < 1)
        throw std::logic_error("pooled_total requires at least one recorded group");
    const auto i = static_cast<double>(stats.i);
    const double mu_total = (stats.mu_new + (i - 1.0) * stats.mu_old) / i;
    const double dmu = stats.mu_old - stats.mu_new;
    const double var_total = (stats.sigma_new * stats.sigma_new +
                              (i - 1.0) * stats.sigma_old * stats.sigma_old +
                              ((i - 1.0) / i) * dmu * dmu) /
                             i;
    return {mu_total, std::sqrt(std::max(var_total, 0.0))};
}

std::vector<double> cumulative_standardize(std::span<const double> rewards,
                                           const PromptStats& stats) {
    if (stats.i < 1)
        throw std::logic_error("cumulative_standardize requires the group to be registered");
    const auto [mu_total, sigma_total] = pooled_total(stats);
    std::vector<double> adv(rewards.size(), 0.0);
    if (sigma_total > 0.0) {
        for (std::size_t j = 0; j < rewards.size(); ++j)
            adv[j] = (rewards[j] - mu_total) / sigma_total;
    }
    return adv;
}

AdvantageBundle smooth_and_select(std::span<const double> a_new,
                                  std::span<const double> a_total,
                                  std::int64_t i) {
    if (a_new.size() != a_total.size())
        throw std::invalid_argument("smooth_and_select requires equally sized advantage lists");
    if (i < 1)
        throw std::logic_error("smooth_and_select requires occurrence index i >= 1");

    const auto fi = static_cast<double>(i);
    const double w_old = (fi - 1.0) / fi;
    const double w_cur = 1.0 / fi;

    AdvantageBundle out;
    const std::size_t n = a_new.size();
    out.a_new.assign(a_new.begin(), a_new.end());
    out.a_total.assign(a_total.begin(), a_total.end());
    out.sa_new.resize(n);
    out.sa_total.resize(n);
    out.selected.resize(n);
    out.nonzero.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        out.sa_new[j] = w_old * a_new[j] + w_cur * a_total[j];
        out.sa_total[j] = w_cur * a_new[j] + w_old * a_total[j];
        out.selected[j] = std::abs(out.sa_new[j]) < std::abs(out.sa_total[j])
                              ? out.sa_new[j]
                              : out.sa_total[j];
        out.nonzero[j] = std::abs(out.selected[j]) > 0.0 ? 1 : 0;
    }
    return out;
}

}  // namespace dcpo
