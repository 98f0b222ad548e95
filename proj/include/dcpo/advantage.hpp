#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace dcpo {

// Running per-prompt reward aggregates. `i` counts how many groups this
// prompt has generated so far; old/new split lets pooled statistics be
// recovered without retaining raw reward history. All variances are
// population variances (divide by the count).
struct PromptStats {
    std::uint64_t prompt_id = 0;
    std::int64_t i = 0;        // occurrence count; 0 means no group recorded
    double mu_new = 0.0;       // mean reward of the latest group
    double sigma_new = 0.0;    // population std of the latest group
    double mu_old = 0.0;       // mean over groups 1..i-1
    double sigma_old = 0.0;    // population std over groups 1..i-1
    std::int64_t n_old = 0;    // reward count behind mu_old/sigma_old, G*(i-1)
};

// Per-response advantage pipeline output for one group.
struct AdvantageBundle {
    std::vector<double> a_new;        // step-standardized
    std::vector<double> a_total;      // cumulative-standardized
    std::vector<double> sa_new;       // smoothed toward the current step
    std::vector<double> sa_total;     // smoothed toward the cumulative statistics
    std::vector<double> selected;     // smaller-|.| smoothed candidate (tie -> sa_total)
    std::vector<std::uint8_t> nonzero;  // |selected| > 0
};

// (R_j - mu)/sigma with population sigma over the group; all zeros when the
// group is degenerate (sigma == 0). Requires G >= 2.
std::vector<double> step_standardize(std::span<const double> rewards);

// Absorbs one more group into the running statistics. The previous pooled
// statistics become the new old-side; no raw history is retained.
PromptStats update_stats(const PromptStats& stats, std::span<const double> rewards);

// Pooled (mu_total, sigma_total):
//   mu_total    = (mu_new + (i-1)*mu_old) / i
//   sigma_total = sqrt((sigma_new^2 + (i-1)*sigma_old^2
//                       + ((i-1)/i)*(mu_old - mu_new)^2) / i)
// Requires i >= 1.
std::pair<double, double> pooled_total(const PromptStats& stats);

// (R_j - mu_total)/sigma_total. `stats` must already include this group
// (i >= 1); zeros when sigma_total == 0.
std::vector<double> cumulative_standardize(std::span<const double> rewards,
                                           const PromptStats& stats);

// Convex blends of the two standardizations,
//   sa_new   = ((i-1)*a_new + a_total) / i
//   sa_total = (a_new + (i-1)*a_total) / i
// with the final advantage the candidate of smaller absolute value
// (ties select sa_total).
AdvantageBundle smooth_and_select(std::span<const double> a_new,
                                  std::span<const double> a_total,
                                  std::int64_t i);

}  // namespace dcpo
