// Acceptance suite: one labelled pass/fail line per criterion.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "dcpo/advantage.hpp"
#include "dcpo/clipping.hpp"
#include "dcpo/policy_sim.hpp"
#include "dcpo/rng.hpp"
#include "dcpo/surrogate.hpp"
#include "dcpo/trainer.hpp"

using namespace dcpo;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

void report(int index, const char* name, bool ok, const std::string& detail = "") {
    std::printf("[criterion %02d] %-28s %s%s%s\n", index, name, ok ? "PASS" : "FAIL",
                detail.empty() ? "" : "  -- ", detail.c_str());
    std::fflush(stdout);
    CHECK(ok);
}

}  // namespace

TEST_CASE("criterion 1: threshold calibration") {
    const auto start = Clock::now();
    bool ok = true;

    const auto [lo, hi] = calibrate_thresholds(0.2);
    ok &= std::abs(lo - 0.16) <= 1e-12;
    ok &= std::abs(hi - 0.2) <= 1e-12;

    for (double eps : {0.05, 0.1, 0.3}) {
        const auto [el, eh] = calibrate_thresholds(eps);
        const ClipConfig cfg = ClipConfig::dynamic_adaptive(el, eh);
        ok &= std::abs(dynamic_bounds(1.0, cfg).lower - (1.0 - eps)) <= 1e-9;
        ok &= std::abs(dynamic_bounds(1.0 / (1.0 + eps), cfg).upper - (1.0 + eps)) <= 1e-9;
    }

    const double elapsed = seconds_since(start);
    ok &= elapsed < 1.0;
    report(1, "threshold calibration", ok, "runtime " + std::to_string(elapsed) + " s");
}

TEST_CASE("criterion 2: bound anchors and regimes") {
    bool ok = true;
    const ClipConfig cfg = ClipConfig::dynamic_adaptive(0.16, 0.2, 10.0);

    ok &= std::abs(dynamic_bounds(1.0, cfg).lower - 0.8) <= 1e-9;
    ok &= std::abs(dynamic_bounds(1.0 / 1.2, cfg).upper - 1.2) <= 1e-9;
    for (double q : {0.64, 0.5, 0.3, 0.1, 0.01, 1e-3})
        ok &= std::abs(dynamic_bounds(q, cfg).lower - 0.5) <= 1e-9;

    const double q_star = 4.0 * 0.2 / ((2.0 * 10.0 - 1.0) * (2.0 * 10.0 - 1.0) - 1.0);
    ok &= std::abs(q_star - 2.222e-3) < 1e-5;  // the ceiling regime boundary
    ok &= std::abs(dynamic_bounds(q_star, cfg).upper - 10.0) <= 1e-9;
    ok &= dynamic_bounds(q_star * 0.9, cfg).upper == 10.0;
    ok &= dynamic_bounds(q_star * 1.1, cfg).upper < 10.0;

    Rng rng(0xACCE55);
    for (int trial = 0; trial < 10000 && ok; ++trial) {
        const double eps = 0.01 + 0.48 * rng.uniform();
        const auto [el, eh] = calibrate_thresholds(eps);
        const ClipConfig c = ClipConfig::dynamic_adaptive(el, eh, 10.0);
        const double qa = 1e-5 + (1.0 - 1e-5) * rng.uniform();
        const double qb = 1e-5 + (1.0 - 1e-5) * rng.uniform();
        const double q_lo = std::min(qa, qb);
        const double q_hi = std::max(qa, qb);
        const ClipBounds blo = dynamic_bounds(q_lo, c);
        const ClipBounds bhi = dynamic_bounds(q_hi, c);
        ok &= blo.upper >= bhi.upper;                 // upper non-increasing in q
        ok &= blo.lower <= bhi.lower;                 // lower non-decreasing in q
        ok &= blo.lower <= blo.upper;
        ok &= blo.upper <= c.r_max;
        // probability-weighted slack where neither clamp binds
        if (bhi.upper < c.r_max)
            ok &= std::abs((bhi.upper - 1.0) * bhi.upper * q_hi - eh) <= 1e-9;
        if (q_hi > 4.0 * el)
            ok &= std::abs((bhi.lower - 1.0) * bhi.lower * q_hi + el) <= 1e-9;
    }
    report(2, "bound anchors and regimes", ok);
}

TEST_CASE("criterion 3: pooled-statistics oracle") {
    Rng rng(0x57A75);
    bool ok = true;
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t g = 2 + rng.uniform_int(15);
        const int occurrences = 1 + static_cast<int>(rng.uniform_int(50));
        PromptStats stats;
        std::vector<double> history;
        for (int k = 0; k < occurrences; ++k) {
            std::vector<double> rewards(g);
            for (double& r : rewards) r = static_cast<double>(rng.uniform_int(3)) - 1.0;
            stats = update_stats(stats, rewards);
            history.insert(history.end(), rewards.begin(), rewards.end());
        }
        // brute-force oracle over the concatenated history
        double mean = 0.0;
        for (double r : history) mean += r;
        mean /= static_cast<double>(history.size());
        double var = 0.0;
        for (double r : history) var += (r - mean) * (r - mean);
        var /= static_cast<double>(history.size());
        const double sigma = std::sqrt(var);

        const auto [mu_total, sigma_total] = pooled_total(stats);
        const double mu_err = std::abs(mu_total - mean) / std::max(1.0, std::abs(mean));
        const double sig_err = std::abs(sigma_total - sigma) / std::max(1.0, sigma);
        worst = std::max({worst, mu_err, sig_err});
        ok &= mu_err <= 1e-9 && sig_err <= 1e-9;
    }
    std::ostringstream detail;
    detail << "max rel err " << worst;
    report(3, "pooled-statistics oracle", ok, detail.str());
}

TEST_CASE("criterion 4: SAS zero-recovery") {
    bool ok = true;
    Rng rng(0x5A5);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t g = 2 + rng.uniform_int(15);
        const int occurrences = 2 + static_cast<int>(rng.uniform_int(20));
        PromptStats stats;
        std::vector<double> group(g);
        for (int k = 0; k < occurrences - 1; ++k) {
            for (double& r : group) r = static_cast<double>(rng.uniform_int(3)) - 1.0;
            stats = update_stats(stats, group);
        }
        // final group with identical rewards: sigma_new = 0
        const double c = static_cast<double>(rng.uniform_int(3)) - 1.0;
        for (double& r : group) r = c;
        stats = update_stats(stats, group);

        const std::vector<double> a_new = step_standardize(group);
        const std::vector<double> a_total = cumulative_standardize(group, stats);
        const AdvantageBundle b = smooth_and_select(a_new, a_total, stats.i);
        const double inv_i = 1.0 / static_cast<double>(stats.i);
        for (std::size_t j = 0; j < group.size(); ++j) {
            ok &= a_new[j] == 0.0;
            ok &= b.selected[j] == inv_i * a_total[j];  // exact equality
        }
    }
    report(4, "SAS zero-recovery", ok);
}

TEST_CASE("criterion 5: TLM/OTM worked example") {
    Response a;
    a.tokens.assign(500, 2);
    a.logp_old.assign(500, std::log(0.5));
    a.logp_new = a.logp_old;
    a.advantage = 1.0;
    Response b;
    b.tokens.assign(1500, 2);
    b.logp_old.assign(1500, std::log(0.5));
    b.logp_new = b.logp_old;
    b.advantage = 0.5;
    RolloutGroup group;
    group.responses = {a, b};
    std::vector<RolloutGroup> batch{group};

    const SurrogateResult dapo = loss_dapo(batch, ClipConfig::fixed_asymmetric(0.2, 0.28));
    const SurrogateResult dcpo = loss_dcpo(batch, ClipConfig::dynamic_adaptive(0.16, 0.2));

    const bool ok = dapo.terms[0][0].contribution == 0.25 &&
                    dapo.terms[0][1].contribution == 0.375 && dapo.objective == 0.625 &&
                    dcpo.terms[0][0].contribution == 1.0 &&
                    dcpo.terms[0][1].contribution == 0.5 && dcpo.objective == 1.5;
    report(5, "TLM/OTM worked example", ok);
}

namespace {

struct GradInstance {
    TabularPolicy policy;
    std::vector<RolloutGroup> groups;
};

GradInstance random_grad_instance(std::uint64_t seed) {
    const PolicyConfig pc{5, 1, 6};
    TabularPolicy old_policy(pc);
    old_policy.add_uniform_noise(1.0, mix_seed(seed, 1));
    TabularPolicy new_policy = old_policy;
    new_policy.add_uniform_noise(0.35, mix_seed(seed, 2));

    Rng rng(mix_seed(seed, 3));
    std::vector<RolloutGroup> groups;
    const int n_groups = 1 + static_cast<int>(rng.uniform_int(2));
    for (int g = 0; g < n_groups; ++g) {
        RolloutGroup group;
        group.prompt = {static_cast<int>(rng.uniform_int(5)),
                        static_cast<int>(rng.uniform_int(5))};
        group.responses = sample_group(old_policy, group.prompt, 4, 1.0, 1.0,
                                       mix_seed(seed, 4, static_cast<std::uint64_t>(g)));
        std::vector<double> rewards(group.responses.size());
        for (double& r : rewards) r = static_cast<double>(rng.uniform_int(3)) - 1.0;
        const std::vector<double> adv = step_standardize(rewards);
        for (std::size_t j = 0; j < group.responses.size(); ++j)
            group.responses[j].advantage = adv[j];
        groups.push_back(std::move(group));
    }
    return {std::move(new_policy), std::move(groups)};
}

double instance_boundary_distance(const TabularPolicy& policy,
                                  std::vector<RolloutGroup>& groups, LossMode mode,
                                  const ClipConfig& cfg) {
    fill_logp_new(policy, groups);
    double dist = 1e9;
    for (const auto& group : groups) {
        for (const auto& resp : group.responses) {
            if (mode == LossMode::Gspo) {
                const double s = sequence_ratio(resp.logp_new, resp.logp_old);
                dist = std::min({dist, std::abs(s - (1.0 - cfg.eps_low)),
                                 std::abs(s - (1.0 + cfg.eps_high))});
                continue;
            }
            for (std::size_t t = 0; t < resp.tokens.size(); ++t) {
                const double r = std::exp(resp.logp_new[t] - resp.logp_old[t]);
                const ClipBounds b = bounds_for_token(cfg, std::exp(resp.logp_old[t]));
                dist = std::min({dist, std::abs(r - b.lower), std::abs(r - b.upper),
                                 std::abs(r - cfg.r_max)});
            }
        }
    }
    return dist;
}

}  // namespace

TEST_CASE("criterion 6: gradient oracle") {
    const auto start = Clock::now();
    const struct {
        LossMode mode;
        ClipConfig cfg;
        double beta;
    } cases[] = {
        {LossMode::Grpo, ClipConfig::fixed_symmetric(0.2), 0.0},
        {LossMode::Dapo, ClipConfig::fixed_asymmetric(0.2, 0.28), 0.0},
        {LossMode::Gspo, ClipConfig::sequence_level(0.2, 0.3), 0.0},
        {LossMode::Dcpo, ClipConfig::dynamic_adaptive(0.16, 0.2), 0.0},
    };

    bool ok = true;
    double worst = 0.0;
    int checked = 0;
    for (std::uint64_t c = 0; c < 4; ++c) {
        for (std::uint64_t trial = 0; checked < 4 * 30 && trial < 4000; ++trial) {
            GradInstance inst = random_grad_instance(mix_seed(0xF0D, c, trial));
            if (instance_boundary_distance(inst.policy, inst.groups, cases[c].mode,
                                           cases[c].cfg) <= 1e-3)
                continue;  // keep evaluation points away from clip boundaries
            const double err = fd_check(inst.policy, inst.groups, cases[c].mode, cases[c].cfg,
                                        cases[c].beta, 1e-5);
            worst = std::max(worst, err);
            ok &= err <= 1e-5;
            ++checked;
            if (checked % 30 == 0) break;
        }
    }
    ok &= checked >= 100;
    const double elapsed = seconds_since(start);
    ok &= elapsed < 30.0;
    std::ostringstream detail;
    detail << checked << " instances, max rel err " << worst << ", runtime " << elapsed << " s";
    report(6, "gradient oracle", ok, detail.str());
}

TEST_CASE("criterion 7: OTM/SLM identity") {
    Rng rng(0x075);
    bool ok = true;
    const ClipConfig sym = ClipConfig::fixed_symmetric(0.2);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t g_size = std::size_t{1} << (1 + rng.uniform_int(4));  // 2,4,8,16
        const std::size_t len = 1 + rng.uniform_int(8);
        RolloutGroup group;
        for (std::size_t j = 0; j < g_size; ++j) {
            Response resp;
            resp.tokens.assign(len, 2);
            resp.advantage = rng.uniform(-2.0, 2.0);
            resp.logp_old.resize(len);
            resp.logp_new.resize(len);
            for (std::size_t t = 0; t < len; ++t) {
                resp.logp_old[t] = -2.0 * rng.uniform() - 0.05;
                resp.logp_new[t] = resp.logp_old[t] + rng.uniform(-0.5, 0.5);
            }
            group.responses.push_back(std::move(resp));
        }
        std::vector<RolloutGroup> batch{group};
        const double otm = loss_dcpo(batch, sym).objective;
        const double slm = loss_grpo(batch, sym, 0.0).objective;
        ok &= otm == static_cast<double>(g_size) * slm;  // exact
    }
    report(7, "OTM/SLM identity", ok);
}

TEST_CASE("criterion 8: desk-scale directional run") {
    const auto start = Clock::now();
    const std::vector<std::uint64_t> seeds{1, 2, 3};

    struct Series {
        double rur_after_first_epoch = 0.0;
        double tcr_mean = 0.0;
    };
    auto run_series = [](Method method, std::uint64_t seed) {
        TrainConfig cfg = TrainConfig::defaults_for(method);
        cfg.seed = seed;
        RunState state = init_run_state(cfg);
        const int epoch_steps = static_cast<int>(
            (state.tasks.size() + static_cast<std::size_t>(cfg.gen_batch) - 1) /
            static_cast<std::size_t>(cfg.gen_batch));
        Series s;
        int late_steps = 0;
        for (int step = 0; step < cfg.steps; ++step) {
            const StepOutcome out = run_step(state, cfg);
            s.tcr_mean += out.report.tcr;
            if (step >= epoch_steps) {
                s.rur_after_first_epoch += out.report.rur;
                ++late_steps;
            }
        }
        s.tcr_mean /= static_cast<double>(cfg.steps);
        s.rur_after_first_epoch /= static_cast<double>(late_steps);
        return s;
    };

    double rur_grpo = 0.0, rur_dcpo = 0.0;
    double tcr_grpo = 0.0, tcr_dapo = 0.0, tcr_dcpo = 0.0;
    for (std::uint64_t seed : seeds) {
        const Series g = run_series(Method::Grpo, seed);
        const Series d = run_series(Method::Dapo, seed);
        const Series c = run_series(Method::Dcpo, seed);
        rur_grpo += g.rur_after_first_epoch / 3.0;
        rur_dcpo += c.rur_after_first_epoch / 3.0;
        tcr_grpo += g.tcr_mean / 3.0;
        tcr_dapo += d.tcr_mean / 3.0;
        tcr_dcpo += c.tcr_mean / 3.0;
    }

    const double elapsed = seconds_since(start);
    bool ok = true;
    ok &= rur_dcpo >= rur_grpo + 10.0;
    ok &= tcr_dcpo < tcr_grpo;
    ok &= tcr_dcpo < tcr_dapo;
    ok &= elapsed < 600.0;

    std::ostringstream detail;
    detail << "RUR after first epoch: dcpo " << rur_dcpo << "% vs grpo " << rur_grpo
           << "%; mean TCR: dcpo " << tcr_dcpo << " vs grpo " << tcr_grpo << ", dapo "
           << tcr_dapo << "; runtime " << elapsed << " s";
    report(8, "desk-scale directional run", ok, detail.str());
}

TEST_CASE("criterion 9: DAPO filter") {
    Rng rng(0xDA9);
    bool ok = true;
    const int g_size = 8;
    auto random_group = [&rng, g_size] {
        RolloutGroup g;
        for (int j = 0; j < g_size; ++j) {
            Response resp;
            resp.tokens = {2, 0};
            resp.logp_old = {-1.0, -1.0};
            resp.reward = static_cast<double>(rng.uniform_int(3)) - 1.0;
            g.responses.push_back(std::move(resp));
        }
        return g;
    };

    for (int trial = 0; trial < 50; ++trial) {
        std::vector<RolloutGroup> groups;
        for (int i = 0; i < 16; ++i) groups.push_back(random_group());
        std::int64_t refills = 0;
        const DapoFilterOutcome out = dapo_filter(
            std::move(groups), g_size, 16, 32, [&]() -> std::optional<RolloutGroup> {
                ++refills;
                return random_group();
            });
        for (const auto& g : out.kept) {
            int correct = 0;
            for (const auto& resp : g.responses)
                if (resp.reward == 1.0) ++correct;
            ok &= correct > 0 && correct < g_size;
        }
        ok &= out.groups_generated == 16 + refills;
        ok &= out.groups_discarded ==
              out.groups_generated - static_cast<std::int64_t>(out.kept.size());
        ok &= static_cast<int>(out.kept.size()) <= 16;
        ok &= refills <= 32;
    }
    report(9, "DAPO filter", ok);
}

TEST_CASE("criterion 10: seeded determinism") {
    namespace fs = std::filesystem;
    const fs::path root = fs::temp_directory_path() / "dcpo_acceptance_det";
    fs::remove_all(root);
    fs::create_directories(root);

    TrainConfig cfg = TrainConfig::defaults_for(Method::Dcpo);
    cfg.steps = 30;
    cfg.seed = 17;

    const fs::path dir1 = train(cfg, root);
    const fs::path dir2 = train(cfg, root);
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream buf;
        buf << in.rdbuf();
        return buf.str();
    };
    const std::string a = slurp(dir1 / "steps.csv");
    const std::string b = slurp(dir2 / "steps.csv");
    const bool ok = !a.empty() && a == b;
    fs::remove_all(root);
    report(10, "seeded determinism", ok);
}
