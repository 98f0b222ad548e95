#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "dcpo/rng.hpp"
#include "dcpo/surrogate.hpp"

using namespace dcpo;

namespace {

// A response with every token at the given probability ratio.
Response flat_response(std::size_t len, double ratio, double advantage, double q_old = 0.5) {
    Response r;
    r.tokens.assign(len, 2);
    r.advantage = advantage;
    r.logp_old.assign(len, std::log(q_old));
    r.logp_new.assign(len, std::log(q_old) + std::log(ratio));
    return r;
}

RolloutGroup group_of(std::vector<Response> responses) {
    RolloutGroup g;
    g.responses = std::move(responses);
    return g;
}

}  // namespace

TEST_CASE("token ratios") {
    const std::vector<double> lp{-1.0, -2.0, -0.5};
    const std::vector<double> same = token_ratios(lp, lp);
    for (double r : same) CHECK(r == doctest::Approx(1.0));

    std::vector<double> shifted = lp;
    for (double& x : shifted) x += std::log(1.5);
    for (double r : token_ratios(shifted, lp)) CHECK(r == doctest::Approx(1.5).epsilon(1e-12));

    Rng rng(3);
    std::vector<double> a(64), b(64);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = -5.0 * rng.uniform();
        b[i] = -5.0 * rng.uniform();
    }
    const std::vector<double> ratios = token_ratios(a, b);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(ratios[i] == doctest::Approx(std::exp(a[i] - b[i])).epsilon(1e-12));

    CHECK_THROWS_AS(token_ratios(std::vector<double>{-1.0, std::nan("")},
                                 std::vector<double>{-1.0, -1.0}),
                    std::domain_error);
    CHECK_THROWS_AS(token_ratios(a, std::vector<double>{-1.0}), std::invalid_argument);
}

TEST_CASE("sequence ratio is the geometric mean of token ratios") {
    const std::vector<double> lp{-1.0, -2.0};
    CHECK(sequence_ratio(lp, lp) == doctest::Approx(1.0));

    // token ratios 4 and 1 -> s = 2
    const std::vector<double> old_lp{-1.0, -1.0};
    const std::vector<double> new_lp{-1.0 + std::log(4.0), -1.0};
    CHECK(sequence_ratio(new_lp, old_lp) == doctest::Approx(2.0).epsilon(1e-12));

    const std::vector<double> single_old{-0.7};
    const std::vector<double> single_new{-0.2};
    CHECK(sequence_ratio(single_new, single_old) ==
          doctest::Approx(std::exp(0.5)).epsilon(1e-12));

    CHECK_THROWS_AS(sequence_ratio({}, {}), std::invalid_argument);
}

TEST_CASE("clipped_term branch selection") {
    const ClipBounds b{0.8, 1.2};

    ClippedTerm t = clipped_term(1.0, 1.0, b, 10.0, DualClip::None);
    CHECK(t.value == doctest::Approx(1.0));
    CHECK_FALSE(t.clipped);

    t = clipped_term(1.5, 1.0, b, 10.0, DualClip::None);
    CHECK(t.value == doctest::Approx(1.2));
    CHECK(t.clipped);
    CHECK(t.dlogp == 0.0);

    t = clipped_term(0.5, -1.0, b, 10.0, DualClip::None);
    CHECK(t.value == doctest::Approx(-0.8));
    CHECK(t.clipped);

    // Ratio 12 with a negative advantage: capped at r_max = 10 ahead of the
    // branches, so the unbounded penalty saturates.
    t = clipped_term(12.0, -1.0, b, 10.0, DualClip::NegativeOnly);
    CHECK(t.value == doctest::Approx(-10.0));
    CHECK(t.clipped);
    CHECK(t.dlogp == 0.0);

    // Without a ceiling the same token keeps its gradient.
    t = clipped_term(12.0, -1.0, b, 10.0, DualClip::None);
    CHECK(t.value == doctest::Approx(-12.0));
    CHECK_FALSE(t.clipped);
    CHECK(t.dlogp == doctest::Approx(-12.0));

    // Low ratio with positive advantage stays live.
    t = clipped_term(0.5, 1.0, b, 10.0, DualClip::BothSigns);
    CHECK(t.value == doctest::Approx(0.5));
    CHECK_FALSE(t.clipped);
    CHECK(t.dlogp == doctest::Approx(0.5));

    // Exact boundary counts as clipped.
    CHECK(clipped_term(1.2, 1.0, b, 10.0, DualClip::None).clipped);
    CHECK(clipped_term(0.8, -1.0, b, 10.0, DualClip::None).clipped);
    CHECK_FALSE(clipped_term(0.8, 1.0, b, 10.0, DualClip::None).clipped);

    // Zero advantage contributes nothing and is not counted as clipped.
    t = clipped_term(5.0, 0.0, b, 10.0, DualClip::BothSigns);
    CHECK(t.value == 0.0);
    CHECK_FALSE(t.clipped);
    CHECK(t.dlogp == 0.0);
}

TEST_CASE("kl penalty (k3 estimator)") {
    const std::vector<double> lp{-1.0, -2.0, -0.25};
    CHECK(kl_penalty(lp, lp) == doctest::Approx(0.0));

    // pi_ref / pi_theta = 2 at every token -> 2 - ln 2 - 1 per token
    std::vector<double> ref = lp;
    for (double& x : ref) x += std::log(2.0);
    CHECK(kl_penalty(lp, ref) == doctest::Approx(1.0 - std::log(2.0)).epsilon(1e-12));

    Rng rng(11);
    for (int trial = 0; trial < 10000; ++trial) {
        const std::vector<double> a{-3.0 * rng.uniform() - 1e-3};
        const std::vector<double> b{-3.0 * rng.uniform() - 1e-3};
        CHECK(kl_penalty(a, b) >= 0.0);
    }
}

TEST_CASE("loss_grpo examples") {
    const ClipConfig cfg = ClipConfig::fixed_symmetric(0.2);

    std::vector<RolloutGroup> one{group_of({flat_response(3, 1.0, 0.7)})};
    CHECK(loss_grpo(one, cfg, 0.0).objective == doctest::Approx(0.7));

    std::vector<RolloutGroup> two{
        group_of({flat_response(2, 1.0, 1.0), flat_response(4, 1.0, -1.0)})};
    const SurrogateResult r = loss_grpo(two, cfg, 0.0);
    CHECK(r.objective == doctest::Approx(0.0));
    CHECK(r.clipped_tokens == 0);
    CHECK(r.total_tokens == 6);

    // pi_theta == pi_ref makes the KL term vanish.
    std::vector<RolloutGroup> with_ref{group_of({flat_response(3, 1.0, 0.7)})};
    with_ref[0].responses[0].logp_ref = with_ref[0].responses[0].logp_new;
    CHECK(loss_grpo(with_ref, cfg, 0.5).objective == doctest::Approx(0.7));

    std::vector<RolloutGroup> no_ref{group_of({flat_response(3, 1.0, 0.7)})};
    CHECK_THROWS_AS(loss_grpo(no_ref, cfg, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(loss_grpo(no_ref, ClipConfig::fixed_asymmetric(0.2, 0.28), 0.0),
                    std::invalid_argument);
}

TEST_CASE("loss_dapo worked example and identities") {
    const ClipConfig cfg = ClipConfig::fixed_asymmetric(0.2, 0.28);

    std::vector<RolloutGroup> groups{
        group_of({flat_response(500, 1.0, 1.0), flat_response(1500, 1.0, 0.5)})};
    const SurrogateResult r = loss_dapo(groups, cfg);
    CHECK(r.terms[0][0].contribution == 0.25);    // exact
    CHECK(r.terms[0][1].contribution == 0.375);   // exact
    CHECK(r.objective == 0.625);

    std::vector<RolloutGroup> single{group_of({flat_response(7, 1.0, -0.4)})};
    CHECK(loss_dapo(single, cfg).objective == doctest::Approx(-0.4));

    // With equal lengths the token-level mean coincides with GRPO at beta 0.
    std::vector<RolloutGroup> equal{
        group_of({flat_response(5, 1.1, 1.0), flat_response(5, 0.9, -1.0)})};
    const double dapo = loss_dapo(equal, cfg).objective;
    std::vector<RolloutGroup> equal_sym = equal;
    const double grpo = loss_grpo(equal_sym, ClipConfig::fixed_symmetric(0.2), 0.0).objective;
    CHECK(dapo == doctest::Approx(grpo).epsilon(1e-15));

    CHECK_THROWS_AS(loss_dapo({}, cfg), std::logic_error);
}

TEST_CASE("loss_gspo examples") {
    const ClipConfig cfg = ClipConfig::sequence_level(3e-4, 4e-4);

    // Identical policies: the objective is the mean advantage, which is zero
    // under step standardization.
    std::vector<RolloutGroup> same{
        group_of({flat_response(4, 1.0, 1.0), flat_response(6, 1.0, -1.0)})};
    const SurrogateResult r0 = loss_gspo(same, cfg);
    CHECK(r0.objective == doctest::Approx(0.0));
    CHECK(r0.clipped_tokens == 0);

    // s = 1.001 above the upper bound with positive advantage: the clipped
    // branch wins and the whole response is flagged.
    std::vector<RolloutGroup> hot{group_of({flat_response(5, 1.001, 1.0)})};
    const SurrogateResult r1 = loss_gspo(hot, cfg);
    CHECK(r1.objective == doctest::Approx(1.0004).epsilon(1e-12));
    CHECK(r1.clipped_tokens == 5);
    CHECK(r1.total_tokens == 5);
    CHECK(r1.clipped_responses == 1);
    for (std::uint8_t f : r1.terms[0][0].clipped) CHECK(f == 1);

    // s below the lower bound with a negative advantage: min picks the
    // clipped branch (the saturating one), so the response carries no
    // gradient.
    std::vector<RolloutGroup> cold{group_of({flat_response(5, 0.99, -1.0)})};
    const SurrogateResult r2 = loss_gspo(cold, cfg);
    CHECK(r2.objective == doctest::Approx(-(1.0 - 3e-4)).epsilon(1e-12));
    CHECK(r2.clipped_tokens == 5);
    for (double d : r2.terms[0][0].dlogp) CHECK(d == 0.0);

    CHECK_THROWS_AS(loss_gspo(same, ClipConfig::fixed_symmetric(0.2)), std::invalid_argument);
}

TEST_CASE("loss_dcpo worked example and OTM/SLM relation") {
    const ClipConfig dyn = ClipConfig::dynamic_adaptive(0.16, 0.2, 10.0);

    std::vector<RolloutGroup> groups{
        group_of({flat_response(500, 1.0, 1.0), flat_response(1500, 1.0, 0.5)})};
    const SurrogateResult r = loss_dcpo(groups, dyn);
    CHECK(r.terms[0][0].contribution == 1.0);
    CHECK(r.terms[0][1].contribution == 0.5);
    CHECK(r.objective == 1.5);

    std::vector<RolloutGroup> single{group_of({flat_response(3, 1.0, -0.25)})};
    CHECK(loss_dcpo(single, dyn).objective == doctest::Approx(-0.25));

    // Equal lengths + substituted fixed bounds: exactly G times the GRPO
    // objective (single-group batch, power-of-two G).
    const ClipConfig sym = ClipConfig::fixed_symmetric(0.2);
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t g_size = std::size_t{1} << (1 + rng.uniform_int(3));  // 2..8
        const std::size_t len = 1 + rng.uniform_int(6);
        std::vector<Response> responses;
        for (std::size_t j = 0; j < g_size; ++j) {
            Response resp = flat_response(len, 1.0, rng.uniform(-2.0, 2.0));
            for (std::size_t t = 0; t < len; ++t) resp.logp_new[t] += rng.uniform(-0.4, 0.4);
            responses.push_back(std::move(resp));
        }
        std::vector<RolloutGroup> batch{group_of(std::move(responses))};
        const double otm = loss_dcpo(batch, sym).objective;
        const double slm = loss_grpo(batch, sym, 0.0).objective;
        CHECK(otm == static_cast<double>(g_size) * slm);
    }

    CHECK_THROWS_AS(loss_dcpo(single, ClipConfig::sequence_level(3e-4, 4e-4)),
                    std::invalid_argument);
}

TEST_CASE("ratio-1 neutrality across loss modes") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t g_size = 2 + rng.uniform_int(6);
        std::vector<Response> responses;
        double adv_sum = 0.0;
        for (std::size_t j = 0; j < g_size; ++j) {
            const double adv = rng.uniform(-1.5, 1.5);
            adv_sum += adv;
            responses.push_back(flat_response(1 + rng.uniform_int(8), 1.0, adv, 0.3));
        }
        std::vector<RolloutGroup> batch{group_of(std::move(responses))};
        const double mean_adv = adv_sum / static_cast<double>(g_size);

        const SurrogateResult grpo =
            loss_grpo(batch, ClipConfig::fixed_symmetric(0.2), 0.0);
        CHECK(grpo.objective == doctest::Approx(mean_adv).epsilon(1e-12));
        CHECK(grpo.clipped_tokens == 0);

        const SurrogateResult gspo =
            loss_gspo(batch, ClipConfig::sequence_level(3e-4, 4e-4));
        CHECK(gspo.objective == doctest::Approx(mean_adv).epsilon(1e-12));
        CHECK(gspo.clipped_tokens == 0);

        const SurrogateResult dcpo =
            loss_dcpo(batch, ClipConfig::dynamic_adaptive(0.16, 0.2, 10.0));
        CHECK(dcpo.objective == doctest::Approx(adv_sum).epsilon(1e-12));
        CHECK(dcpo.clipped_tokens == 0);

        // token-level mean weights each response by its length share
        double token_weighted = 0.0;
        std::size_t total = 0;
        for (const auto& resp : batch[0].responses) total += resp.length();
        for (const auto& resp : batch[0].responses)
            token_weighted += resp.advantage * static_cast<double>(resp.length()) /
                              static_cast<double>(total);
        const SurrogateResult dapo =
            loss_dapo(batch, ClipConfig::fixed_asymmetric(0.2, 0.28));
        CHECK(dapo.objective == doctest::Approx(token_weighted).epsilon(1e-12));
        CHECK(dapo.clipped_tokens == 0);
    }
}

TEST_CASE("clipped flag marks exactly the tokens with zero ratio gradient") {
    Rng rng(23);
    for (int trial = 0; trial < 5000; ++trial) {
        const double r = 3.0 * rng.uniform();
        const double adv = rng.uniform(-2.0, 2.0);
        const double q = 0.05 + 0.95 * rng.uniform();
        const ClipConfig cfg = ClipConfig::dynamic_adaptive(0.16, 0.2, 2.5);
        const ClipBounds b = bounds_for_token(cfg, q);
        const ClippedTerm ct = clipped_term(r, adv, b, cfg.r_max, DualClip::BothSigns);
        if (ct.clipped) {
            CHECK(ct.dlogp == 0.0);
        } else if (adv != 0.0) {
            CHECK(ct.dlogp != 0.0);
        } else {
            CHECK(ct.dlogp == 0.0);  // zero advantage, but not counted as clipped
        }
    }
}

TEST_CASE("clip monotonicity in the ratio") {
    const ClipBounds b{0.8, 1.2};
    auto value = [&b](double r, double adv) {
        return clipped_term(r, adv, b, 10.0, DualClip::BothSigns).value;
    };
    for (double adv : {1.0, 0.5}) {
        double prev = value(0.01, adv);
        for (double r = 0.02; r < 3.0; r += 0.01) {
            const double v = value(r, adv);
            CHECK(v >= prev - 1e-12);  // non-decreasing up to upper
            if (r > 1.2 + 0.02) CHECK(v == doctest::Approx(1.2 * adv));
            prev = v;
        }
    }
    for (double adv : {-1.0, -0.5}) {
        double prev = value(0.01, adv);
        for (double r = 0.02; r < 3.0; r += 0.01) {
            const double v = value(r, adv);
            if (r < 0.8) {
                CHECK(v == doctest::Approx(0.8 * adv));
            } else {
                CHECK(v <= prev + 1e-12);  // non-increasing beyond lower
            }
            prev = v;
        }
    }
}
