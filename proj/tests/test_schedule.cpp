#include <catch2/catch_amalgamated.hpp>

#include "adaps/rng.hpp"
#include "adaps/schedule.hpp"

using namespace adaps;

TEST_CASE("linear schedule basics", "[schedule]") {
    SECTION("single step") {
        Schedule s = make_linear_schedule(1, 0.5, 0.5);
        REQUIRE(s.alpha_bars[0] == Catch::Approx(0.5).epsilon(1e-15));
    }
    SECTION("two steps") {
        Schedule s = make_linear_schedule(2, 0.1, 0.2);
        REQUIRE(s.betas[0] == Catch::Approx(0.1));
        REQUIRE(s.betas[1] == Catch::Approx(0.2));
        REQUIRE(s.alpha_bars[0] == Catch::Approx(0.9).epsilon(1e-14));
        REQUIRE(s.alpha_bars[1] == Catch::Approx(0.72).epsilon(1e-14));
    }
    SECTION("default 1000-step schedule terminal value") {
        Schedule s = make_linear_schedule(1000, 1e-4, 0.02);
        // independent product loop in extended precision
        long double abar = 1.0L;
        for (int t = 0; t < 1000; ++t) {
            long double b = 1e-4L + (0.02L - 1e-4L) * t / 999.0L;
            abar *= 1.0L - b;
        }
        REQUIRE(s.alpha_bars[999] ==
                Catch::Approx(static_cast<double>(abar)).epsilon(1e-12));
        REQUIRE(s.alpha_bars[999] == Catch::Approx(4.0358e-5).margin(2e-8));
    }
    SECTION("invalid ranges rejected") {
        REQUIRE_THROWS_AS(make_linear_schedule(0, 0.1, 0.2), ConfigError);
        REQUIRE_THROWS_AS(make_linear_schedule(10, 0.0, 0.2), ConfigError);
        REQUIRE_THROWS_AS(make_linear_schedule(10, 0.3, 0.2), ConfigError);
        REQUIRE_THROWS_AS(make_linear_schedule(10, 0.1, 1.0), ConfigError);
    }
}

TEST_CASE("schedule invariants", "[schedule]") {
    Schedule s = make_linear_schedule(500, 1e-4, 0.02);
    double abar = 1.0;
    for (int t = 0; t < 500; ++t) {
        abar *= 1.0 - s.betas[t];
        REQUIRE(s.alpha_bars[t] == Catch::Approx(abar).epsilon(1e-12));
        if (t > 0) REQUIRE(s.alpha_bars[t] < s.alpha_bars[t - 1]);
        REQUIRE(s.alpha_bars[t] > 0.0);
        REQUIRE(s.alpha_bars[t] <= 1.0);
    }
    REQUIRE(s.alpha_bar(0) == 1.0);
}

TEST_CASE("respacing", "[schedule]") {
    Schedule s = make_linear_schedule(1000, 1e-4, 0.02);
    SECTION("identity") {
        Schedule r = respace(s, 1000);
        REQUIRE(r.respaced_timesteps.front() == 1);
        REQUIRE(r.respaced_timesteps.back() == 1000);
        for (int k = 0; k < 1000; ++k) REQUIRE(r.respaced_timesteps[k] == k + 1);
    }
    SECTION("uniform stride") {
        Schedule r = respace(s, 100);
        REQUIRE(r.respaced_timesteps.size() == 100);
        REQUIRE(r.respaced_timesteps.back() == 1000);
        for (int k = 0; k < 100; ++k) REQUIRE(r.respaced_timesteps[k] == 10 * (k + 1));
    }
    SECTION("small subsequence keeps terminal index") {
        Schedule t10 = make_linear_schedule(10, 0.01, 0.2);
        Schedule r = respace(t10, 3);
        REQUIRE(r.respaced_timesteps.size() == 3);
        REQUIRE(r.respaced_timesteps.back() == 10);
        REQUIRE(r.respaced_timesteps[0] < r.respaced_timesteps[1]);
        REQUIRE(r.respaced_timesteps[1] < r.respaced_timesteps[2]);
        REQUIRE(r.respaced_timesteps.front() >= 1);
    }
    SECTION("every N is strictly increasing and in range") {
        for (int N : {1, 2, 3, 7, 99, 500, 999}) {
            Schedule r = respace(s, N);
            REQUIRE(static_cast<int>(r.respaced_timesteps.size()) == N);
            REQUIRE(r.respaced_timesteps.back() == 1000);
            for (size_t i = 1; i < r.respaced_timesteps.size(); ++i)
                REQUIRE(r.respaced_timesteps[i] > r.respaced_timesteps[i - 1]);
        }
    }
    SECTION("N > T rejected") { REQUIRE_THROWS_AS(respace(s, 1001), ConfigError); }
}

TEST_CASE("step coefficients", "[schedule]") {
    SECTION("frozen arithmetic example") {
        // abar_t = 0.9, abar_prev = 10/11, eta = 0
        Vec abars(2);
        abars << 10.0 / 11.0, 0.9;
        Schedule s = schedule_from_alpha_bars(abars);
        StepCoeffs c = step_coeffs(s, 1, 0.0);
        REQUIRE(c.sigma == 0.0);
        double alpha = 0.9 / (10.0 / 11.0);
        double expected = std::sqrt(0.1) / std::sqrt(alpha) - std::sqrt(1.0 - 10.0 / 11.0);
        REQUIRE(c.gamma == Catch::Approx(expected).epsilon(1e-14));
        REQUIRE(c.gamma == Catch::Approx(0.016310).margin(5e-7));
    }
    SECTION("eta = 0 kills sigma everywhere") {
        Schedule s = respace(make_linear_schedule(1000, 1e-4, 0.02), 50);
        for (int pos = 0; pos < 50; ++pos) REQUIRE(step_coeffs(s, pos, 0.0).sigma == 0.0);
    }
    SECTION("final jump has sigma 0 and pure denoise gamma") {
        Schedule s = respace(make_linear_schedule(1000, 1e-4, 0.02), 10);
        StepCoeffs c = step_coeffs(s, 0, 1.0);
        REQUIRE(c.abar_prev == 1.0);
        REQUIRE(c.sigma == 0.0);
        REQUIRE(c.gamma ==
                Catch::Approx(std::sqrt(1.0 - c.abar) / std::sqrt(c.abar)).epsilon(1e-13));
    }
    SECTION("sigma in range, gamma nonnegative across etas") {
        Schedule s = respace(make_linear_schedule(1000, 1e-4, 0.02), 100);
        for (double eta : {0.0, 0.5, 1.0}) {
            for (int pos = 0; pos < 100; ++pos) {
                StepCoeffs c = step_coeffs(s, pos, eta);
                REQUIRE(c.sigma >= 0.0);
                REQUIRE(c.sigma * c.sigma <= 1.0 - c.abar_prev + 1e-12);
                REQUIRE(c.gamma >= 0.0);
            }
        }
    }
}

TEST_CASE("ddim form equivalence", "[schedule]") {
    // substituting the denoised estimate into the direct update must match the
    // Markov form bitwise-tightly for any eta and any respacing
    Rng rng(7);
    for (int N : {1000, 100, 13}) {
        Schedule s = respace(make_linear_schedule(1000, 1e-4, 0.02), N);
        for (double eta : {0.0, 0.5, 1.0}) {
            for (int rep = 0; rep < 5; ++rep) {
                int pos = static_cast<int>(rng.uniform() * N);
                pos = std::min(pos, N - 1);
                StepCoeffs c = step_coeffs(s, pos, eta);
                Vec x = rng.normal_vec(6);
                Vec eps = rng.normal_vec(6);
                Vec z = rng.normal_vec(6);
                Vec x0_hat = (x - c.sqrt_one_minus_abar * eps) / c.sqrt_abar;
                double tail = 1.0 - c.abar_prev - c.sigma * c.sigma;
                tail = tail < 0 ? 0 : tail;
                Vec direct = std::sqrt(c.abar_prev) * x0_hat + std::sqrt(tail) * eps + c.sigma * z;
                Vec markov = x / std::sqrt(c.alpha_eff()) - c.gamma * eps + c.sigma * z;
                REQUIRE((direct - markov).norm() <= 1e-10 * std::max(1.0, markov.norm()));
            }
        }
    }
}

TEST_CASE("coefficients invariant to schedule storage", "[schedule]") {
    Schedule full = make_linear_schedule(1000, 1e-4, 0.02);
    Schedule re = respace(full, 37);
    Vec sub(37);
    for (int k = 0; k < 37; ++k) sub[k] = full.alpha_bar(re.respaced_timesteps[k]);
    Schedule fresh = schedule_from_alpha_bars(sub);
    for (double eta : {0.0, 0.7, 1.0}) {
        for (int pos = 0; pos < 37; ++pos) {
            StepCoeffs a = step_coeffs(re, pos, eta);
            StepCoeffs b = step_coeffs(fresh, pos, eta);
            REQUIRE(a.gamma == Catch::Approx(b.gamma).margin(1e-14));
            REQUIRE(a.sigma == Catch::Approx(b.sigma).margin(1e-14));
            REQUIRE(a.abar == Catch::Approx(b.abar).margin(1e-15));
        }
    }
}
