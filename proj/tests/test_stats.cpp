#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "skjump/rng.hpp"
#include "skjump/stats.hpp"

using namespace skjump;

TEST_CASE("ks_distance on hand-enumerated samples", "[stats]") {
    std::vector<double> a{1, 2, 3}, b{1, 2, 3};
    CHECK(ks_distance(a, b) == 0.0);

    std::vector<double> c{0}, d{1};
    CHECK(ks_distance(c, d) == 1.0);

    // breakpoints 1, 1.5, 2: gaps 0.5, 0.5, 0 -> sup 0.5
    std::vector<double> e{1, 2}, f{1.5};
    CHECK(ks_distance(e, f) == 0.5);

    CHECK_THROWS_AS(ks_distance(std::vector<double>{}, d), std::invalid_argument);
}

TEST_CASE("ks_distance behaves like a metric on ECDFs", "[stats]") {
    Rng rng(5, 0, StreamPurpose::synthetic);
    for (int iter = 0; iter < 200; ++iter) {
        auto draw = [&](std::size_t n) {
            std::vector<double> v(n);
            for (auto& x : v) x = std::round(rng.uniform(-3, 3) * 4.0) / 4.0;
            return v;
        };
        std::vector<double> a = draw(1 + iter % 7), b = draw(1 + (iter * 3) % 5),
                            c = draw(1 + (iter * 5) % 6);
        const double dab = ks_distance(a, b);
        const double dba = ks_distance(b, a);
        CHECK(dab == dba);
        CHECK(ks_distance(a, a) == 0.0);
        CHECK(dab <= ks_distance(a, c) + ks_distance(c, b) + 1e-15);

        // identical multisets in shuffled order
        std::vector<double> a2 = a;
        std::reverse(a2.begin(), a2.end());
        CHECK(ks_distance(a, a2) == 0.0);
    }
}

TEST_CASE("ks_distance is invariant under increasing transforms", "[stats]") {
    Rng rng(6, 0, StreamPurpose::synthetic);
    std::vector<double> a(40), b(25);
    for (auto& x : a) x = rng.uniform(-2, 2);
    for (auto& x : b) x = rng.uniform(-1, 3);
    const double d0 = ks_distance(a, b);
    auto f = [](double x) { return std::atan(x) + x * x * x; };
    std::vector<double> fa, fb;
    for (double x : a) fa.push_back(f(x));
    for (double x : b) fb.push_back(f(x));
    CHECK(ks_distance(fa, fb) == d0); // rank statistics are bit-identical
}

TEST_CASE("Ecdf evaluates right-continuously", "[stats]") {
    Ecdf F(std::vector<double>{1.0, 2.0, 2.0, 5.0});
    CHECK(F(0.5) == 0.0);
    CHECK(F(1.0) == 0.25);
    CHECK(F(2.0) == 0.75);
    CHECK(F(4.9) == 0.75);
    CHECK(F(5.0) == 1.0);
    CHECK(F(1e12) == 1.0);
}

TEST_CASE("lp_error on coupled pairs", "[stats]") {
    std::vector<std::pair<double, double>> same{{1.5, 1.5}, {2.0, 2.0}, {-3.0, -3.0}};
    EstimateWithError e0 = lp_error(same, 2.0);
    CHECK(e0.value == 0.0);
    CHECK(e0.std_error == 0.0);

    std::vector<std::pair<double, double>> pairs{{1.0, 0.0}, {0.0, 1.0}};
    EstimateWithError e1 = lp_error(pairs, 2.0);
    CHECK(e1.value == 1.0);
    CHECK(e1.std_error == 0.0);

    std::vector<std::pair<double, double>> one{{1.0, 0.0}};
    CHECK_THROWS_AS(lp_error(one, 2.0), std::invalid_argument);
    CHECK_THROWS_AS(lp_error(std::vector<std::pair<double, double>>{}, 2.0),
                    std::invalid_argument);

    // permutation invariance of the estimate
    std::vector<std::pair<double, double>> p1{{1, 0}, {3, 1}, {0, 2}};
    std::vector<std::pair<double, double>> p2{{0, 2}, {1, 0}, {3, 1}};
    CHECK(lp_error(p1, 3.0).value == lp_error(p2, 3.0).value);
}

TEST_CASE("moment_sup basics", "[stats]") {
    std::vector<std::vector<double>> constant{{2.0, 2.0, 2.0}};
    EstimateWithError e = moment_sup(constant, 3.0);
    CHECK(e.value == 8.0);
    CHECK(e.std_error == 0.0);
    CHECK(e.n == 1);

    std::vector<std::vector<double>> two{{1.0, -4.0}, {0.5, 0.25}};
    CHECK(moment_sup(two, 2.0).value == Catch::Approx((16.0 + 0.25) / 2.0));
    std::vector<std::vector<double>> swapped{{0.5, 0.25}, {1.0, -4.0}};
    CHECK(moment_sup(two, 2.0).value == moment_sup(swapped, 2.0).value);

    CHECK_THROWS_AS(moment_sup({}, 2.0), std::invalid_argument);
}

TEST_CASE("inverse_norm_moment basics", "[stats]") {
    std::vector<double> n2{4.0, 4.0};
    EstimateWithError e = inverse_norm_moment(n2, 1.0);
    CHECK(e.value == 0.25);
    CHECK(e.std_error == 0.0);

    std::vector<double> bad{1.0, 0.0};
    CHECK_THROWS_AS(inverse_norm_moment(bad, 1.0), std::invalid_argument);
    std::vector<double> neg{1.0, -2.0};
    CHECK_THROWS_AS(inverse_norm_moment(neg, 2.0), std::invalid_argument);
}

TEST_CASE("fit_rate recovers exact power laws", "[stats]") {
    std::vector<std::pair<double, double>> half;
    for (double eps : {0.1, 0.01, 0.001}) half.emplace_back(eps, std::sqrt(eps));
    RateFit f = fit_rate(half);
    CHECK(f.slope == Catch::Approx(0.5).epsilon(1e-12));
    CHECK(f.r_squared == Catch::Approx(1.0).margin(1e-12));

    std::vector<std::pair<double, double>> lin;
    for (double eps : {0.5, 0.25, 0.125, 0.0625}) lin.emplace_back(eps, 3.0 * eps);
    RateFit g = fit_rate(lin);
    CHECK(g.slope == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(g.intercept == Catch::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(g.slope_se == Catch::Approx(0.0).margin(1e-10));
}

TEST_CASE("fit_rate on noisy synthetic data matches the normal equations", "[stats]") {
    Rng rng(2024, 0, StreamPurpose::synthetic);
    std::vector<std::pair<double, double>> pts;
    for (int i = 0; i < 6; ++i) {
        const double eps = std::pow(2.0, -3 - i);
        const double err = 0.7 * std::sqrt(eps) * std::exp(0.01 * rng.next_gaussian());
        pts.emplace_back(eps, err);
    }
    RateFit f = fit_rate(pts);
    CHECK(f.slope >= 0.45);
    CHECK(f.slope <= 0.55);

    // independent closed-form normal equations in extended precision
    long double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (auto& [e, v] : pts) {
        long double lx = std::log((long double)e), ly = std::log((long double)v);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const long double n = pts.size();
    const long double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const long double intercept = (sy - slope * sx) / n;
    CHECK(f.slope == Catch::Approx((double)slope).epsilon(1e-12));
    CHECK(f.intercept == Catch::Approx((double)intercept).epsilon(1e-12));
}

TEST_CASE("fit_rate rejects degenerate input", "[stats]") {
    std::vector<std::pair<double, double>> two{{0.1, 0.3}, {0.01, 0.1}};
    CHECK_THROWS_AS(fit_rate(two), std::invalid_argument);
    std::vector<std::pair<double, double>> zero{{0.1, 0.3}, {0.01, 0.0}, {0.001, 0.01}};
    CHECK_THROWS_AS(fit_rate(zero), std::invalid_argument);
    std::vector<std::pair<double, double>> dup{{0.1, 0.3}, {0.1, 0.2}, {0.001, 0.01}};
    CHECK_THROWS_AS(fit_rate(dup), std::invalid_argument);
}
