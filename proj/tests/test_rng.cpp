#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "skjump/rng.hpp"

using namespace skjump;

namespace {
double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
}

TEST_CASE("inverse normal CDF hits known quantiles", "[rng]") {
    // Phi^{-1}(0.975), a standard table value to 15 digits.
    CHECK(inverse_normal_cdf(0.975) == Catch::Approx(1.959963984540054).epsilon(1e-13));
    CHECK(inverse_normal_cdf(0.5) == Catch::Approx(0.0).margin(1e-16));
    CHECK(inverse_normal_cdf(0.841344746068543) == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(inverse_normal_cdf(0.158655253931457) == Catch::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("inverse normal CDF round-trips against erfc", "[rng]") {
    for (double p : {1e-16, 1e-12, 1e-8, 1e-4, 0.02, 0.3, 0.5, 0.7, 0.98, 1 - 1e-8, 1 - 1e-12}) {
        const double x = inverse_normal_cdf(p);
        CHECK(normal_cdf(x) == Catch::Approx(p).epsilon(5e-14));
    }
    CHECK_THROWS_AS(inverse_normal_cdf(0.0), std::domain_error);
    CHECK_THROWS_AS(inverse_normal_cdf(1.0), std::domain_error);
}

TEST_CASE("streams are reproducible and purpose-separated", "[rng]") {
    Rng a(42, 7, StreamPurpose::brownian);
    Rng b(42, 7, StreamPurpose::brownian);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

    Rng c(42, 7, StreamPurpose::jump_time);
    Rng d(42, 8, StreamPurpose::brownian);
    Rng e(43, 7, StreamPurpose::brownian);
    std::set<std::uint64_t> firsts;
    firsts.insert(Rng(42, 7, StreamPurpose::brownian).next_u64());
    firsts.insert(c.next_u64());
    firsts.insert(d.next_u64());
    firsts.insert(e.next_u64());
    CHECK(firsts.size() == 4);
}

TEST_CASE("unit draws stay inside their intervals", "[rng]") {
    Rng rng(1, 0, StreamPurpose::synthetic);
    for (int i = 0; i < 20000; ++i) {
        const double u = rng.next_unit();
        REQUIRE(u > 0.0);
        REQUIRE(u < 1.0);
        const double v = rng.next_unit_right_closed();
        REQUIRE(v > 0.0);
        REQUIRE(v <= 1.0);
    }
}

TEST_CASE("gaussian draws have the right first moments", "[rng]") {
    Rng rng(123, 0, StreamPurpose::synthetic);
    const int n = 200000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double g = rng.next_gaussian();
        sum += g;
        sum2 += g * g;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean) < 5.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(var - 1.0) < 5.0 * std::sqrt(2.0 / n));
}

TEST_CASE("poisson draws match mean and variance", "[rng]") {
    Rng rng(9, 0, StreamPurpose::synthetic);
    const double lam = 2.0;
    const int n = 100000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double k = static_cast<double>(rng.next_poisson(lam));
        sum += k;
        sum2 += k * k;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean - lam) < 5.0 * std::sqrt(lam / n));
    CHECK(std::abs(var - lam) < 5.0 * std::sqrt(2.0 * lam * lam / n + lam / n));
    CHECK(Rng(9, 0, StreamPurpose::synthetic).next_poisson(0.0) == 0);
    CHECK_THROWS_AS(rng.next_poisson(-1.0), std::invalid_argument);
}
