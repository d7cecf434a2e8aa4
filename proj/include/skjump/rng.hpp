#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>

namespace skjump {

// Counter-based random streams. Every consumer of randomness opens its own
// stream keyed by (seed, stream_id, purpose); streams never share state, so
// paths can be generated in any order or in parallel with identical results.
enum class StreamPurpose : std::uint64_t {
    brownian = 0,    // Gaussian increments
    jump_count = 1,  // Poisson number of jumps
    jump_time = 2,   // jump locations on (0, T]
    jump_mark = 3,   // jump marks
    compensator = 4, // per-step mark draws for Monte Carlo compensators
    field_mark = 5,  // marks for jump-derivative norm estimators
    probe = 6,       // assumption probing
    synthetic = 7,   // test fixtures
};

namespace detail {

// Philox4x64-10 (Salmon, Moraes, Dror, Shaw 2011). 256-bit counter,
// 128-bit key, ten rounds.
struct Philox4x64 {
    static constexpr std::uint64_t M0 = 0xD2E7470EE14C6C93ULL;
    static constexpr std::uint64_t M1 = 0xCA5A826395121157ULL;
    static constexpr std::uint64_t W0 = 0x9E3779B97F4A7C15ULL;
    static constexpr std::uint64_t W1 = 0xBB67AE8584CAA73BULL;

    static inline void mulhilo(std::uint64_t a, std::uint64_t b,
                               std::uint64_t& hi, std::uint64_t& lo) {
        unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
        hi = static_cast<std::uint64_t>(p >> 64);
        lo = static_cast<std::uint64_t>(p);
    }

    static std::array<std::uint64_t, 4> block(std::array<std::uint64_t, 4> ctr,
                                              std::uint64_t k0, std::uint64_t k1) {
        for (int round = 0; round < 10; ++round) {
            std::uint64_t hi0, lo0, hi1, lo1;
            mulhilo(M0, ctr[0], hi0, lo0);
            mulhilo(M1, ctr[2], hi1, lo1);
            ctr = {hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0};
            k0 += W0;
            k1 += W1;
        }
        return ctr;
    }
};

// Inverse standard normal CDF: Acklam's rational approximation polished by
// one Halley step against erfc. Accurate to full double precision and
// identical on every platform with a correctly rounded libm.
inline double inverse_normal_cdf(double p) {
    if (!(p > 0.0 && p < 1.0))
        throw std::domain_error("inverse_normal_cdf: p must lie in (0,1)");

    static constexpr double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                    -2.759285104469687e+02, 1.383577518672690e+02,
                                    -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                    -1.556989798598866e+02, 6.680131188771972e+01,
                                    -1.328068155288572e+01};
    static constexpr double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                    -2.400758277161838e+00, -2.549732539343734e+00,
                                    4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                    2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double p_low = 0.02425;

    double x;
    if (p < p_low) {
        double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        double q = p - 0.5;
        double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }

    // Halley refinement: from ~1e-9 relative error to machine precision.
    double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
    if (std::isfinite(u)) x = x - u / (1.0 + 0.5 * x * u);
    return x;
}

} // namespace detail

using detail::inverse_normal_cdf;

// One substream of the counter-based generator. Distinct (seed, stream_id,
// purpose) triples give distinct Philox keys, hence non-overlapping streams
// by construction (stream_id must stay below 2^56).
class Rng {
public:
    Rng(std::uint64_t seed, std::uint64_t stream_id, StreamPurpose purpose)
        : key0_(seed),
          key1_((stream_id << 8) | static_cast<std::uint64_t>(purpose)),
          counter_(0), word_(4) {
        if (stream_id >= (1ULL << 56))
            throw std::invalid_argument("Rng: stream_id must be < 2^56");
    }

    std::uint64_t next_u64() {
        if (word_ == 4) {
            buf_ = detail::Philox4x64::block({counter_, 0, 0, 0}, key0_, key1_);
            ++counter_;
            word_ = 0;
        }
        return buf_[word_++];
    }

    // Uniform on the open interval (0, 1); safe as an inverse-CDF argument.
    double next_unit() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    // Uniform on the half-open interval (0, 1].
    double next_unit_right_closed() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    double next_gaussian(double stddev = 1.0) {
        return stddev * detail::inverse_normal_cdf(next_unit());
    }

    // Poisson by sequential inversion; one uniform per draw.
    std::uint64_t next_poisson(double mean) {
        if (mean < 0.0 || !std::isfinite(mean))
            throw std::invalid_argument("next_poisson: mean must be finite and >= 0");
        if (mean == 0.0) return 0;
        if (mean > 700.0)
            throw std::invalid_argument("next_poisson: mean too large for inversion");
        double u = next_unit();
        double pmf = std::exp(-mean);
        double cdf = pmf;
        std::uint64_t k = 0;
        while (u > cdf && k < 100000) {
            ++k;
            pmf *= mean / static_cast<double>(k);
            cdf += pmf;
        }
        return k;
    }

private:
    std::uint64_t key0_, key1_;
    std::uint64_t counter_;
    std::array<std::uint64_t, 4> buf_{};
    int word_;
};

} // namespace skjump
