#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace skjump {

struct EstimateWithError {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t n = 0;
};

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_se = 0.0;
    double r_squared = 0.0;
    std::size_t n_points = 0;
    std::vector<double> residuals;
};

// Empirical CDF over a sample; evaluation is right-continuous.
class Ecdf {
public:
    explicit Ecdf(std::vector<double> samples) : sorted_(std::move(samples)) {
        if (sorted_.empty()) throw std::invalid_argument("Ecdf: empty sample");
        std::sort(sorted_.begin(), sorted_.end());
    }

    double operator()(double x) const {
        auto it = std::upper_bound(sorted_.begin(), sorted_.end(), x);
        return static_cast<double>(it - sorted_.begin()) / static_cast<double>(sorted_.size());
    }

    std::size_t size() const { return sorted_.size(); }
    const std::vector<double>& sorted() const { return sorted_; }

private:
    std::vector<double> sorted_;
};

namespace detail {

inline EstimateWithError mean_with_se(std::span<const double> xs) {
    const std::size_t n = xs.size();
    if (n == 0) throw std::invalid_argument("mean_with_se: empty sample");
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(n);
    double se = 0.0;
    if (n >= 2) {
        double ss = 0.0;
        for (double x : xs) ss += (x - mean) * (x - mean);
        se = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
    }
    return {mean, se, n};
}

} // namespace detail

// Exact two-sample Kolmogorov-Smirnov statistic: the supremum of |F_a - F_b|
// over the merged support, evaluating both one-sided gaps at every
// breakpoint. Never uses a fixed evaluation grid, which could miss the sup.
inline double ks_distance(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("ks_distance: empty sample");
    std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());

    const double na = static_cast<double>(sa.size());
    const double nb = static_cast<double>(sb.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < sa.size() && j < sb.size()) {
        const double x = std::min(sa[i], sb[j]);
        while (i < sa.size() && sa[i] == x) ++i;
        while (j < sb.size() && sb[j] == x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    // Remaining tail of either sample cannot increase the gap beyond the
    // value at the last shared breakpoint, but walk it for completeness.
    d = std::max(d, std::abs(1.0 - static_cast<double>(j) / nb));
    d = std::max(d, std::abs(static_cast<double>(i) / na - 1.0));
    return std::min(d, 1.0);
}

// Mean of |x_eps - x|^p over coupled terminal pairs, with its standard error.
inline EstimateWithError lp_error(std::span<const std::pair<double, double>> pairs, double p) {
    if (pairs.size() < 2) throw std::invalid_argument("lp_error: need at least two pairs");
    if (!(p >= 1.0)) throw std::invalid_argument("lp_error: p must be >= 1");
    std::vector<double> gaps;
    gaps.reserve(pairs.size());
    for (const auto& [xe, x] : pairs) {
        if (!std::isfinite(xe) || !std::isfinite(x))
            throw std::invalid_argument("lp_error: non-finite sample");
        gaps.push_back(std::pow(std::abs(xe - x), p));
    }
    return detail::mean_with_se(gaps);
}

// Mean over paths of sup_t |x_t|^p.
inline EstimateWithError moment_sup(const std::vector<std::vector<double>>& trajectories,
                                    double p) {
    if (trajectories.empty()) throw std::invalid_argument("moment_sup: empty ensemble");
    std::vector<double> sups;
    sups.reserve(trajectories.size());
    for (const auto& xs : trajectories) {
        if (xs.empty()) throw std::invalid_argument("moment_sup: empty trajectory");
        double m = 0.0;
        for (double x : xs) m = std::max(m, std::abs(x));
        sups.push_back(std::pow(m, p));
    }
    return detail::mean_with_se(sups);
}

// Mean of (norm^2)^{-p}; rejects nonpositive inputs, which signal a
// degenerate model (vanishing diffusion floor).
inline EstimateWithError inverse_norm_moment(std::span<const double> norms2, double p) {
    if (norms2.empty()) throw std::invalid_argument("inverse_norm_moment: empty sample");
    std::vector<double> vals;
    vals.reserve(norms2.size());
    for (double n2 : norms2) {
        if (!(n2 > 0.0))
            throw std::invalid_argument("inverse_norm_moment: nonpositive norm (degenerate model)");
        vals.push_back(std::pow(n2, -p));
    }
    return detail::mean_with_se(vals);
}

// Ordinary least squares of log(err) on log(eps). Nonpositive inputs are
// rejected rather than clamped: a zero error means the experiment
// degenerated, and clamping would fake a rate.
inline RateFit fit_rate(std::span<const std::pair<double, double>> points) {
    if (points.size() < 3) throw std::invalid_argument("fit_rate: need at least three points");
    std::vector<double> lx, ly;
    lx.reserve(points.size());
    ly.reserve(points.size());
    for (const auto& [eps, err] : points) {
        if (!(eps > 0.0) || !(err > 0.0))
            throw std::invalid_argument("fit_rate: eps and err must be positive");
        lx.push_back(std::log(eps));
        ly.push_back(std::log(err));
    }
    for (std::size_t i = 1; i < lx.size(); ++i)
        for (std::size_t k = 0; k < i; ++k)
            if (lx[i] == lx[k]) throw std::invalid_argument("fit_rate: eps values must be distinct");

    const std::size_t n = lx.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += lx[i];
        my += ly[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);

    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
        syy += (ly[i] - my) * (ly[i] - my);
    }

    RateFit fit;
    fit.n_points = n;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.residuals.resize(n);
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        fit.residuals[i] = ly[i] - (fit.intercept + fit.slope * lx[i]);
        rss += fit.residuals[i] * fit.residuals[i];
    }
    fit.r_squared = syy > 0.0 ? std::clamp(1.0 - rss / syy, 0.0, 1.0) : 1.0;
    fit.slope_se = n > 2 ? std::sqrt(rss / static_cast<double>(n - 2) / sxx) : 0.0;
    return fit;
}

} // namespace skjump
