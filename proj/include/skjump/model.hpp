#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "skjump/errors.hpp"
#include "skjump/rng.hpp"

namespace skjump {

using Coefficient = std::function<double(double, double)>; // (t, x)
using JumpCoefficient = std::function<double(double, double)>; // (x, z)
using MarkSamplerFn = std::function<double(Rng&)>;

// Positivity floor for 1 + dc_dx demanded by the logarithm in the
// closed-form derivative representation.
inline constexpr double kLogJacobianFloor = 1e-6;

// Slack on probed assumption inequalities, absorbing floating-point noise.
inline constexpr double kAssumeTol = 1e-9;

// Mark draws per step for Monte Carlo compensators on user models.
inline constexpr std::size_t kCompensatorDraws = 32;

// Marks per perturbation time when estimating jump-derivative norms.
inline constexpr std::size_t kNormMarkDraws = 16;

// A jump-diffusion model: coefficients with their state derivatives, the
// finite jump measure split as intensity * mark law, and initial data.
// Coefficient functions must be pure; a ModelSpec is immutable after
// construction and freely shared across threads.
struct ModelSpec {
    Coefficient b;            // drift (t, x)
    Coefficient sigma;        // diffusion (t, x)
    Coefficient db_dx, d2b_dx2;
    Coefficient dsigma_dx, d2sigma_dx2;
    JumpCoefficient c;        // jump coefficient (x, z)
    JumpCoefficient dc_dx, dc_dz;

    double jump_intensity = 0.0; // lambda = nu(R_0); 0 means c is never evaluated
    MarkSamplerFn mark_sampler;  // samples mu = nu / lambda; never returns 0
    double lipschitz_K = 1.0;
    double x0 = 0.0, y0 = 0.0;

    // Analytic mark averages, when known; otherwise estimated with
    // kCompensatorDraws per step from a dedicated substream.
    std::function<double(double)> mean_c;       // E_mu[c(x, .)]
    std::function<double(double)> mean_dc_dx;   // E_mu[dc_dx(x, .)]
    std::function<double(double)> mean_log_jac; // E_mu[log1p(dc_dx) - dc_dx]

    std::string name;
};

struct ProbeBox {
    double x_min = -5.0, x_max = 5.0;
    double t_min = 0.0, t_max = 1.0;
    double z_min = -1.0, z_max = 1.0;

    bool empty() const { return !(x_max > x_min) || t_max < t_min; }
};

// worst_ratio reports the largest Lipschitz-type quotient observed, e.g.
// |b(t,x)-b(t,y)|^2 / (K|x-y|^2); the growth/moment families feed their own
// booleans but not worst_ratio (a constant nonzero sigma would otherwise
// push it toward 1 on any box).
struct AssumptionReport {
    bool h1_lipschitz_ok = false;
    bool h1_growth_ok = false;
    bool h2_deriv_bounded_ok = false;
    bool h2_jump_moments_ok = false;
    double worst_ratio = 0.0;
    std::size_t probe_count = 0;

    bool all_ok() const {
        return h1_lipschitz_ok && h1_growth_ok && h2_deriv_bounded_ok && h2_jump_moments_ok;
    }
};

namespace detail {

inline double require_param(const std::map<std::string, double>& params,
                            const std::string& model, const std::string& key) {
    auto it = params.find(key);
    if (it == params.end())
        throw std::invalid_argument("builtin_model(" + model + "): missing param '" + key + "'");
    if (!std::isfinite(it->second))
        throw std::invalid_argument("builtin_model(" + model + "): param '" + key + "' not finite");
    return it->second;
}

inline double optional_param(const std::map<std::string, double>& params,
                             const std::string& model, const std::string& key, double fallback) {
    auto it = params.find(key);
    if (it == params.end()) return fallback;
    if (!std::isfinite(it->second))
        throw std::invalid_argument("builtin_model(" + model + "): param '" + key + "' not finite");
    return it->second;
}

inline void reject_unknown(const std::map<std::string, double>& params,
                           const std::string& model,
                           std::initializer_list<const char*> known) {
    for (const auto& [key, value] : params) {
        bool ok = false;
        for (const char* k : known)
            if (key == k) { ok = true; break; }
        if (!ok)
            throw std::invalid_argument("builtin_model(" + model + "): unknown param '" + key + "'");
    }
}

inline MarkSamplerFn uniform_mark_sampler() {
    // Uniform on [-1, 1] \ {0}.
    return [](Rng& rng) {
        double z = 0.0;
        do {
            z = 2.0 * rng.next_unit_right_closed() - 1.0;
        } while (z == 0.0);
        return z;
    };
}

inline Coefficient zero2() { return [](double, double) { return 0.0; }; }

} // namespace detail

// Built-in test models with hand-derived constants:
//   linear_jump_ou     b = -a x, sigma = s, c = gamma z, marks ~ U[-1,1]\{0}
//   deterministic_relax b = sigma = c = 0 (both dynamics are ODEs)
//   pure_brownian      b = 0, sigma = 1, c = 0
//   pure_jump          b = sigma = 0, c = z, marks ~ U[-1,1]\{0}
inline ModelSpec builtin_model(const std::string& name,
                               const std::map<std::string, double>& params = {}) {
    ModelSpec m;
    m.name = name;
    m.db_dx = detail::zero2();
    m.d2b_dx2 = detail::zero2();
    m.dsigma_dx = detail::zero2();
    m.d2sigma_dx2 = detail::zero2();
    m.dc_dx = detail::zero2();
    m.mean_c = [](double) { return 0.0; };
    m.mean_dc_dx = [](double) { return 0.0; };
    m.mean_log_jac = [](double) { return 0.0; };

    if (name == "linear_jump_ou") {
        detail::reject_unknown(params, name, {"a", "s", "gamma", "lambda", "x0", "y0"});
        const double a = detail::require_param(params, name, "a");
        const double s = detail::require_param(params, name, "s");
        const double gamma = detail::require_param(params, name, "gamma");
        const double lambda = detail::require_param(params, name, "lambda");
        if (lambda < 0.0)
            throw std::invalid_argument("builtin_model(linear_jump_ou): lambda must be >= 0");
        m.x0 = detail::optional_param(params, name, "x0", 0.0);
        m.y0 = detail::optional_param(params, name, "y0", 0.0);
        m.b = [a](double, double x) { return -a * x; };
        m.db_dx = [a](double, double) { return -a; };
        m.sigma = [s](double, double) { return s; };
        m.c = [gamma](double, double z) { return gamma * z; };
        m.dc_dz = [gamma](double, double) { return gamma; };
        m.dc_dx = detail::zero2();
        m.jump_intensity = lambda;
        m.mark_sampler = detail::uniform_mark_sampler();
        // E[z^2] = 1/3 for uniform marks; exact constants of the linear model.
        m.lipschitz_K = std::max({a * a, std::abs(a), s * s + lambda * gamma * gamma / 3.0,
                                  std::abs(gamma)});
        if (m.lipschitz_K == 0.0) m.lipschitz_K = 1.0;
    } else if (name == "deterministic_relax") {
        detail::reject_unknown(params, name, {"x0", "y0"});
        m.x0 = detail::optional_param(params, name, "x0", 0.0);
        m.y0 = detail::optional_param(params, name, "y0", 0.0);
        m.b = detail::zero2();
        m.sigma = detail::zero2();
        m.c = detail::zero2();
        m.dc_dz = detail::zero2();
        m.jump_intensity = 0.0;
        m.lipschitz_K = 1.0;
    } else if (name == "pure_brownian") {
        detail::reject_unknown(params, name, {"x0", "y0"});
        m.x0 = detail::optional_param(params, name, "x0", 0.0);
        m.y0 = detail::optional_param(params, name, "y0", 0.0);
        m.b = detail::zero2();
        m.sigma = [](double, double) { return 1.0; };
        m.c = detail::zero2();
        m.dc_dz = detail::zero2();
        m.jump_intensity = 0.0;
        m.lipschitz_K = 1.0;
    } else if (name == "pure_jump") {
        detail::reject_unknown(params, name, {"lambda", "x0", "y0"});
        const double lambda = detail::require_param(params, name, "lambda");
        if (lambda < 0.0)
            throw std::invalid_argument("builtin_model(pure_jump): lambda must be >= 0");
        m.x0 = detail::optional_param(params, name, "x0", 0.0);
        m.y0 = detail::optional_param(params, name, "y0", 0.0);
        m.b = detail::zero2();
        m.sigma = detail::zero2();
        m.c = [](double, double z) { return z; };
        m.dc_dz = [](double, double) { return 1.0; };
        m.jump_intensity = lambda;
        m.mark_sampler = detail::uniform_mark_sampler();
        m.lipschitz_K = std::max(1.0, lambda / 3.0);
    } else {
        throw std::invalid_argument("builtin_model: unknown model '" + name + "'");
    }
    return m;
}

// Finite-sample check of the standing assumptions: Lipschitz/growth bounds on
// b, sigma, c, boundedness of derivatives, and the jump-moment inequalities,
// with every nu(dz)-integral estimated as lambda times a Monte Carlo mark
// average. Rejects the model outright (model_rejected_error) if any probe
// finds 1 + dc_dx at or below the log-Jacobian floor.
inline AssumptionReport validate_assumptions(const ModelSpec& model, const ProbeBox& box,
                                             std::size_t n_probes, std::uint64_t rng_seed) {
    if (n_probes < 1) throw std::invalid_argument("validate_assumptions: n_probes must be >= 1");
    if (box.empty()) throw std::invalid_argument("validate_assumptions: probe box is empty");

    Rng rng(rng_seed, 0, StreamPurpose::probe);
    const double K = model.lipschitz_K;
    const double lambda = model.jump_intensity;
    const bool has_jumps = lambda > 0.0;
    constexpr std::size_t n_marks = kCompensatorDraws;

    double worst_lip = 0.0, worst_growth = 0.0, worst_deriv = 0.0, worst_jump = 0.0;
    double worst_jump_lip = 0.0;

    for (std::size_t probe = 0; probe < n_probes; ++probe) {
        const double t = rng.uniform(box.t_min, box.t_max);
        double x = rng.uniform(box.x_min, box.x_max);
        double y = rng.uniform(box.x_min, box.x_max);
        while (y == x) y = rng.uniform(box.x_min, box.x_max);
        const double dx2 = (x - y) * (x - y);

        // (H1) Lipschitz: |b(t,x)-b(t,y)|^2 + |sigma(t,x)-sigma(t,y)|^2 <= K|x-y|^2
        const double db = model.b(t, x) - model.b(t, y);
        const double ds = model.sigma(t, x) - model.sigma(t, y);
        worst_lip = std::max(worst_lip, (db * db + ds * ds) / (K * dx2));

        // (H1) growth: |b|^2 + |sigma|^2 + int |c|^2 nu(dz) <= K(1 + x^2)
        const double bx = model.b(t, x);
        const double sx = model.sigma(t, x);
        double growth = bx * bx + sx * sx;

        // (H2) bounded derivatives of b and sigma
        const double deriv_mag = std::max({std::abs(model.db_dx(t, x)), std::abs(model.d2b_dx2(t, x)),
                                           std::abs(model.dsigma_dx(t, x)),
                                           std::abs(model.d2sigma_dx2(t, x))});
        worst_deriv = std::max(worst_deriv, deriv_mag / K);

        if (has_jumps) {
            double c_growth = 0.0, c_lip = 0.0, dcx_p2 = 0.0, dcx_p4 = 0.0, dcx_lip = 0.0;
            for (std::size_t mIdx = 0; mIdx < n_marks; ++mIdx) {
                const double z = model.mark_sampler(rng);
                const double cx = model.c(x, z);
                const double cy = model.c(y, z);
                const double gx = model.dc_dx(x, z);
                const double gy = model.dc_dx(y, z);
                if (1.0 + gx <= kLogJacobianFloor || 1.0 + gy <= kLogJacobianFloor)
                    throw model_rejected_error(
                        "validate_assumptions: 1 + dc_dx fell below the log-Jacobian floor");
                c_growth += cx * cx;
                c_lip += (cx - cy) * (cx - cy);
                dcx_p2 += gx * gx;
                dcx_p4 += gx * gx * gx * gx;
                dcx_lip += (gx - gy) * (gx - gy);
            }
            const double inv = 1.0 / static_cast<double>(n_marks);
            growth += lambda * c_growth * inv;
            worst_lip = std::max(worst_lip, lambda * c_lip * inv / (K * dx2));
            const double dcx_lip_ratio = lambda * dcx_lip * inv / (K * dx2);
            worst_jump = std::max({worst_jump, lambda * dcx_p2 * inv / K,
                                   lambda * dcx_p4 * inv / K, dcx_lip_ratio});
            worst_jump_lip = std::max(worst_jump_lip, dcx_lip_ratio);

            // pointwise mark checks on the box range
            double z_box = rng.uniform(box.z_min, box.z_max);
            while (z_box == 0.0) z_box = rng.uniform(box.z_min, box.z_max);
            if (1.0 + model.dc_dx(x, z_box) <= kLogJacobianFloor)
                throw model_rejected_error(
                    "validate_assumptions: 1 + dc_dx fell below the log-Jacobian floor");
            const double dz_x = model.dc_dz(x, z_box);
            const double dz_y = model.dc_dz(y, z_box);
            const double dcz_lip_ratio = std::abs(dz_x - dz_y) / (K * std::abs(x - y));
            worst_jump = std::max({worst_jump, std::abs(dz_x) / (K * (1.0 + std::abs(x))),
                                   dcz_lip_ratio});
            worst_jump_lip = std::max(worst_jump_lip, dcz_lip_ratio);
        }
        worst_growth = std::max(worst_growth, growth / (K * (1.0 + x * x)));
    }

    AssumptionReport report;
    report.probe_count = n_probes;
    report.h1_lipschitz_ok = worst_lip <= 1.0 + kAssumeTol;
    report.h1_growth_ok = worst_growth <= 1.0 + kAssumeTol;
    report.h2_deriv_bounded_ok = worst_deriv <= 1.0 + kAssumeTol;
    report.h2_jump_moments_ok = worst_jump <= 1.0 + kAssumeTol;
    report.worst_ratio = std::max(worst_lip, worst_jump_lip);
    return report;
}

// Compares every supplied derivative against a central finite difference of
// its parent function; returns the largest relative mismatch observed.
// Guards against inconsistent user-supplied derivatives silently corrupting
// the derivative propagation.
inline double derivative_consistency(const ModelSpec& model, const ProbeBox& box,
                                     std::size_t n_points, std::uint64_t rng_seed) {
    Rng rng(rng_seed, 1, StreamPurpose::probe);
    const double h = 1e-5;
    double worst = 0.0;

    auto check = [&](double analytic, double fd, double scale) {
        double denom = std::max({std::abs(analytic), std::abs(fd), scale});
        worst = std::max(worst, std::abs(analytic - fd) / denom);
    };

    for (std::size_t i = 0; i < n_points; ++i) {
        const double t = rng.uniform(box.t_min, box.t_max);
        const double x = rng.uniform(box.x_min, box.x_max);
        const double hx = h * std::max(1.0, std::abs(x));

        check(model.db_dx(t, x), (model.b(t, x + hx) - model.b(t, x - hx)) / (2 * hx), 1.0);
        check(model.d2b_dx2(t, x),
              (model.b(t, x + hx) - 2 * model.b(t, x) + model.b(t, x - hx)) / (hx * hx), 1.0);
        check(model.dsigma_dx(t, x), (model.sigma(t, x + hx) - model.sigma(t, x - hx)) / (2 * hx),
              1.0);
        check(model.d2sigma_dx2(t, x),
              (model.sigma(t, x + hx) - 2 * model.sigma(t, x) + model.sigma(t, x - hx)) / (hx * hx),
              1.0);

        if (model.jump_intensity > 0.0) {
            double z = rng.uniform(box.z_min, box.z_max);
            while (z == 0.0) z = rng.uniform(box.z_min, box.z_max);
            const double hz = h * std::max(1.0, std::abs(z));
            check(model.dc_dx(x, z), (model.c(x + hx, z) - model.c(x - hx, z)) / (2 * hx), 1.0);
            check(model.dc_dz(x, z), (model.c(x, z + hz) - model.c(x, z - hz)) / (2 * hz), 1.0);
        }
    }
    return worst;
}

} // namespace skjump
