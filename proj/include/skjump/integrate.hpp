#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "skjump/errors.hpp"
#include "skjump/model.hpp"
#include "skjump/noise.hpp"

namespace skjump {

enum class Scheme { limit, sk_direct, sk_exponential };
enum class FieldKind { brownian, jump };

// A discretized path. `y` is populated by the direct small-mass scheme only;
// `epsilon` is absent for the limit process. `jump_prestates` holds the state
// each jump coefficient was evaluated at, aligned with the noise path's jump
// list, so derivative propagations revisit the exact same states.
struct Trajectory {
    TimeGrid grid;
    std::vector<double> x;
    std::vector<double> y;
    std::optional<double> epsilon;
    Scheme scheme = Scheme::limit;
    std::uint64_t seed = 0;
    std::uint64_t stream_id = 0;
    std::vector<double> jump_prestates;
};

// Derivative of the state at time t with respect to a Brownian perturbation
// at time r (kind = brownian) or a jump-mark perturbation at (r, xi)
// (kind = jump). values[i] = D at node i; identically 0 for i < r_index.
struct MalliavinField {
    FieldKind kind = FieldKind::brownian;
    std::size_t r_index = 0;
    double xi = 0.0;
    std::vector<double> values;
    std::optional<double> epsilon;
};

namespace detail {

// Per-step mark averages: analytic when the model supplies them, otherwise
// Monte Carlo over kCompensatorDraws marks per step pre-drawn from the
// compensator substream (so every consumer of the same path sees the same
// draws).
class MarkAverageSource {
public:
    MarkAverageSource(const ModelSpec& model, const NoisePath& path, std::size_t n_steps)
        : model_(&model) {
        active_ = model.jump_intensity > 0.0;
        if (!active_) return;
        analytic_ = static_cast<bool>(model.mean_c) && static_cast<bool>(model.mean_dc_dx) &&
                    static_cast<bool>(model.mean_log_jac);
        if (analytic_) return;
        if (!model.mark_sampler)
            throw std::invalid_argument("mark averages: model lacks a mark sampler");
        Rng rng(path.seed, path.stream_id, StreamPurpose::compensator);
        marks_.resize(n_steps * kCompensatorDraws);
        for (auto& z : marks_) z = model.mark_sampler(rng);
    }

    double mean_c(std::size_t step, double x) const {
        if (!active_) return 0.0;
        if (analytic_) return model_->mean_c(x);
        return mc_mean(step, [&](double z) { return model_->c(x, z); });
    }

    double mean_dc_dx(std::size_t step, double x) const {
        if (!active_) return 0.0;
        if (analytic_) return model_->mean_dc_dx(x);
        return mc_mean(step, [&](double z) { return model_->dc_dx(x, z); });
    }

    double mean_log_jac(std::size_t step, double x) const {
        if (!active_) return 0.0;
        if (analytic_) return model_->mean_log_jac(x);
        return mc_mean(step, [&](double z) {
            double g = model_->dc_dx(x, z);
            if (1.0 + g <= kLogJacobianFloor)
                throw model_rejected_error("mark averages: 1 + dc_dx below the log-Jacobian floor");
            return std::log1p(g) - g;
        });
    }

private:
    template <class F>
    double mc_mean(std::size_t step, F&& f) const {
        double acc = 0.0;
        const std::size_t base = step * kCompensatorDraws;
        for (std::size_t m = 0; m < kCompensatorDraws; ++m) acc += f(marks_[base + m]);
        return acc / static_cast<double>(kCompensatorDraws);
    }

    const ModelSpec* model_;
    bool active_ = false;
    bool analytic_ = false;
    std::vector<double> marks_;
};

inline void check_pair(const ModelSpec& model, const NoisePath& path) {
    if (path.intensity != model.jump_intensity)
        throw std::invalid_argument("integrate: path intensity does not match the model");
}

inline void check_trajectory_pair(const Trajectory& traj, const NoisePath& path) {
    if (traj.seed != path.seed || traj.stream_id != path.stream_id ||
        traj.grid.n_steps != path.grid.n_steps || traj.grid.t_end != path.grid.t_end ||
        traj.jump_prestates.size() != path.jumps.size())
        throw std::invalid_argument("integrate: trajectory and noise path are not a pair");
}

} // namespace detail

// Euler-Maruyama for the first-order limit equation. Within a step: drift and
// diffusion at the left point, then jumps in time order, each seeing the
// state left by the drift/diffusion update and any earlier jumps; the
// compensator is subtracted as lambda * E_mu[c(X_i, .)] * dt.
inline Trajectory simulate_limit(const ModelSpec& model, const NoisePath& path) {
    detail::check_pair(model, path);
    const std::size_t n = path.grid.n_steps;
    const double dt = path.grid.dt();
    detail::MarkAverageSource avg(model, path, n);

    Trajectory traj;
    traj.grid = path.grid;
    traj.scheme = Scheme::limit;
    traj.seed = path.seed;
    traj.stream_id = path.stream_id;
    traj.x.resize(n + 1);
    traj.x[0] = model.x0;
    traj.jump_prestates.reserve(path.jumps.size());

    const bool has_jumps = model.jump_intensity > 0.0;
    std::size_t j = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = path.grid.node(i);
        const double xi = traj.x[i];
        double xw = xi + model.b(t, xi) * dt + model.sigma(t, xi) * path.dB[i];
        if (has_jumps) {
            xw -= model.jump_intensity * avg.mean_c(i, xi) * dt;
            const double t_next = path.grid.node(i + 1);
            while (j < path.jumps.size() && path.jumps[j].time <= t_next) {
                traj.jump_prestates.push_back(xw);
                xw += model.c(xw, path.jumps[j].mark);
                ++j;
            }
        }
        if (!std::isfinite(xw)) throw numerical_error("simulate_limit: non-finite state", i);
        traj.x[i + 1] = xw;
    }
    return traj;
}

// Euler-Maruyama on the position/velocity system, run on the fine grid the
// path was sampled at. The position advances by Y dt; the velocity sees the
// drift, the 1/eps-scaled noise, and jump kicks c/eps at their occurrence.
// Output is subsampled to the coarse grid (fine grid / substep_factor) so it
// aligns with the limit run on the coarsened path. Refuses fine dt > eps/10.
inline Trajectory simulate_sk_direct(const ModelSpec& model, const NoisePath& path, double eps,
                                     std::size_t substep_factor) {
    detail::check_pair(model, path);
    if (!(eps > 0.0 && eps <= 1.0))
        throw std::invalid_argument("simulate_sk_direct: eps must lie in (0, 1]");
    const std::size_t n = path.grid.n_steps;
    const double dt = path.grid.dt();
    if (dt > eps / 10.0 * (1.0 + 1e-12))
        throw std::invalid_argument("simulate_sk_direct: fine dt must be <= eps/10");
    if (substep_factor == 0 || n % substep_factor != 0)
        throw std::invalid_argument("simulate_sk_direct: substep_factor must divide n_steps");

    detail::MarkAverageSource avg(model, path, n);
    const std::size_t n_coarse = n / substep_factor;

    Trajectory traj;
    traj.grid = TimeGrid(path.grid.t_end, n_coarse);
    traj.scheme = Scheme::sk_direct;
    traj.epsilon = eps;
    traj.seed = path.seed;
    traj.stream_id = path.stream_id;
    traj.x.resize(n_coarse + 1);
    traj.y.resize(n_coarse + 1);
    traj.x[0] = model.x0;
    traj.y[0] = model.y0;
    traj.jump_prestates.reserve(path.jumps.size());

    const bool has_jumps = model.jump_intensity > 0.0;
    double x = model.x0, y = model.y0;
    std::size_t j = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const double t = path.grid.node(k);
        const double x_next = x + y * dt;
        double y_next = y + (model.b(t, x) - y) / eps * dt + model.sigma(t, x) / eps * path.dB[k];
        if (has_jumps) {
            y_next -= model.jump_intensity * avg.mean_c(k, x) / eps * dt;
            const double t_next = path.grid.node(k + 1);
            while (j < path.jumps.size() && path.jumps[j].time <= t_next) {
                traj.jump_prestates.push_back(x);
                y_next += model.c(x, path.jumps[j].mark) / eps;
                ++j;
            }
        }
        if (!std::isfinite(x_next) || !std::isfinite(y_next))
            throw numerical_error("simulate_sk_direct: non-finite state", k);
        x = x_next;
        y = y_next;
        if ((k + 1) % substep_factor == 0) {
            traj.x[(k + 1) / substep_factor] = x;
            traj.y[(k + 1) / substep_factor] = y;
        }
    }
    return traj;
}

// Variation-of-constants scheme for the small-mass process: keeps the plain
// and exponentially weighted running integrals of drift, diffusion and jumps,
// decaying the weighted ones by exp(-dt/eps) each step, with coefficients
// frozen at the left endpoint. The ds-kernel is integrated exactly over the
// step; the dB increment is weighted by the step average of the kernel;
// jumps enter at their exact times with weight exp(-(t_{i+1}-tau)/eps).
// All weights are bounded by 1, so the scheme is stable for any eps.
inline Trajectory simulate_sk_exponential(const ModelSpec& model, const NoisePath& path,
                                          double eps) {
    detail::check_pair(model, path);
    if (!(eps > 0.0 && eps <= 1.0))
        throw std::invalid_argument("simulate_sk_exponential: eps must lie in (0, 1]");
    const std::size_t n = path.grid.n_steps;
    const double dt = path.grid.dt();
    detail::MarkAverageSource avg(model, path, n);

    Trajectory traj;
    traj.grid = path.grid;
    traj.scheme = Scheme::sk_exponential;
    traj.epsilon = eps;
    traj.seed = path.seed;
    traj.stream_id = path.stream_id;
    traj.x.resize(n + 1);
    traj.x[0] = model.x0;
    traj.jump_prestates.reserve(path.jumps.size());

    const double em = -std::expm1(-dt / eps); // 1 - exp(-dt/eps), accurately
    const double decay = std::exp(-dt / eps);
    const double wbar = eps * em / dt; // step average of the kernel

    const bool has_jumps = model.jump_intensity > 0.0;
    double drift_sum = 0.0, drift_w = 0.0;   // int b ds and its weighted twin
    double diff_sum = 0.0, diff_w = 0.0;     // int sigma dB
    double jump_sum = 0.0, jump_w = 0.0;     // compensated jump integrals
    std::size_t j = 0;

    for (std::size_t i = 0; i < n; ++i) {
        const double t = path.grid.node(i);
        const double t_next = path.grid.node(i + 1);
        const double xi = traj.x[i];

        const double bi = model.b(t, xi);
        const double si = model.sigma(t, xi);
        drift_sum += bi * dt;
        drift_w = decay * drift_w + bi * eps * em;
        diff_sum += si * path.dB[i];
        diff_w = decay * diff_w + si * wbar * path.dB[i];

        if (has_jumps) {
            const double comp = model.jump_intensity * avg.mean_c(i, xi);
            jump_sum -= comp * dt;
            jump_w = decay * jump_w - comp * eps * em;
        } else {
            jump_w = decay * jump_w;
        }

        const double relax = model.x0 + eps * model.y0 * (-std::expm1(-t_next / eps));
        if (has_jumps) {
            double x_pre = relax + (drift_sum - drift_w) + (diff_sum - diff_w) +
                           (jump_sum - jump_w);
            while (j < path.jumps.size() && path.jumps[j].time <= t_next) {
                const double w = std::exp(-(t_next - path.jumps[j].time) / eps);
                traj.jump_prestates.push_back(x_pre);
                const double cj = model.c(x_pre, path.jumps[j].mark);
                jump_sum += cj;
                jump_w += cj * w;
                x_pre += cj * (1.0 - w);
                ++j;
            }
        }

        const double x_next =
            relax + (drift_sum - drift_w) + (diff_sum - diff_w) + (jump_sum - jump_w);
        if (!std::isfinite(x_next))
            throw numerical_error("simulate_sk_exponential: non-finite state", i);
        traj.x[i + 1] = x_next;
    }
    return traj;
}

namespace detail {

// Linear derivative recursion along a frozen limit trajectory, started from
// value v0 at node r. sink(i, value) is called for every node i >= r.
template <class Sink>
void propagate_limit_field(const ModelSpec& model, const Trajectory& traj, const NoisePath& path,
                           std::size_t r, double v0, const MarkAverageSource& avg, Sink&& sink) {
    const std::size_t n = traj.grid.n_steps;
    const double dt = traj.grid.dt();
    const bool has_jumps = model.jump_intensity > 0.0;

    std::size_t j = 0;
    const double t_r = traj.grid.node(r);
    while (j < path.jumps.size() && path.jumps[j].time <= t_r) ++j;

    double d = v0;
    sink(r, d);
    for (std::size_t i = r; i < n; ++i) {
        const double t = traj.grid.node(i);
        const double xi = traj.x[i];
        double dw = d + model.db_dx(t, xi) * d * dt + model.dsigma_dx(t, xi) * d * path.dB[i];
        if (has_jumps) {
            dw -= model.jump_intensity * avg.mean_dc_dx(i, xi) * d * dt;
            const double t_next = traj.grid.node(i + 1);
            while (j < path.jumps.size() && path.jumps[j].time <= t_next) {
                dw += model.dc_dx(traj.jump_prestates[j], path.jumps[j].mark) * dw;
                ++j;
            }
        }
        if (!std::isfinite(dw))
            throw numerical_error("propagate_malliavin: non-finite derivative", i);
        d = dw;
        sink(i + 1, d);
    }
}

// Same recursion for the small-mass process: the initial term carries the
// prefactor (1 - exp(-(t-r)/eps)) and every integral has an exponentially
// weighted counter-term, handled exactly like the trajectory scheme.
template <class Sink>
void propagate_eps_field(const ModelSpec& model, const Trajectory& traj, const NoisePath& path,
                         std::size_t r, double v0, const MarkAverageSource& avg, Sink&& sink) {
    const std::size_t n = traj.grid.n_steps;
    const double dt = traj.grid.dt();
    const double eps = *traj.epsilon;
    const double em = -std::expm1(-dt / eps);
    const double decay = std::exp(-dt / eps);
    const double wbar = eps * em / dt;
    const bool has_jumps = model.jump_intensity > 0.0;

    std::size_t j = 0;
    const double t_r = traj.grid.node(r);
    while (j < path.jumps.size() && path.jumps[j].time <= t_r) ++j;

    double g = 1.0; // exp(-(t_i - t_r)/eps), maintained multiplicatively
    double ds_sum = 0.0, ds_w = 0.0;
    double db_sum = 0.0, db_w = 0.0;
    double jp_sum = 0.0, jp_w = 0.0;

    double d = 0.0; // (1 - e^0) v0 = 0
    sink(r, d);
    for (std::size_t i = r; i < n; ++i) {
        const double t = traj.grid.node(i);
        const double xi = traj.x[i];
        const double bp = model.db_dx(t, xi);
        const double sp = model.dsigma_dx(t, xi);

        ds_sum += bp * d * dt;
        ds_w = decay * ds_w + bp * d * eps * em;
        db_sum += sp * d * path.dB[i];
        db_w = decay * db_w + sp * d * wbar * path.dB[i];
        if (has_jumps) {
            const double comp = model.jump_intensity * avg.mean_dc_dx(i, xi) * d;
            jp_sum -= comp * dt;
            jp_w = decay * jp_w - comp * eps * em;
        } else {
            jp_w = decay * jp_w;
        }

        g *= decay;
        const double forcing = v0 * (1.0 - g);
        const double t_next = traj.grid.node(i + 1);
        double d_pre = forcing + (ds_sum - ds_w) + (db_sum - db_w) + (jp_sum - jp_w);
        if (has_jumps) {
            while (j < path.jumps.size() && path.jumps[j].time <= t_next) {
                const double w = std::exp(-(t_next - path.jumps[j].time) / eps);
                const double kick =
                    model.dc_dx(traj.jump_prestates[j], path.jumps[j].mark) * d_pre;
                jp_sum += kick;
                jp_w += kick * w;
                d_pre += kick * (1.0 - w);
                ++j;
            }
        }
        d = forcing + (ds_sum - ds_w) + (db_sum - db_w) + (jp_sum - jp_w);
        if (!std::isfinite(d))
            throw numerical_error("propagate_malliavin: non-finite derivative", i);
        sink(i + 1, d);
    }
}

inline double field_initial_value(const ModelSpec& model, const Trajectory& traj, FieldKind kind,
                                  std::size_t r, double xi_mark) {
    const double t_r = traj.grid.node(r);
    if (kind == FieldKind::brownian) return model.sigma(t_r, traj.x[r]);
    return model.dc_dz(traj.x[r], xi_mark);
}

} // namespace detail

// Euler discretization of the linear derivative equation along a frozen
// trajectory. For the limit process the field starts from sigma(r, X_r)
// (Brownian kind) or dc_dz(X_r, xi) (jump kind); for a small-mass trajectory
// the weighted counter-terms are maintained and the start value is damped by
// (1 - exp(-(t-r)/eps)). Values are exactly zero ahead of r.
inline MalliavinField propagate_malliavin(const ModelSpec& model, const Trajectory& traj,
                                          const NoisePath& path, FieldKind kind,
                                          std::size_t r_index, double xi_mark = 0.0) {
    detail::check_pair(model, path);
    detail::check_trajectory_pair(traj, path);
    if (r_index >= traj.grid.n_steps)
        throw std::invalid_argument("propagate_malliavin: r_index out of range");
    if (traj.epsilon && traj.scheme != Scheme::sk_exponential)
        throw std::invalid_argument(
            "propagate_malliavin: small-mass fields require an exponential-scheme trajectory");

    detail::MarkAverageSource avg(model, path, traj.grid.n_steps);
    MalliavinField field;
    field.kind = kind;
    field.r_index = r_index;
    field.xi = xi_mark;
    field.epsilon = traj.epsilon;
    field.values.assign(traj.grid.n_steps + 1, 0.0);

    const double v0 = detail::field_initial_value(model, traj, kind, r_index, xi_mark);
    auto sink = [&](std::size_t i, double v) { field.values[i] = v; };
    if (traj.epsilon)
        detail::propagate_eps_field(model, traj, path, r_index, v0, avg, sink);
    else
        detail::propagate_limit_field(model, traj, path, r_index, v0, avg, sink);
    return field;
}

// Exponential (Doleans) closed form of the limit derivative equation,
// evaluated by discretizing its ingredients along the frozen path: left-point
// sums of b' - sigma'^2/2 plus the compensated log-correction, the dB-sum of
// sigma', and log(1 + dc_dx) at every realized jump. Refuses (with the jump
// index) if a log argument falls below the positivity floor.
inline MalliavinField closed_form_malliavin(const ModelSpec& model, const Trajectory& traj,
                                            const NoisePath& path, FieldKind kind,
                                            std::size_t r_index, double xi_mark = 0.0) {
    detail::check_pair(model, path);
    detail::check_trajectory_pair(traj, path);
    if (traj.epsilon)
        throw std::invalid_argument("closed_form_malliavin: defined for the limit process only");
    if (r_index >= traj.grid.n_steps)
        throw std::invalid_argument("closed_form_malliavin: r_index out of range");

    const std::size_t n = traj.grid.n_steps;
    const double dt = traj.grid.dt();
    detail::MarkAverageSource avg(model, path, n);

    MalliavinField field;
    field.kind = kind;
    field.r_index = r_index;
    field.xi = xi_mark;
    field.values.assign(n + 1, 0.0);

    const double pref = detail::field_initial_value(model, traj, kind, r_index, xi_mark);
    const bool has_jumps = model.jump_intensity > 0.0;

    std::size_t j = 0;
    const double t_r = traj.grid.node(r_index);
    while (j < path.jumps.size() && path.jumps[j].time <= t_r) ++j;

    double expo = 0.0;
    field.values[r_index] = pref;
    for (std::size_t i = r_index; i < n; ++i) {
        const double t = traj.grid.node(i);
        const double xi = traj.x[i];
        const double sp = model.dsigma_dx(t, xi);
        double incr = (model.db_dx(t, xi) - 0.5 * sp * sp) * dt + sp * path.dB[i];
        if (has_jumps) {
            incr += model.jump_intensity * avg.mean_log_jac(i, xi) * dt;
            const double t_next = traj.grid.node(i + 1);
            while (j < path.jumps.size() && path.jumps[j].time <= t_next) {
                const double g = model.dc_dx(traj.jump_prestates[j], path.jumps[j].mark);
                if (1.0 + g <= kLogJacobianFloor)
                    throw model_rejected_error(
                        "closed_form_malliavin: 1 + dc_dx below the log-Jacobian floor at jump " +
                        std::to_string(j));
                incr += std::log1p(g);
                ++j;
            }
        }
        expo += incr;
        field.values[i + 1] = pref * std::exp(expo);
        if (!std::isfinite(field.values[i + 1]))
            throw numerical_error("closed_form_malliavin: non-finite value", i);
    }
    return field;
}

// L2 norms of a family of fields at a fixed time index (default: terminal).
//   normB2 = sum_r |D_r|^2 dt  over the Brownian fields (left-point in r)
//   normN2 = lambda * sum_r mean_xi |D_{r,xi}|^2 dt  over the jump fields
// Brownian fields must cover r = 0..t_index-1 exactly once; jump fields must
// cover the same range with a uniform number of marks per r (none needed when
// the model has no jumps).
struct NormPair {
    double normB2 = 0.0;
    double normN2 = 0.0;
};

inline NormPair malliavin_norms(const std::vector<MalliavinField>& fields, const ModelSpec& model,
                                const TimeGrid& grid, std::size_t t_index = SIZE_MAX) {
    if (fields.empty()) throw std::invalid_argument("malliavin_norms: empty field collection");
    if (t_index == SIZE_MAX) t_index = grid.n_steps;
    if (t_index > grid.n_steps || t_index == 0)
        throw std::invalid_argument("malliavin_norms: t_index out of range");
    const double dt = grid.dt();

    std::vector<int> seen_b(t_index, 0);
    std::vector<int> seen_n(t_index, 0);
    std::vector<double> jump_sq(t_index, 0.0);
    double normB2 = 0.0;

    for (const auto& f : fields) {
        if (f.values.size() != grid.n_steps + 1)
            throw std::invalid_argument("malliavin_norms: field/grid size mismatch");
        if (f.r_index >= t_index) continue; // no support below t
        const double v = f.values[t_index];
        if (f.kind == FieldKind::brownian) {
            ++seen_b[f.r_index];
            normB2 += v * v * dt;
        } else {
            ++seen_n[f.r_index];
            jump_sq[f.r_index] += v * v;
        }
    }

    for (std::size_t r = 0; r < t_index; ++r)
        if (seen_b[r] != 1)
            throw std::invalid_argument("malliavin_norms: Brownian fields must cover every r once");

    NormPair out;
    out.normB2 = normB2;
    if (model.jump_intensity > 0.0) {
        const int m = seen_n[0];
        if (m < 1)
            throw std::invalid_argument("malliavin_norms: jump fields required when lambda > 0");
        for (std::size_t r = 0; r < t_index; ++r) {
            if (seen_n[r] != m)
                throw std::invalid_argument("malliavin_norms: uneven mark count across r");
            out.normN2 += model.jump_intensity * (jump_sq[r] / m) * dt;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Streaming estimators used by the experiment drivers. They rely on the
// derivative equations being linear: the field with prefactor v0 equals v0
// times the unit-prefactor field, so one propagation per r serves both kinds
// and all marks.
// ---------------------------------------------------------------------------

// Norms of the limit-process derivative fields at node t_index.
inline NormPair terminal_norms(const ModelSpec& model, const Trajectory& traj,
                               const NoisePath& path, std::size_t t_index) {
    detail::check_trajectory_pair(traj, path);
    if (traj.epsilon) throw std::invalid_argument("terminal_norms: limit trajectory required");
    if (t_index == 0 || t_index > traj.grid.n_steps)
        throw std::invalid_argument("terminal_norms: t_index out of range");
    const double dt = traj.grid.dt();
    detail::MarkAverageSource avg(model, path, traj.grid.n_steps);
    const bool has_jumps = model.jump_intensity > 0.0;

    Rng mark_rng(path.seed, path.stream_id, StreamPurpose::field_mark);
    NormPair out;
    for (std::size_t r = 0; r < t_index; ++r) {
        double u = 0.0;
        detail::propagate_limit_field(model, traj, path, r, 1.0, avg,
                                      [&](std::size_t i, double v) {
                                          if (i == t_index) u = v;
                                      });
        const double pref_b = model.sigma(traj.grid.node(r), traj.x[r]);
        out.normB2 += pref_b * pref_b * u * u * dt;
        if (has_jumps) {
            double sq = 0.0;
            for (std::size_t m = 0; m < kNormMarkDraws; ++m) {
                const double xi = model.mark_sampler(mark_rng);
                const double pref_n = model.dc_dz(traj.x[r], xi);
                sq += pref_n * pref_n;
            }
            out.normN2 += model.jump_intensity * (sq / kNormMarkDraws) * u * u * dt;
        }
    }
    return out;
}

// Squared L2(0,T) distance (over r) between the small-mass and limit Brownian
// fields at node t_index, both propagated along the same noise realization.
inline double terminal_brownian_gap2(const ModelSpec& model, const Trajectory& limit_traj,
                                     const Trajectory& eps_traj, const NoisePath& path,
                                     std::size_t t_index) {
    detail::check_trajectory_pair(limit_traj, path);
    detail::check_trajectory_pair(eps_traj, path);
    if (!eps_traj.epsilon || eps_traj.scheme != Scheme::sk_exponential)
        throw std::invalid_argument("terminal_brownian_gap2: exponential-scheme trajectory required");
    if (t_index == 0 || t_index > path.grid.n_steps)
        throw std::invalid_argument("terminal_brownian_gap2: t_index out of range");

    const double dt = path.grid.dt();
    detail::MarkAverageSource avg(model, path, path.grid.n_steps);
    double acc = 0.0;
    for (std::size_t r = 0; r < t_index; ++r) {
        const double t_r = path.grid.node(r);
        double u_limit = 0.0, u_eps = 0.0;
        detail::propagate_limit_field(model, limit_traj, path, r, 1.0, avg,
                                      [&](std::size_t i, double v) {
                                          if (i == t_index) u_limit = v;
                                      });
        detail::propagate_eps_field(model, eps_traj, path, r, 1.0, avg,
                                    [&](std::size_t i, double v) {
                                        if (i == t_index) u_eps = v;
                                    });
        const double d_limit = model.sigma(t_r, limit_traj.x[r]) * u_limit;
        const double d_eps = model.sigma(t_r, eps_traj.x[r]) * u_eps;
        acc += (d_eps - d_limit) * (d_eps - d_limit) * dt;
    }
    return acc;
}

} // namespace skjump
