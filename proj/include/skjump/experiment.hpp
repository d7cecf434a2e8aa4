#pragma once

#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "skjump/config.hpp"
#include "skjump/errors.hpp"
#include "skjump/integrate.hpp"
#include "skjump/model.hpp"
#include "skjump/noise.hpp"
#include "skjump/stats.hpp"

namespace skjump {

inline constexpr const char* kVersion = "0.1.0";

// Two-sample Kolmogorov statistic fluctuates at scale ~1/sqrt(n); a measured
// distance is only meaningful well above that floor.
inline double ks_noise_floor(std::size_t n_paths) {
    return 1.36 / std::sqrt(static_cast<double>(n_paths));
}

struct NoiseFloorPlan {
    bool ok = false;
    std::size_t required_n_paths = 0;
};

// Checks sqrt(eps_min) >= 5 * 1.36 / sqrt(n_paths); when violated, reports
// the smallest adequate path count.
inline NoiseFloorPlan plan_noise_floor(const std::vector<double>& epsilons, std::size_t n_paths) {
    if (epsilons.empty()) throw std::invalid_argument("plan_noise_floor: no epsilons");
    const double eps_min = *std::min_element(epsilons.begin(), epsilons.end());
    NoiseFloorPlan plan;
    plan.ok = std::sqrt(eps_min) >= 5.0 * ks_noise_floor(n_paths);
    if (!plan.ok)
        plan.required_n_paths =
            static_cast<std::size_t>(std::ceil(5.0 * 1.36 * 5.0 * 1.36 / eps_min));
    return plan;
}

// Static block partition over [0, n). Work items must be independent; any
// scheduling yields identical results because all output goes to
// caller-provided per-index slots.
inline void parallel_for(std::size_t n, unsigned threads,
                         const std::function<void(std::size_t)>& fn) {
    if (threads == 0) threads = 1;
    if (threads == 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    std::exception_ptr first_error;
    std::mutex err_mutex;
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            const std::size_t lo = n * w / threads;
            const std::size_t hi = n * (w + 1) / threads;
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Coupled-ensemble collection shared by the strong-error and Kolmogorov
// experiments. Values are indexed by path so the reduction order is fixed
// regardless of scheduling.
// ---------------------------------------------------------------------------

struct CoupledEnsemble {
    std::size_t n_paths = 0;
    std::vector<double> epsilons;
    std::vector<std::size_t> t_indices;
    // x_limit[(e * n_paths + path) * n_t + ti]; the limit values are repeated
    // per eps when the direct scheme resamples fine noise per eps.
    std::vector<double> x_limit;
    std::vector<double> x_eps;
    std::vector<std::uint8_t> aborted; // [e * n_paths + path]

    std::size_t aborts_for(std::size_t e) const {
        std::size_t k = 0;
        for (std::size_t p = 0; p < n_paths; ++p) k += aborted[e * n_paths + p];
        return k;
    }
};

// Simulates n_paths coupled (limit, small-mass) pairs and records the state
// at the requested nodes for every eps. With the exponential scheme both
// processes share one noise path per path index; with the direct scheme the
// noise is sampled on the eps-dependent fine grid and coarsened for the
// limit run.
inline CoupledEnsemble collect_coupled(const ModelSpec& model, const ExperimentConfig& cfg,
                                       unsigned threads) {
    const std::vector<std::size_t> t_idx = t_eval_indices(cfg);
    const std::size_t n_t = t_idx.size();
    const std::size_t n_e = cfg.epsilons.size();

    CoupledEnsemble out;
    out.n_paths = cfg.n_paths;
    out.epsilons = cfg.epsilons;
    out.t_indices = t_idx;
    out.x_limit.assign(n_e * cfg.n_paths * n_t, 0.0);
    out.x_eps.assign(n_e * cfg.n_paths * n_t, 0.0);
    out.aborted.assign(n_e * cfg.n_paths, 0);

    const TimeGrid grid(cfg.T, cfg.n_steps);

    if (cfg.sk_scheme == Scheme::sk_exponential) {
        parallel_for(cfg.n_paths, threads, [&](std::size_t path_idx) {
            NoisePath path = sample_noise(grid, model.jump_intensity, model.mark_sampler,
                                          cfg.seed, path_idx);
            bool limit_ok = true;
            std::vector<double> limit_vals(n_t, 0.0);
            try {
                Trajectory lt = simulate_limit(model, path);
                for (std::size_t k = 0; k < n_t; ++k) limit_vals[k] = lt.x[t_idx[k]];
            } catch (const numerical_error&) {
                limit_ok = false;
            }
            for (std::size_t e = 0; e < n_e; ++e) {
                const std::size_t slot = e * cfg.n_paths + path_idx;
                if (!limit_ok) {
                    out.aborted[slot] = 1;
                    continue;
                }
                try {
                    Trajectory et = simulate_sk_exponential(model, path, cfg.epsilons[e]);
                    for (std::size_t k = 0; k < n_t; ++k) {
                        out.x_limit[slot * n_t + k] = limit_vals[k];
                        out.x_eps[slot * n_t + k] = et.x[t_idx[k]];
                    }
                } catch (const numerical_error&) {
                    out.aborted[slot] = 1;
                }
            }
        });
    } else {
        const double dt = grid.dt();
        for (std::size_t e = 0; e < n_e; ++e) {
            const double eps = cfg.epsilons[e];
            const auto factor = static_cast<std::size_t>(std::max(1.0, std::ceil(10.0 * dt / eps)));
            const TimeGrid fine(cfg.T, cfg.n_steps * factor);
            parallel_for(cfg.n_paths, threads, [&](std::size_t path_idx) {
                const std::size_t slot = e * cfg.n_paths + path_idx;
                try {
                    NoisePath fine_path = sample_noise(fine, model.jump_intensity,
                                                       model.mark_sampler, cfg.seed, path_idx);
                    Trajectory dt_traj = simulate_sk_direct(model, fine_path, eps, factor);
                    Trajectory lt = simulate_limit(model, coarsen(fine_path, factor));
                    for (std::size_t k = 0; k < n_t; ++k) {
                        out.x_limit[slot * n_t + k] = lt.x[t_idx[k]];
                        out.x_eps[slot * n_t + k] = dt_traj.x[t_idx[k]];
                    }
                } catch (const numerical_error&) {
                    out.aborted[slot] = 1;
                }
            });
        }
    }
    return out;
}

namespace detail {

inline EstimateWithError coupled_lp(const CoupledEnsemble& ens, std::size_t e, std::size_t ti,
                                    double p) {
    std::vector<std::pair<double, double>> pairs;
    pairs.reserve(ens.n_paths);
    const std::size_t n_t = ens.t_indices.size();
    for (std::size_t path = 0; path < ens.n_paths; ++path) {
        const std::size_t slot = e * ens.n_paths + path;
        if (ens.aborted[slot]) continue;
        pairs.emplace_back(ens.x_eps[slot * n_t + ti], ens.x_limit[slot * n_t + ti]);
    }
    if (pairs.size() >= 2) return lp_error(pairs, p);
    if (pairs.empty()) throw numerical_error("coupled_lp: every path aborted", 0);
    const double gap = std::pow(std::abs(pairs[0].first - pairs[0].second), p);
    return {gap, 0.0, 1};
}

} // namespace detail

// ---------------------------------------------------------------------------
// Experiment driver
// ---------------------------------------------------------------------------

struct ResultBundle {
    std::vector<std::string> files; // relative to out_dir
    std::size_t total_aborts = 0;
    std::string manifest_path;
};

namespace detail {

class CsvFile {
public:
    CsvFile(const std::filesystem::path& dir, const std::string& name) : name_(name) {
        os_.open(dir / name, std::ios::binary);
        if (!os_) throw std::runtime_error("cannot open output file " + (dir / name).string());
    }
    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) os_ << ',';
            os_ << cells[i];
        }
        os_ << '\n';
        ++rows_;
    }
    const std::string& name() const { return name_; }
    std::size_t rows() const { return rows_; }

private:
    std::ofstream os_;
    std::string name_;
    std::size_t rows_ = 0;
};

inline std::string fmt_u(std::size_t v) { return std::to_string(v); }

} // namespace detail

inline unsigned resolve_threads(const ExperimentConfig& cfg) {
    if (cfg.threads) return std::max(1u, *cfg.threads);
    if (const char* env = std::getenv("SKJUMP_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end && *end == '\0' && v >= 1) return static_cast<unsigned>(v);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

// Runs the configured experiment and writes CSV files plus a JSON manifest
// into out_dir. Reruns with an identical config and seed produce
// byte-identical CSV bodies at any thread count.
inline ResultBundle run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    validate_config(cfg);
    const ModelSpec model = builtin_model(cfg.model_name, cfg.model_params);
    const unsigned threads = resolve_threads(cfg);
    std::filesystem::create_directories(out_dir);

    ResultBundle bundle;
    nlohmann::json manifest;
    manifest["version"] = kVersion;
    manifest["config_hash"] = config_hash(cfg);
    manifest["seed"] = cfg.seed;
    manifest["experiment"] = to_string(cfg.experiment);
    manifest["config"] = canonical_config(cfg);
    nlohmann::json outputs = nlohmann::json::array();

    auto finish_file = [&](detail::CsvFile& f) {
        outputs.push_back({{"file", f.name()}, {"rows", f.rows()}});
        bundle.files.push_back(f.name());
    };

    using detail::fmt_g17;
    using detail::fmt_u;

    switch (cfg.experiment) {
        case ExperimentKind::strong_rate: {
            CoupledEnsemble ens = collect_coupled(model, cfg, threads);
            detail::CsvFile csv(out_dir, "strong_rate.csv");
            csv.row({"epsilon", "t", "p", "estimate", "std_error", "n_paths", "aborts"});
            for (std::size_t ti = 0; ti < ens.t_indices.size(); ++ti) {
                for (double p : cfg.p_values) {
                    std::vector<std::pair<double, double>> pts;
                    for (std::size_t e = 0; e < cfg.epsilons.size(); ++e) {
                        const std::size_t ab = ens.aborts_for(e);
                        bundle.total_aborts += ti == 0 && p == cfg.p_values.front() ? ab : 0;
                        EstimateWithError est = detail::coupled_lp(ens, e, ti, p);
                        csv.row({fmt_g17(cfg.epsilons[e]), fmt_g17(cfg.t_eval[ti]), fmt_g17(p),
                                 fmt_g17(est.value), fmt_g17(est.std_error), fmt_u(est.n),
                                 fmt_u(ab)});
                        if (est.value > 0.0) pts.emplace_back(cfg.epsilons[e], est.value);
                    }
                    RateFit fit = fit_rate(pts);
                    csv.row({"RATE", fmt_g17(fit.slope), fmt_g17(fit.slope_se),
                             fmt_g17(fit.r_squared)});
                }
            }
            finish_file(csv);
            break;
        }

        case ExperimentKind::kolmogorov_rate: {
            NoiseFloorPlan plan = plan_noise_floor(cfg.epsilons, cfg.n_paths);
            if (!plan.ok)
                throw noise_floor_error(
                    "kolmogorov_rate: predicted signal sqrt(eps_min) is below 5x the KS noise "
                    "floor; need n_paths >= " +
                        std::to_string(plan.required_n_paths),
                    plan.required_n_paths);
            CoupledEnsemble ens = collect_coupled(model, cfg, threads);
            const double floor = ks_noise_floor(cfg.n_paths);
            detail::CsvFile csv(out_dir, "kolmogorov_rate.csv");
            csv.row({"epsilon", "t", "ks", "noise_floor", "n_paths"});
            const std::size_t n_t = ens.t_indices.size();
            for (std::size_t ti = 0; ti < n_t; ++ti) {
                std::vector<std::pair<double, double>> pts;
                for (std::size_t e = 0; e < cfg.epsilons.size(); ++e) {
                    std::vector<double> xs, xe;
                    xs.reserve(ens.n_paths);
                    xe.reserve(ens.n_paths);
                    for (std::size_t path = 0; path < ens.n_paths; ++path) {
                        const std::size_t slot = e * ens.n_paths + path;
                        if (ens.aborted[slot]) continue;
                        xs.push_back(ens.x_limit[slot * n_t + ti]);
                        xe.push_back(ens.x_eps[slot * n_t + ti]);
                    }
                    if (ti == 0) bundle.total_aborts += ens.aborts_for(e);
                    const double ks = ks_distance(xe, xs);
                    csv.row({fmt_g17(cfg.epsilons[e]), fmt_g17(cfg.t_eval[ti]), fmt_g17(ks),
                             fmt_g17(floor), fmt_u(xs.size())});
                    if (ks > 0.0) pts.emplace_back(cfg.epsilons[e], ks);
                }
                RateFit fit = fit_rate(pts);
                csv.row({"RATE", fmt_g17(fit.slope), fmt_g17(fit.slope_se), fmt_g17(fit.r_squared)});
            }
            finish_file(csv);
            break;
        }

        case ExperimentKind::malliavin_check: {
            // Phase A: propagated vs closed-form fields on the limit process,
            // at three dt refinements.
            const std::size_t levels = 3;
            std::vector<double> gap_b(levels, 0.0), gap_n(levels, 0.0);
            std::vector<std::size_t> level_aborts(levels, 0);
            detail::CsvFile oracle(out_dir, "malliavin_oracle.csv");
            oracle.row({"dt", "max_rel_gap_brownian", "max_rel_gap_jump", "n_paths", "aborts"});
            for (std::size_t lvl = 0; lvl < levels; ++lvl) {
                const std::size_t n = cfg.n_steps << lvl;
                const TimeGrid grid(cfg.T, n);
                std::vector<double> per_path_b(cfg.n_paths, 0.0);
                std::vector<double> per_path_n(cfg.n_paths, 0.0);
                std::vector<std::uint8_t> ab(cfg.n_paths, 0);
                parallel_for(cfg.n_paths, threads, [&](std::size_t path_idx) {
                    try {
                        NoisePath path = sample_noise(grid, model.jump_intensity,
                                                      model.mark_sampler, cfg.seed, path_idx);
                        Trajectory lt = simulate_limit(model, path);
                        Rng mark_rng(cfg.seed, path_idx, StreamPurpose::field_mark);
                        double worst_b = 0.0, worst_n = 0.0;
                        for (std::size_t j = 0; j < 10; ++j) {
                            const std::size_t r = j * n / 10;
                            MalliavinField pb =
                                propagate_malliavin(model, lt, path, FieldKind::brownian, r);
                            MalliavinField cb =
                                closed_form_malliavin(model, lt, path, FieldKind::brownian, r);
                            for (std::size_t i = r; i <= n; ++i) {
                                const double den = std::max(std::abs(cb.values[i]), 1e-12);
                                worst_b = std::max(worst_b,
                                                   std::abs(pb.values[i] - cb.values[i]) / den);
                            }
                            if (model.jump_intensity > 0.0) {
                                const double xi = model.mark_sampler(mark_rng);
                                MalliavinField pn =
                                    propagate_malliavin(model, lt, path, FieldKind::jump, r, xi);
                                MalliavinField cn =
                                    closed_form_malliavin(model, lt, path, FieldKind::jump, r, xi);
                                for (std::size_t i = r; i <= n; ++i) {
                                    const double den = std::max(std::abs(cn.values[i]), 1e-12);
                                    worst_n = std::max(
                                        worst_n, std::abs(pn.values[i] - cn.values[i]) / den);
                                }
                            }
                        }
                        per_path_b[path_idx] = worst_b;
                        per_path_n[path_idx] = worst_n;
                    } catch (const numerical_error&) {
                        ab[path_idx] = 1;
                    }
                });
                for (std::size_t pth = 0; pth < cfg.n_paths; ++pth) {
                    level_aborts[lvl] += ab[pth];
                    gap_b[lvl] = std::max(gap_b[lvl], per_path_b[pth]);
                    gap_n[lvl] = std::max(gap_n[lvl], per_path_n[pth]);
                }
                bundle.total_aborts += level_aborts[lvl];
                oracle.row({fmt_g17(grid.dt()), fmt_g17(gap_b[lvl]), fmt_g17(gap_n[lvl]),
                            fmt_u(cfg.n_paths), fmt_u(level_aborts[lvl])});
            }
            const double g0 = std::max(gap_b[0], gap_n[0]);
            const double g1 = std::max(gap_b[1], gap_n[1]);
            const double g2 = std::max(gap_b[2], gap_n[2]);
            oracle.row({"CONV", fmt_g17(g1 > 0 ? g0 / g1 : 0.0), fmt_g17(g2 > 0 ? g1 / g2 : 0.0)});
            finish_file(oracle);

            // Phase B: squared L2 distance between the small-mass and limit
            // Brownian fields across epsilons.
            if (!cfg.epsilons.empty()) {
                const TimeGrid grid(cfg.T, cfg.n_steps);
                const auto t_idx = t_eval_indices(cfg);
                const std::size_t n_t = t_idx.size();
                const std::size_t n_e = cfg.epsilons.size();
                std::vector<double> gap2(n_e * cfg.n_paths * n_t, 0.0);
                std::vector<std::uint8_t> ab(n_e * cfg.n_paths, 0);
                parallel_for(cfg.n_paths, threads, [&](std::size_t path_idx) {
                    NoisePath path = sample_noise(grid, model.jump_intensity, model.mark_sampler,
                                                  cfg.seed, path_idx);
                    Trajectory lt;
                    bool limit_ok = true;
                    try {
                        lt = simulate_limit(model, path);
                    } catch (const numerical_error&) {
                        limit_ok = false;
                    }
                    for (std::size_t e = 0; e < n_e; ++e) {
                        const std::size_t slot = e * cfg.n_paths + path_idx;
                        if (!limit_ok) {
                            ab[slot] = 1;
                            continue;
                        }
                        try {
                            Trajectory et = simulate_sk_exponential(model, path, cfg.epsilons[e]);
                            for (std::size_t k = 0; k < n_t; ++k)
                                gap2[slot * n_t + k] =
                                    terminal_brownian_gap2(model, lt, et, path, t_idx[k]);
                        } catch (const numerical_error&) {
                            ab[slot] = 1;
                        }
                    }
                });
                detail::CsvFile csv(out_dir, "malliavin_eps_rate.csv");
                csv.row({"epsilon", "t", "estimate", "std_error", "n_paths", "aborts"});
                for (std::size_t k = 0; k < n_t; ++k) {
                    std::vector<std::pair<double, double>> pts;
                    for (std::size_t e = 0; e < n_e; ++e) {
                        std::vector<double> vals;
                        std::size_t aborts = 0;
                        for (std::size_t pth = 0; pth < cfg.n_paths; ++pth) {
                            const std::size_t slot = e * cfg.n_paths + pth;
                            if (ab[slot]) {
                                ++aborts;
                                continue;
                            }
                            vals.push_back(gap2[slot * n_t + k]);
                        }
                        if (k == 0) bundle.total_aborts += aborts;
                        EstimateWithError est = detail::mean_with_se(vals);
                        csv.row({fmt_g17(cfg.epsilons[e]), fmt_g17(cfg.t_eval[k]),
                                 fmt_g17(est.value), fmt_g17(est.std_error), fmt_u(est.n),
                                 fmt_u(aborts)});
                        if (est.value > 0.0) pts.emplace_back(cfg.epsilons[e], est.value);
                    }
                    RateFit fit = fit_rate(pts);
                    csv.row({"RATE", fmt_g17(fit.slope), fmt_g17(fit.slope_se),
                             fmt_g17(fit.r_squared)});
                }
                finish_file(csv);
            }
            break;
        }

        case ExperimentKind::inverse_norm: {
            const TimeGrid grid(cfg.T, cfg.n_steps);
            const auto t_idx = t_eval_indices(cfg);
            const std::size_t n_t = t_idx.size();
            std::vector<double> norms(cfg.n_paths * n_t, 0.0);
            std::vector<std::uint8_t> ab(cfg.n_paths, 0);
            parallel_for(cfg.n_paths, threads, [&](std::size_t path_idx) {
                try {
                    NoisePath path = sample_noise(grid, model.jump_intensity, model.mark_sampler,
                                                  cfg.seed, path_idx);
                    Trajectory lt = simulate_limit(model, path);
                    for (std::size_t k = 0; k < n_t; ++k)
                        norms[path_idx * n_t + k] = terminal_norms(model, lt, path, t_idx[k]).normB2;
                } catch (const numerical_error&) {
                    ab[path_idx] = 1;
                }
            });
            std::size_t aborts = 0;
            for (auto a : ab) aborts += a;
            bundle.total_aborts += aborts;

            detail::CsvFile csv(out_dir, "inverse_norm.csv");
            csv.row({"t", "p", "estimate", "std_error", "n_paths", "aborts"});
            for (double p : cfg.p_values) {
                double c_min = 0.0, c_max = 0.0, c_sum = 0.0;
                for (std::size_t k = 0; k < n_t; ++k) {
                    std::vector<double> n2;
                    for (std::size_t pth = 0; pth < cfg.n_paths; ++pth)
                        if (!ab[pth]) n2.push_back(norms[pth * n_t + k]);
                    EstimateWithError est = inverse_norm_moment(n2, p);
                    csv.row({fmt_g17(cfg.t_eval[k]), fmt_g17(p), fmt_g17(est.value),
                             fmt_g17(est.std_error), fmt_u(est.n), fmt_u(aborts)});
                    const double c = std::pow(cfg.t_eval[k], p) * est.value;
                    c_sum += c;
                    c_min = k == 0 ? c : std::min(c_min, c);
                    c_max = k == 0 ? c : std::max(c_max, c);
                }
                const double c_mean = c_sum / static_cast<double>(n_t);
                const double dev = std::max(c_max / c_mean - 1.0, 1.0 - c_min / c_mean);
                csv.row({"CFIT", fmt_g17(p), fmt_g17(c_mean), fmt_g17(dev)});
            }
            finish_file(csv);
            break;
        }

        case ExperimentKind::assumptions: {
            AssumptionReport rep =
                validate_assumptions(model, cfg.probe_box, cfg.n_probes, cfg.seed);
            detail::CsvFile csv(out_dir, "assumptions.csv");
            csv.row({"h1_lipschitz_ok", "h1_growth_ok", "h2_deriv_bounded_ok",
                     "h2_jump_moments_ok", "worst_ratio", "probe_count"});
            csv.row({fmt_u(rep.h1_lipschitz_ok), fmt_u(rep.h1_growth_ok),
                     fmt_u(rep.h2_deriv_bounded_ok), fmt_u(rep.h2_jump_moments_ok),
                     fmt_g17(rep.worst_ratio), fmt_u(rep.probe_count)});
            finish_file(csv);
            break;
        }
    }

    manifest["aborts"] = bundle.total_aborts;
    manifest["outputs"] = outputs;
    const auto manifest_path = out_dir / "manifest.json";
    std::ofstream mos(manifest_path, std::ios::binary);
    mos << manifest.dump(2) << "\n";
    bundle.manifest_path = manifest_path.string();
    return bundle;
}

} // namespace skjump
