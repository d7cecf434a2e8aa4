#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "skjump/errors.hpp"
#include "skjump/rng.hpp"

namespace skjump {

// Uniform grid on [0, T]: nodes t_i = i*dt, dt = T/n_steps.
struct TimeGrid {
    double t_end = 1.0;
    std::size_t n_steps = 1;

    TimeGrid() = default;
    TimeGrid(double T, std::size_t n) : t_end(T), n_steps(n) {
        if (!(T > 0.0) || !std::isfinite(T))
            throw std::invalid_argument("TimeGrid: t_end must be finite and > 0");
        if (n < 1) throw std::invalid_argument("TimeGrid: n_steps must be >= 1");
    }

    double dt() const { return t_end / static_cast<double>(n_steps); }
    double node(std::size_t i) const {
        return i == n_steps ? t_end : static_cast<double>(i) * dt();
    }
};

struct JumpEvent {
    double time; // in (0, T]
    double mark; // in R \ {0}
};

// One realization of the driving noise: Brownian increments on the grid plus
// the compound-Poisson events. Shared verbatim by the limit and small-mass
// integrators so that pathwise differences are meaningful.
struct NoisePath {
    TimeGrid grid;
    std::vector<double> dB;       // n_steps increments, each N(0, dt)
    std::vector<JumpEvent> jumps; // strictly increasing times
    double intensity = 0.0;       // Poisson rate lambda
    std::uint64_t seed = 0;
    std::uint64_t stream_id = 0;  // path index within the ensemble
};

using MarkSampler = std::function<double(Rng&)>;

// Draws a full noise realization from the substreams keyed by
// (seed, path_index). Identical arguments give a bit-identical path.
inline NoisePath sample_noise(const TimeGrid& grid, double lambda,
                              const MarkSampler& mark_sampler,
                              std::uint64_t seed, std::uint64_t path_index) {
    if (lambda < 0.0 || !std::isfinite(lambda))
        throw std::invalid_argument("sample_noise: lambda must be finite and >= 0");

    NoisePath path;
    path.grid = grid;
    path.intensity = lambda;
    path.seed = seed;
    path.stream_id = path_index;

    const double sqrt_dt = std::sqrt(grid.dt());
    Rng brownian(seed, path_index, StreamPurpose::brownian);
    path.dB.resize(grid.n_steps);
    for (std::size_t i = 0; i < grid.n_steps; ++i)
        path.dB[i] = brownian.next_gaussian(sqrt_dt);

    if (lambda > 0.0) {
        if (!mark_sampler)
            throw std::invalid_argument("sample_noise: mark sampler required when lambda > 0");
        Rng count_rng(seed, path_index, StreamPurpose::jump_count);
        Rng time_rng(seed, path_index, StreamPurpose::jump_time);
        Rng mark_rng(seed, path_index, StreamPurpose::jump_mark);

        const std::uint64_t n_jumps = count_rng.next_poisson(lambda * grid.t_end);
        std::vector<double> times(n_jumps);
        for (auto& t : times) t = grid.t_end * time_rng.next_unit_right_closed();
        std::sort(times.begin(), times.end());
        // Exact ties have probability ~0; redraw deterministically if they occur.
        for (std::size_t i = 1; i < times.size(); ++i) {
            while (times[i] == times[i - 1])
                times[i] = grid.t_end * time_rng.next_unit_right_closed();
            std::sort(times.begin() + static_cast<std::ptrdiff_t>(i), times.end());
        }

        path.jumps.reserve(n_jumps);
        for (double t : times) {
            double z = mark_sampler(mark_rng);
            if (z == 0.0)
                throw std::invalid_argument("sample_noise: mark sampler returned 0");
            path.jumps.push_back({t, z});
        }
    }
    return path;
}

namespace detail {

// Double-double accumulation: Knuth two-sum captures the exact rounding
// error of every addition, so the pair (hi, lo) carries ~106 bits.
struct ExactSum {
    double hi = 0.0, lo = 0.0;
    void add(double x) {
        double s = hi + x;
        double bv = s - hi;
        double err = (hi - (s - bv)) + (x - bv);
        hi = s;
        lo += err;
        double t = hi + lo; // renormalize
        lo -= t - hi;
        hi = t;
    }
    double value() const { return hi + lo; }
};

} // namespace detail

// Aggregates Brownian increments onto a grid coarser by `factor`. Each coarse
// increment is the correctly rounded sum of the fine increments it covers;
// jumps and key material are passed through unchanged.
inline NoisePath coarsen(const NoisePath& path, std::size_t factor) {
    if (factor == 0 || path.grid.n_steps % factor != 0)
        throw std::invalid_argument("coarsen: factor must divide n_steps");
    if (factor == 1) return path;

    NoisePath coarse = path;
    coarse.grid = TimeGrid(path.grid.t_end, path.grid.n_steps / factor);
    coarse.dB.assign(coarse.grid.n_steps, 0.0);
    for (std::size_t j = 0; j < coarse.grid.n_steps; ++j) {
        detail::ExactSum s;
        for (std::size_t k = 0; k < factor; ++k) s.add(path.dB[j * factor + k]);
        coarse.dB[j] = s.value();
    }
    return coarse;
}

// ---------------------------------------------------------------------------
// Debug dump of a NoisePath. Little-endian layout:
//   f64 t_end | u64 n_steps | f64 intensity | u64 stream_id
//   | n_steps * f64 dB | u64 n_jumps | n_jumps * (f64 time, f64 mark)
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& os, double x) {
    std::uint64_t v;
    std::memcpy(&v, &x, 8);
    put_u64(os, v);
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("noise dump: truncated stream");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double get_f64(std::istream& is) {
    std::uint64_t v = get_u64(is);
    double x;
    std::memcpy(&x, &v, 8);
    return x;
}

} // namespace detail

inline void dump_noise_path(const NoisePath& path, std::ostream& os) {
    detail::put_f64(os, path.grid.t_end);
    detail::put_u64(os, path.grid.n_steps);
    detail::put_f64(os, path.intensity);
    detail::put_u64(os, path.stream_id);
    for (double x : path.dB) detail::put_f64(os, x);
    detail::put_u64(os, path.jumps.size());
    for (const auto& j : path.jumps) {
        detail::put_f64(os, j.time);
        detail::put_f64(os, j.mark);
    }
}

inline NoisePath load_noise_path(std::istream& is) {
    NoisePath path;
    double t_end = detail::get_f64(is);
    std::uint64_t n_steps = detail::get_u64(is);
    path.grid = TimeGrid(t_end, static_cast<std::size_t>(n_steps));
    path.intensity = detail::get_f64(is);
    path.stream_id = detail::get_u64(is);
    path.dB.resize(path.grid.n_steps);
    for (auto& x : path.dB) x = detail::get_f64(is);
    std::uint64_t n_jumps = detail::get_u64(is);
    path.jumps.resize(n_jumps);
    for (auto& j : path.jumps) {
        j.time = detail::get_f64(is);
        j.mark = detail::get_f64(is);
    }
    return path;
}

} // namespace skjump
