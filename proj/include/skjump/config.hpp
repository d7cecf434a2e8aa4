#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "skjump/errors.hpp"
#include "skjump/integrate.hpp"
#include "skjump/model.hpp"

namespace skjump {

enum class ExperimentKind { strong_rate, kolmogorov_rate, malliavin_check, inverse_norm, assumptions };

inline const char* to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::strong_rate: return "strong_rate";
        case ExperimentKind::kolmogorov_rate: return "kolmogorov_rate";
        case ExperimentKind::malliavin_check: return "malliavin_check";
        case ExperimentKind::inverse_norm: return "inverse_norm";
        case ExperimentKind::assumptions: return "assumptions";
    }
    return "?";
}

struct ExperimentConfig {
    std::string model_name;
    std::map<std::string, double> model_params;

    ExperimentKind experiment = ExperimentKind::strong_rate;
    double T = 1.0;
    std::size_t n_steps = 1;
    std::vector<double> t_eval;    // within (0, T], aligned to grid nodes
    std::vector<double> epsilons;  // descending, in (0, 1)
    std::size_t n_paths = 1;
    std::vector<double> p_values;
    Scheme sk_scheme = Scheme::sk_exponential;
    std::uint64_t seed = 0;
    std::optional<unsigned> threads; // unset = resolve from env / hardware

    ProbeBox probe_box;
    std::size_t n_probes = 1000;
};

namespace detail {

inline std::string fmt_g17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing junk");
        return x;
    } catch (const std::exception&) {
        throw config_error("config: key '" + key + "' has non-numeric value '" + v + "'");
    }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing junk");
        return x;
    } catch (const std::exception&) {
        throw config_error("config: key '" + key + "' must be a nonnegative integer, got '" + v + "'");
    }
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_double(key, item));
    }
    return out;
}

} // namespace detail

// Flat key = value format with dotted keys; '#' starts a comment. Unknown
// keys are rejected with the offending key named.
inline ExperimentConfig parse_config(std::istream& in) {
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(line_no) + ": expected key = value");
        std::string key = detail::trim(line.substr(0, eq));
        std::string val = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw config_error("config line " + std::to_string(line_no) + ": empty key");
        if (kv.count(key)) throw config_error("config: duplicate key '" + key + "'");
        kv[key] = val;
    }

    ExperimentConfig cfg;
    auto take = [&](const std::string& key) -> std::optional<std::string> {
        auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        std::string v = it->second;
        kv.erase(it);
        return v;
    };

    if (auto v = take("model.name")) cfg.model_name = *v;
    else throw config_error("config: missing required key 'model.name'");

    // every remaining model.* key is a numeric model parameter
    for (auto it = kv.begin(); it != kv.end();) {
        if (it->first.rfind("model.", 0) == 0) {
            cfg.model_params[it->first.substr(6)] = detail::parse_double(it->first, it->second);
            it = kv.erase(it);
        } else {
            ++it;
        }
    }

    if (auto v = take("run.experiment")) {
        if (*v == "strong_rate") cfg.experiment = ExperimentKind::strong_rate;
        else if (*v == "kolmogorov_rate") cfg.experiment = ExperimentKind::kolmogorov_rate;
        else if (*v == "malliavin_check") cfg.experiment = ExperimentKind::malliavin_check;
        else if (*v == "inverse_norm") cfg.experiment = ExperimentKind::inverse_norm;
        else if (*v == "assumptions") cfg.experiment = ExperimentKind::assumptions;
        else throw config_error("config: unknown experiment '" + *v + "'");
    } else {
        throw config_error("config: missing required key 'run.experiment'");
    }

    if (auto v = take("run.T")) cfg.T = detail::parse_double("run.T", *v);
    if (auto v = take("run.n_steps"))
        cfg.n_steps = static_cast<std::size_t>(detail::parse_u64("run.n_steps", *v));
    if (auto v = take("run.t_eval")) cfg.t_eval = detail::parse_list("run.t_eval", *v);
    if (auto v = take("run.epsilons")) cfg.epsilons = detail::parse_list("run.epsilons", *v);
    if (auto v = take("run.n_paths"))
        cfg.n_paths = static_cast<std::size_t>(detail::parse_u64("run.n_paths", *v));
    if (auto v = take("run.p_values")) cfg.p_values = detail::parse_list("run.p_values", *v);
    if (auto v = take("run.sk_scheme")) {
        if (*v == "direct") cfg.sk_scheme = Scheme::sk_direct;
        else if (*v == "exponential") cfg.sk_scheme = Scheme::sk_exponential;
        else throw config_error("config: run.sk_scheme must be 'direct' or 'exponential'");
    }
    if (auto v = take("run.seed")) cfg.seed = detail::parse_u64("run.seed", *v);
    if (auto v = take("run.threads")) {
        if (*v == "auto") cfg.threads.reset();
        else cfg.threads = static_cast<unsigned>(detail::parse_u64("run.threads", *v));
    }

    if (auto v = take("probe.x_min")) cfg.probe_box.x_min = detail::parse_double("probe.x_min", *v);
    if (auto v = take("probe.x_max")) cfg.probe_box.x_max = detail::parse_double("probe.x_max", *v);
    if (auto v = take("probe.t_min")) cfg.probe_box.t_min = detail::parse_double("probe.t_min", *v);
    if (auto v = take("probe.t_max")) cfg.probe_box.t_max = detail::parse_double("probe.t_max", *v);
    if (auto v = take("probe.z_min")) cfg.probe_box.z_min = detail::parse_double("probe.z_min", *v);
    if (auto v = take("probe.z_max")) cfg.probe_box.z_max = detail::parse_double("probe.z_max", *v);
    if (auto v = take("probe.n"))
        cfg.n_probes = static_cast<std::size_t>(detail::parse_u64("probe.n", *v));

    if (!kv.empty()) throw config_error("config: unknown key '" + kv.begin()->first + "'");
    if (cfg.t_eval.empty()) cfg.t_eval = {cfg.T};
    return cfg;
}

inline ExperimentConfig parse_config_string(const std::string& text) {
    std::istringstream ss(text);
    return parse_config(ss);
}

// Maps each t in t_eval to its grid node index; rejects misaligned values.
inline std::vector<std::size_t> t_eval_indices(const ExperimentConfig& cfg) {
    std::vector<std::size_t> idx;
    const double dt = cfg.T / static_cast<double>(cfg.n_steps);
    for (double t : cfg.t_eval) {
        if (!(t > 0.0) || t > cfg.T * (1.0 + 1e-12))
            throw config_error("config: t_eval entry " + detail::fmt_g17(t) + " outside (0, T]");
        double k = t / dt;
        auto ki = static_cast<std::size_t>(std::llround(k));
        if (ki == 0 || std::abs(k - static_cast<double>(ki)) > 1e-9 * static_cast<double>(cfg.n_steps))
            throw config_error("config: t_eval entry " + detail::fmt_g17(t) +
                               " does not land on a grid node");
        idx.push_back(std::min(ki, cfg.n_steps));
    }
    return idx;
}

// Structural validation beyond parsing; throws config_error with the
// offending field named.
inline void validate_config(const ExperimentConfig& cfg) {
    if (!(cfg.T > 0.0) || !std::isfinite(cfg.T)) throw config_error("config: run.T must be > 0");
    if (cfg.n_steps < 1) throw config_error("config: run.n_steps must be >= 1");
    if (cfg.n_paths < 1) throw config_error("config: run.n_paths must be >= 1");
    builtin_model(cfg.model_name, cfg.model_params); // validates name + params

    t_eval_indices(cfg);

    for (double e : cfg.epsilons)
        if (!(e > 0.0 && e < 1.0))
            throw config_error("config: epsilons must lie in (0, 1)");
    if (!std::is_sorted(cfg.epsilons.rbegin(), cfg.epsilons.rend()))
        throw config_error("config: epsilons must be sorted descending");
    for (std::size_t i = 1; i < cfg.epsilons.size(); ++i)
        if (cfg.epsilons[i] == cfg.epsilons[i - 1])
            throw config_error("config: epsilons must be distinct");

    const bool rate_run = cfg.experiment == ExperimentKind::strong_rate ||
                          cfg.experiment == ExperimentKind::kolmogorov_rate;
    if (rate_run && cfg.epsilons.size() < 3)
        throw config_error("config: rate experiments need at least 3 epsilons");
    if (cfg.experiment == ExperimentKind::malliavin_check && !cfg.epsilons.empty() &&
        cfg.epsilons.size() < 3)
        throw config_error("config: malliavin_check needs 0 or >= 3 epsilons");

    if (cfg.experiment == ExperimentKind::strong_rate) {
        if (cfg.p_values.empty()) throw config_error("config: strong_rate needs run.p_values");
        for (double p : cfg.p_values)
            if (!(p >= 2.0)) throw config_error("config: strong_rate p_values must be >= 2");
    }
    if (cfg.experiment == ExperimentKind::inverse_norm) {
        if (cfg.p_values.empty()) throw config_error("config: inverse_norm needs run.p_values");
        for (double p : cfg.p_values)
            if (!(p >= 1.0)) throw config_error("config: inverse_norm p_values must be >= 1");
    }
    if (cfg.experiment == ExperimentKind::assumptions && cfg.n_probes < 1)
        throw config_error("config: probe.n must be >= 1");

    if (cfg.sk_scheme == Scheme::sk_direct &&
        (cfg.experiment == ExperimentKind::strong_rate ||
         cfg.experiment == ExperimentKind::kolmogorov_rate)) {
        // the fine grid must stay affordable
        const double dt = cfg.T / static_cast<double>(cfg.n_steps);
        const double eps_min = cfg.epsilons.back();
        const double factor = std::ceil(10.0 * dt / eps_min);
        if (factor * static_cast<double>(cfg.n_steps) > 5e7)
            throw config_error("config: direct scheme at eps_min would need > 5e7 fine steps");
    }
}

// Canonical serialization of every semantic field (thread count excluded:
// outputs are invariant under scheduling).
inline std::string canonical_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << "model.name=" << cfg.model_name << "\n";
    for (const auto& [k, v] : cfg.model_params) os << "model." << k << "=" << detail::fmt_g17(v) << "\n";
    os << "run.experiment=" << to_string(cfg.experiment) << "\n";
    os << "run.T=" << detail::fmt_g17(cfg.T) << "\n";
    os << "run.n_steps=" << cfg.n_steps << "\n";
    os << "run.t_eval=";
    for (std::size_t i = 0; i < cfg.t_eval.size(); ++i)
        os << (i ? "," : "") << detail::fmt_g17(cfg.t_eval[i]);
    os << "\n";
    os << "run.epsilons=";
    for (std::size_t i = 0; i < cfg.epsilons.size(); ++i)
        os << (i ? "," : "") << detail::fmt_g17(cfg.epsilons[i]);
    os << "\n";
    os << "run.n_paths=" << cfg.n_paths << "\n";
    os << "run.p_values=";
    for (std::size_t i = 0; i < cfg.p_values.size(); ++i)
        os << (i ? "," : "") << detail::fmt_g17(cfg.p_values[i]);
    os << "\n";
    os << "run.sk_scheme=" << (cfg.sk_scheme == Scheme::sk_direct ? "direct" : "exponential") << "\n";
    os << "run.seed=" << cfg.seed << "\n";
    if (cfg.experiment == ExperimentKind::assumptions) {
        os << "probe.box=" << detail::fmt_g17(cfg.probe_box.x_min) << ","
           << detail::fmt_g17(cfg.probe_box.x_max) << "," << detail::fmt_g17(cfg.probe_box.t_min)
           << "," << detail::fmt_g17(cfg.probe_box.t_max) << ","
           << detail::fmt_g17(cfg.probe_box.z_min) << "," << detail::fmt_g17(cfg.probe_box.z_max)
           << "\n";
        os << "probe.n=" << cfg.n_probes << "\n";
    }
    return os.str();
}

inline std::string config_hash(const ExperimentConfig& cfg) {
    const std::string canon = canonical_config(cfg);
    std::uint64_t h = 1469598103934665603ULL; // FNV-1a 64
    for (unsigned char c : canon) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace skjump
