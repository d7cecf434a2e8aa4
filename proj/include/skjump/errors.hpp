#pragma once

#include <stdexcept>
#include <string>

namespace skjump {

// Model fails a structural requirement (e.g. the log-Jacobian floor), as
// opposed to merely failing an assumption probe.
class model_rejected_error : public std::runtime_error {
public:
    explicit model_rejected_error(const std::string& msg) : std::runtime_error(msg) {}
};

// A simulated path produced a non-finite value. Carries the step index.
class numerical_error : public std::runtime_error {
public:
    numerical_error(const std::string& msg, std::size_t step)
        : std::runtime_error(msg + " (step " + std::to_string(step) + ")"), step_index(step) {}
    std::size_t step_index;
};

class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Planned Kolmogorov signal falls below the statistical noise floor.
class noise_floor_error : public std::runtime_error {
public:
    noise_floor_error(const std::string& msg, std::size_t required)
        : std::runtime_error(msg), required_n_paths(required) {}
    std::size_t required_n_paths;
};

} // namespace skjump
