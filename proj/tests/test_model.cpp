#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "skjump/model.hpp"

using namespace skjump;

namespace {

ModelSpec quadratic_drift_model() {
    ModelSpec m;
    m.name = "quadratic";
    m.b = [](double, double x) { return x * x; };
    m.db_dx = [](double, double x) { return 2.0 * x; };
    m.d2b_dx2 = [](double, double) { return 2.0; };
    m.sigma = [](double, double) { return 0.0; };
    m.dsigma_dx = [](double, double) { return 0.0; };
    m.d2sigma_dx2 = [](double, double) { return 0.0; };
    m.c = [](double, double) { return 0.0; };
    m.dc_dx = [](double, double) { return 0.0; };
    m.dc_dz = [](double, double) { return 0.0; };
    m.jump_intensity = 0.0;
    m.lipschitz_K = 1.0;
    return m;
}

} // namespace

TEST_CASE("flat diffusion model passes with zero Lipschitz ratio", "[model]") {
    ModelSpec m = builtin_model("pure_brownian", {{"x0", 0.0}});
    m.lipschitz_K = 1.0;
    AssumptionReport rep = validate_assumptions(m, ProbeBox{}, 500, 1);
    CHECK(rep.all_ok());
    CHECK(rep.worst_ratio == 0.0);
    CHECK(rep.probe_count == 500);
}

TEST_CASE("quadratic drift violates global Lipschitz on a wide box", "[model]") {
    ModelSpec m = quadratic_drift_model();
    ProbeBox box;
    box.x_min = -10.0;
    box.x_max = 10.0;
    AssumptionReport rep = validate_assumptions(m, box, 1000, 2);
    CHECK_FALSE(rep.h1_lipschitz_ok);
    CHECK(rep.worst_ratio > 1.0);
}

TEST_CASE("linear model probes agree with hand-computed constants", "[model]") {
    // K = max(a^2, |a|, s^2 + lambda gamma^2 E[z^2], |gamma|) with E[z^2] = 1/3;
    // the drift Lipschitz family binds exactly at ratio 1 when a = 1.
    ModelSpec m = builtin_model(
        "linear_jump_ou",
        {{"a", 1.0}, {"s", 0.5}, {"gamma", 0.3}, {"lambda", 2.0}, {"x0", 0.0}, {"y0", 0.0}});
    CHECK(m.lipschitz_K == 1.0);
    AssumptionReport rep = validate_assumptions(m, ProbeBox{}, 2000, 3);
    CHECK(rep.all_ok());
    CHECK(rep.worst_ratio <= 1.0 + kAssumeTol);
    CHECK(rep.worst_ratio >= 1.0 - 1e-12);

    ModelSpec m2 = builtin_model(
        "linear_jump_ou",
        {{"a", 0.5}, {"s", 1.0}, {"gamma", 0.2}, {"lambda", 3.0}});
    CHECK(m2.lipschitz_K == Catch::Approx(1.0 + 3.0 * 0.04 / 3.0));
    CHECK(validate_assumptions(m2, ProbeBox{}, 2000, 4).all_ok());
}

TEST_CASE("validate_assumptions is deterministic given the seed", "[model]") {
    ModelSpec m = builtin_model("linear_jump_ou",
                                {{"a", 1.0}, {"s", 0.5}, {"gamma", 0.3}, {"lambda", 2.0}});
    AssumptionReport r1 = validate_assumptions(m, ProbeBox{}, 300, 77);
    AssumptionReport r2 = validate_assumptions(m, ProbeBox{}, 300, 77);
    CHECK(r1.worst_ratio == r2.worst_ratio);
    CHECK(r1.all_ok() == r2.all_ok());
}

TEST_CASE("log-Jacobian floor rejects the model outright", "[model]") {
    ModelSpec m = builtin_model("pure_jump", {{"lambda", 1.0}});
    m.c = [](double x, double z) { return -x + 0.1 * z; };
    m.dc_dx = [](double, double) { return -1.0; };
    m.dc_dz = [](double, double) { return 0.1; };
    m.mean_c = nullptr;
    m.mean_dc_dx = nullptr;
    m.mean_log_jac = nullptr;
    CHECK_THROWS_AS(validate_assumptions(m, ProbeBox{}, 50, 5), model_rejected_error);
}

TEST_CASE("builtin_model rejects bad requests", "[model]") {
    CHECK_THROWS_AS(builtin_model("nope"), std::invalid_argument);
    CHECK_THROWS_AS(builtin_model("linear_jump_ou", {{"a", 1.0}}), std::invalid_argument);
    CHECK_THROWS_AS(builtin_model("linear_jump_ou", {{"a", 1.0},
                                                     {"s", 0.5},
                                                     {"gamma", 0.3},
                                                     {"lambda", -1.0}}),
                    std::invalid_argument);
    CHECK_THROWS_AS(builtin_model("pure_brownian", {{"bogus", 1.0}}), std::invalid_argument);
    CHECK_THROWS_AS(
        builtin_model("linear_jump_ou",
                      {{"a", std::nan("")}, {"s", 0.5}, {"gamma", 0.3}, {"lambda", 2.0}}),
        std::invalid_argument);
}

TEST_CASE("builtin models populate their closed-form pieces", "[model]") {
    ModelSpec relax = builtin_model("deterministic_relax", {{"x0", 1.0}, {"y0", 2.0}});
    CHECK(relax.x0 == 1.0);
    CHECK(relax.y0 == 2.0);
    CHECK(relax.jump_intensity == 0.0);
    CHECK(relax.b(0.3, 4.2) == 0.0);
    CHECK(relax.sigma(0.3, 4.2) == 0.0);

    ModelSpec pj = builtin_model("pure_jump", {{"lambda", 2.0}});
    CHECK(pj.c(1.5, 0.25) == 0.25);
    CHECK(pj.dc_dz(0.0, 0.5) == 1.0);
    CHECK(pj.mean_c(3.0) == 0.0);
}

TEST_CASE("supplied derivatives agree with finite differences", "[model]") {
    for (const char* name : {"pure_brownian", "deterministic_relax", "pure_jump"}) {
        std::map<std::string, double> params;
        if (std::string(name) == "pure_jump") params["lambda"] = 2.0;
        ModelSpec m = builtin_model(name, params);
        CHECK(derivative_consistency(m, ProbeBox{}, 100, 11) <= 1e-5);
    }
    ModelSpec lin = builtin_model("linear_jump_ou",
                                  {{"a", 1.0}, {"s", 0.5}, {"gamma", 0.3}, {"lambda", 2.0}});
    CHECK(derivative_consistency(lin, ProbeBox{}, 100, 11) <= 1e-5);

    // an inconsistent derivative is flagged
    ModelSpec bad = quadratic_drift_model();
    bad.db_dx = [](double, double x) { return 3.0 * x; };
    CHECK(derivative_consistency(bad, ProbeBox{}, 100, 11) > 1e-2);
}
