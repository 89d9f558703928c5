#include <catch2/catch_amalgamated.hpp>

#include "cnfrom/autodiff.hpp"
#include "test_support.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <random>

using namespace cnfrom;
using cnfrom::testing::central_diff;
using cnfrom::testing::random_vector;
using cnfrom::testing::rel_err;

namespace {

// Small random MLP recorded on a tape: inputs -> tanh layer -> tanh layer -> scalar.
// Used as the generic expression for the finite-difference oracles.
ad::Tape make_mlp_tape(int n_in, int width) {
    const int n_params = width * n_in + width + width * width + width + width + 1;
    ad::Tape t(n_in, n_params);
    int p = 0;
    std::vector<ad::Value> z;
    for (int i = 0; i < width; ++i) {
        ad::Value acc = t.param(p++);
        for (int j = 0; j < n_in; ++j) acc = acc + t.param(p++) * t.input(j);
        z.push_back(tanh(acc));
    }
    std::vector<ad::Value> z2;
    for (int i = 0; i < width; ++i) {
        ad::Value acc = t.param(p++);
        for (int j = 0; j < width; ++j) acc = acc + t.param(p++) * z[j];
        z2.push_back(tanh(acc));
    }
    ad::Value out = t.param(p++);
    for (int j = 0; j < width; ++j) out = out + t.param(p++) * z2[j];
    t.mark_output(out);
    REQUIRE(p == n_params);
    return t;
}

double eval_scalar(const ad::Tape& t, std::span<const double> in, std::span<const double> par) {
    return ad::evaluate(t, in, par)[0];
}

} // namespace

TEST_CASE("evaluate: hand-checked expressions") {
    {
        ad::Tape t(1, 0);
        t.mark_output(t.input(0));
        CHECK(eval_scalar(t, std::vector{3.0}, {}) == 3.0);
    }
    {
        ad::Tape t(1, 0);
        t.mark_output(sin(t.input(0)));
        CHECK(eval_scalar(t, std::vector{0.0}, {}) == 0.0);
    }
    {
        ad::Tape t(2, 0);
        auto x = t.input(0), y = t.input(1);
        t.mark_output(x * y + y * y);
        CHECK(eval_scalar(t, std::vector{2.0, 3.0}, {}) == 15.0);
    }
}

TEST_CASE("evaluate: purity and determinism") {
    auto t = make_mlp_tape(2, 5);
    std::mt19937_64 rng(7);
    const auto in = random_vector(rng, 2, -1, 1);
    const auto par = random_vector(rng, static_cast<std::size_t>(t.num_params()), -0.8, 0.8);
    const double a = eval_scalar(t, in, par);
    const double b = eval_scalar(t, in, par);
    CHECK(std::memcmp(&a, &b, sizeof a) == 0);
}

TEST_CASE("evaluate: arity mismatch is an error") {
    ad::Tape t(2, 1);
    t.mark_output(t.input(0) * t.param(0) + t.input(1));
    CHECK_THROWS_AS(ad::evaluate(t, std::vector{1.0}, std::vector{1.0}), std::invalid_argument);
    CHECK_THROWS_AS(ad::evaluate(t, std::vector{1.0, 2.0}, std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("evaluate: non-finite intermediates are reported with node index") {
    ad::Tape t(1, 0);
    auto x = t.input(0);
    auto bad = log(x); // log(-1) -> NaN
    t.mark_output(bad + 1.0);
    try {
        ad::evaluate(t, std::vector{-1.0}, {});
        FAIL("expected NonFiniteError");
    } catch (const ad::NonFiniteError& e) {
        CHECK(e.node() == bad.id());
        CHECK(e.op() == ad::Op::Log);
    }
}

TEST_CASE("values from different contexts cannot be mixed") {
    ad::Tape t1(1, 0), t2(1, 0);
    auto a = t1.input(0);
    auto b = t2.input(0);
    CHECK_THROWS_AS(a + b, std::invalid_argument);
}

TEST_CASE("grad_inputs: hand-checked derivatives") {
    {
        ad::Tape t(1, 0);
        auto x = t.input(0);
        t.mark_output(x * x);
        CHECK(ad::grad_inputs(t, std::vector{3.0}, {}, 0)[0] == Catch::Approx(6.0));
    }
    {
        ad::Tape t(1, 0);
        t.mark_output(sin(t.input(0)));
        CHECK(ad::grad_inputs(t, std::vector{std::numbers::pi}, {}, 0)[0] == Catch::Approx(-1.0));
    }
}

TEST_CASE("grad_params: hand-checked derivatives") {
    {
        ad::Tape t(1, 1);
        t.mark_output(t.param(0) * t.input(0)); // w * x
        const auto g = ad::grad_params(t, std::vector{5.0}, std::vector{2.0}, std::vector{1.0});
        CHECK(g[0] == Catch::Approx(5.0));
    }
    {
        ad::Tape t(1, 1);
        t.mark_output(t.input(0) + t.param(0)); // x + b
        const auto g = ad::grad_params(t, std::vector{5.0}, std::vector{0.3}, std::vector{1.0});
        CHECK(g[0] == Catch::Approx(1.0));
    }
}

TEST_CASE("reverse mode matches central finite differences on a random network") {
    auto t = make_mlp_tape(2, 6);
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        const auto in = random_vector(rng, 2, -1.5, 1.5);
        const auto par = random_vector(rng, static_cast<std::size_t>(t.num_params()), -0.7, 0.7);

        const auto gi = ad::grad_inputs(t, in, par, 0);
        for (std::size_t k = 0; k < in.size(); ++k) {
            const double fd = central_diff(
                [&](std::span<const double> p) { return eval_scalar(t, p, par); }, in, k, 1e-5);
            CHECK(rel_err(gi[k], fd, 1e-6) < 1e-6);
        }

        const auto gp = ad::grad_params(t, in, par, std::vector{1.0});
        std::uniform_int_distribution<std::size_t> pick(0, par.size() - 1);
        for (int probe = 0; probe < 10; ++probe) {
            const std::size_t k = pick(rng);
            const double fd = central_diff(
                [&](std::span<const double> p) { return eval_scalar(t, in, p); }, par, k, 1e-5);
            CHECK(rel_err(gp[k], fd, 1e-6) < 1e-6);
        }
    }
}

TEST_CASE("every primitive matches finite differences away from non-smooth points") {
    struct Prim {
        const char* name;
        std::function<ad::Value(ad::Tape&, ad::Value, ad::Value)> build;
        double lo, hi;
    };
    const std::vector<Prim> prims = {
        {"add", [](ad::Tape&, ad::Value x, ad::Value y) { return x + y; }, -3, 3},
        {"sub", [](ad::Tape&, ad::Value x, ad::Value y) { return x - y; }, -3, 3},
        {"mul", [](ad::Tape&, ad::Value x, ad::Value y) { return x * y; }, -3, 3},
        {"div", [](ad::Tape&, ad::Value x, ad::Value y) { return x / y; }, 0.3, 3},
        {"neg", [](ad::Tape&, ad::Value x, ad::Value) { return -x; }, -3, 3},
        {"sin", [](ad::Tape&, ad::Value x, ad::Value) { return sin(x); }, -3, 3},
        {"cos", [](ad::Tape&, ad::Value x, ad::Value) { return cos(x); }, -3, 3},
        {"exp", [](ad::Tape&, ad::Value x, ad::Value) { return exp(x); }, -2, 2},
        {"log", [](ad::Tape&, ad::Value x, ad::Value) { return log(x); }, 0.2, 3},
        {"tanh", [](ad::Tape&, ad::Value x, ad::Value) { return tanh(x); }, -3, 3},
        {"sqrt", [](ad::Tape&, ad::Value x, ad::Value) { return sqrt(x); }, 0.2, 3},
    };
    std::mt19937_64 rng(23);
    for (const auto& prim : prims) {
        INFO(prim.name);
        ad::Tape t(2, 0);
        t.mark_output(prim.build(t, t.input(0), t.input(1)));
        for (int i = 0; i < 100; ++i) {
            const auto in = random_vector(rng, 2, prim.lo, prim.hi);
            const auto g = ad::grad_inputs(t, in, {}, 0);
            for (std::size_t k = 0; k < 2; ++k) {
                const double fd = central_diff(
                    [&](std::span<const double> p) { return eval_scalar(t, p, {}); }, in, k, 1e-5);
                REQUIRE(rel_err(g[k], fd, 1e-5) < 1e-5);
            }
        }
    }
}

TEST_CASE("sqrt derivative at zero signals instead of silently returning zero") {
    ad::Tape t(1, 0);
    t.mark_output(sqrt(t.input(0)));
    CHECK_THROWS_AS(ad::grad_inputs(t, std::vector{0.0}, {}, 0), ad::NonFiniteError);
}

TEST_CASE("derivative(): expression-level first derivatives") {
    {
        ad::Tape t(1, 0);
        auto x = t.input(0);
        t.mark_output(x * x * x);
        const auto d = ad::derivative(t, 0); // 3x^2
        CHECK(eval_scalar(d, std::vector{2.0}, {}) == Catch::Approx(12.0));
        // differentiate the derivative expression again: 6x
        const auto g = ad::grad_inputs(d, std::vector{2.0}, {}, 0);
        CHECK(g[0] == Catch::Approx(12.0));
    }
    {
        ad::Tape t(1, 0);
        t.mark_output(sin(t.input(0)));
        const auto d = ad::derivative(t, 0);
        CHECK(eval_scalar(d, std::vector{0.0}, {}) == Catch::Approx(1.0));
    }
}

TEST_CASE("grad_params of a squared spatial derivative matches nested finite differences") {
    auto t = make_mlp_tape(1, 5);
    const auto dt = ad::derivative(t, 0);
    std::mt19937_64 rng(37);
    const auto par0 = random_vector(rng, static_cast<std::size_t>(t.num_params()), -0.6, 0.6);
    const std::vector<double> in{0.37};

    // loss(p) = (d f/dx)(x0; p)^2, gradient via reverse over the derivative tape
    const double dval = eval_scalar(dt, in, par0);
    const auto gp = ad::grad_params(dt, in, par0, std::vector{2.0 * dval});

    auto loss = [&](std::span<const double> p) {
        // inner derivative by finite differences -> fully independent oracle
        const double h = 1e-5;
        const double up = eval_scalar(t, std::vector{in[0] + h}, p);
        const double dn = eval_scalar(t, std::vector{in[0] - h}, p);
        const double d = (up - dn) / (2.0 * h);
        return d * d;
    };
    std::uniform_int_distribution<std::size_t> pick(0, par0.size() - 1);
    int checked = 0;
    for (int probe = 0; probe < 20; ++probe) {
        const std::size_t k = pick(rng);
        const double fd = central_diff(loss, par0, k, 1e-4);
        if (std::abs(fd) < 1e-8 && std::abs(gp[k]) < 1e-8) continue;
        REQUIRE(rel_err(gp[k], fd, 1e-6) < 1e-4);
        ++checked;
    }
    CHECK(checked > 5);
}

TEST_CASE("forward extension keeps the original tape as an exact prefix") {
    auto t = make_mlp_tape(1, 4);
    const auto ext = ad::forward_derivative_extend(t, 0);
    REQUIRE(ext.size() >= t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        CHECK(ext.node_op(i) == t.node_op(i));
        CHECK(ext.node_a(i) == t.node_a(i));
        CHECK(ext.node_b(i) == t.node_b(i));
    }
    // outputs: [primal, tangent]
    REQUIRE(ext.num_outputs() == 2);

    std::mt19937_64 rng(5);
    const auto par = random_vector(rng, static_cast<std::size_t>(t.num_params()), -0.5, 0.5);
    const std::vector<double> in{0.8};
    ad::Workspace ws;
    ad::eval_batch(ext, 1, in, par, ws);
    const double primal = ws.values[ext.outputs()[0]];
    const double tangent = ws.values[ext.outputs()[1]];
    CHECK(primal == eval_scalar(t, in, par));
    const double fd = central_diff(
        [&](std::span<const double> p) { return eval_scalar(t, p, par); }, in, 0, 1e-6);
    CHECK(rel_err(tangent, fd, 1e-8) < 1e-7);
}

TEST_CASE("parameter-direction tangent equals gradient dot direction") {
    auto t = make_mlp_tape(2, 4);
    const auto jvp = ad::forward_derivative_extend(t, -1, /*param_direction=*/true);
    REQUIRE(jvp.num_params() == 2 * t.num_params());

    std::mt19937_64 rng(13);
    const auto in = random_vector(rng, 2, -1, 1);
    const auto par = random_vector(rng, static_cast<std::size_t>(t.num_params()), -0.5, 0.5);
    const auto dir = random_vector(rng, static_cast<std::size_t>(t.num_params()), -1, 1);

    std::vector<double> packed(par);
    packed.insert(packed.end(), dir.begin(), dir.end());
    const auto out = ad::evaluate(jvp, in, packed);
    REQUIRE(out.size() == 2);

    const auto gp = ad::grad_params(t, in, par, std::vector{1.0});
    double dot = 0.0;
    for (std::size_t k = 0; k < gp.size(); ++k) dot += gp[k] * dir[k];
    CHECK(rel_err(out[1], dot, 1e-10) < 1e-10);
}

TEST_CASE("batched evaluation matches scalar evaluation lane by lane") {
    auto t = make_mlp_tape(2, 5);
    std::mt19937_64 rng(17);
    const auto par = random_vector(rng, static_cast<std::size_t>(t.num_params()), -0.6, 0.6);
    const std::size_t lanes = 7;
    std::vector<double> in(2 * lanes);
    for (auto& v : in) v = std::uniform_real_distribution<double>(-1, 1)(rng);

    ad::Workspace ws;
    ad::eval_batch(t, lanes, in, par, ws);
    for (std::size_t l = 0; l < lanes; ++l) {
        const std::vector<double> one{in[l], in[lanes + l]};
        const double want = eval_scalar(t, one, par);
        CHECK(ws.values[t.outputs()[0] * lanes + l] == want);
    }

    // batched backward: param adjoints equal the sum over lanes
    std::vector<double> cot(lanes, 1.0);
    std::vector<double> gin(2 * lanes, 0.0), gpar(static_cast<std::size_t>(t.num_params()), 0.0);
    ad::Workspace ws2;
    ad::backward_batch(t, lanes, ws.values, cot, gin, gpar, ws2);
    std::vector<double> want(static_cast<std::size_t>(t.num_params()), 0.0);
    for (std::size_t l = 0; l < lanes; ++l) {
        const std::vector<double> one{in[l], in[lanes + l]};
        const auto g = ad::grad_params(t, one, par, std::vector{1.0});
        for (std::size_t k = 0; k < want.size(); ++k) want[k] += g[k];
    }
    for (std::size_t k = 0; k < want.size(); ++k) CHECK(gpar[k] == Catch::Approx(want[k]).epsilon(1e-12));
}
