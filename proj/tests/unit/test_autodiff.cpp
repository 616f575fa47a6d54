#include "calypso/autodiff.hpp"
#include "calypso/error.hpp"
#include "calypso/sim.hpp"
#include "fixtures.hpp"

#include <cmath>
#include <doctest.h>
#include <functional>
#include <random>

using namespace calypso;
using ad::Tape;
using ad::Var;

namespace {

bool gradient_close(double analytic, double numeric) {
    const double diff = std::abs(analytic - numeric);
    return diff <= 1e-6 || diff <= 1e-4 * std::max(std::abs(analytic), std::abs(numeric));
}

double central_difference(const std::function<double(double)>& f, double x, double h = 1e-5) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

} // namespace

TEST_CASE("sigmoid at zero") {
    Tape tape;
    Var x = tape.variable(0.0);
    Var y = ad::sigmoid(x);
    CHECK(y.value() == 0.5);
    tape.backward(y);
    CHECK(tape.adjoint(x) == 0.25);
}

TEST_CASE("min routes the gradient to the smaller argument") {
    Tape tape;
    Var a = tape.variable(2.0);
    Var b = tape.variable(3.0);
    Var m = ad::min(a, b);
    CHECK(m.value() == 2.0);
    tape.backward(m);
    CHECK(tape.adjoint(a) == 1.0);
    CHECK(tape.adjoint(b) == 0.0);

    Var c = tape.variable(4.0);
    Var d = tape.variable(4.0);
    Var tie = ad::min(c, d);
    tape.backward(tie);
    CHECK(tape.adjoint(c) == 1.0);
    CHECK(tape.adjoint(d) == 0.0);
}

TEST_CASE("product plus operand") {
    Tape tape;
    Var x = tape.variable(2.0);
    Var y = tape.variable(3.0);
    Var f = x * y + y;
    tape.backward(f);
    CHECK(tape.adjoint(y) == 3.0);
    CHECK(tape.adjoint(x) == 3.0);
}

TEST_CASE("leaf root and fan-in") {
    Tape tape;
    Var a = tape.variable(1.5);
    tape.backward(a);
    CHECK(tape.adjoint(a) == 1.0);
    Var twice = a + a;
    tape.backward(twice);
    CHECK(tape.adjoint(a) == 2.0);
    // a second backward resets rather than accumulates
    tape.backward(twice);
    CHECK(tape.adjoint(a) == 2.0);
}

TEST_CASE("errors") {
    Tape t1, t2;
    Var a = t1.variable(1.0);
    Var b = t2.variable(1.0);
    try {
        (void)(a + b);
        FAIL("expected TapeMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::TapeMismatch);
    }
    try {
        (void)(a / Var(0.0));
        FAIL("expected DivisionByZero");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DivisionByZero);
    }
    std::vector<Var> two = {a, a};
    try {
        t1.backward(two);
        FAIL("expected NonScalarRoot");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NonScalarRoot);
    }
    std::vector<Var> one = {a * a};
    t1.backward(one);
    CHECK(t1.adjoint(a) == 2.0);
}

TEST_CASE("parents precede children") {
    Tape tape;
    Var x = tape.variable(0.3);
    Var y = ad::exp(ad::tanh(x) * x) + ad::log(x + 2.0);
    (void)y;
    for (std::uint32_t k = 0; k < tape.size(); ++k) {
        for (const auto& e : tape.edges(k)) {
            CHECK(e.parent < k);
        }
    }
}

TEST_CASE("unary and binary ops match central differences") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    using Unary = std::function<Var(const Var&)>;
    using UnaryD = std::function<double(double)>;
    struct Case {
        const char* name;
        Unary f;
        UnaryD g;
    };
    const std::vector<Case> unary = {
        {"exp", [](const Var& x) { return ad::exp(x); }, [](double x) { return std::exp(x); }},
        {"log", [](const Var& x) { return ad::log(x * x + 0.5); }, [](double x) { return std::log(x * x + 0.5); }},
        {"sigmoid", [](const Var& x) { return ad::sigmoid(x); }, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }},
        {"tanh", [](const Var& x) { return ad::tanh(x); }, [](double x) { return std::tanh(x); }},
        {"relu", [](const Var& x) { return ad::relu(x); }, [](double x) { return x > 0 ? x : 0.0; }},
        {"neg", [](const Var& x) { return -x; }, [](double x) { return -x; }},
    };
    for (const auto& c : unary) {
        for (int trial = 0; trial < 100; ++trial) {
            double x0 = dist(rng);
            if (std::string(c.name) == "relu" && std::abs(x0) < 1e-3) {
                x0 += 0.01;
            }
            Tape tape;
            Var x = tape.variable(x0);
            Var y = c.f(x);
            CHECK(y.value() == doctest::Approx(c.g(x0)).epsilon(1e-14));
            tape.backward(y);
            INFO(c.name << " at " << x0);
            CHECK(gradient_close(tape.adjoint(x), central_difference(c.g, x0)));
        }
    }

    for (int trial = 0; trial < 100; ++trial) {
        const double a0 = dist(rng);
        double b0 = dist(rng);
        if (std::abs(b0) < 0.2) {
            b0 += 0.5;
        }
        if (std::abs(a0 - b0) < 1e-3) {
            b0 += 0.1;
        }
        using Bin = std::function<Var(const Var&, const Var&)>;
        using BinD = std::function<double(double, double)>;
        const std::vector<std::pair<Bin, BinD>> binary = {
            {[](const Var& a, const Var& b) { return a + b; }, [](double a, double b) { return a + b; }},
            {[](const Var& a, const Var& b) { return a - b; }, [](double a, double b) { return a - b; }},
            {[](const Var& a, const Var& b) { return a * b; }, [](double a, double b) { return a * b; }},
            {[](const Var& a, const Var& b) { return a / b; }, [](double a, double b) { return a / b; }},
            {[](const Var& a, const Var& b) { return ad::min(a, b); }, [](double a, double b) { return std::min(a, b); }},
        };
        for (const auto& [f, g] : binary) {
            Tape tape;
            Var a = tape.variable(a0);
            Var b = tape.variable(b0);
            Var y = f(a, b);
            tape.backward(y);
            CHECK(gradient_close(tape.adjoint(a), central_difference([&](double x) { return g(x, b0); }, a0)));
            CHECK(gradient_close(tape.adjoint(b), central_difference([&](double x) { return g(a0, x); }, b0)));
        }
    }
}

TEST_CASE("n-ary ops match central differences") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> w0(6), x0(6);
        for (int k = 0; k < 6; ++k) {
            w0[k] = dist(rng);
            x0[k] = dist(rng);
        }
        w0[2] = 0.0;
        const double b0 = dist(rng);
        Tape tape;
        auto w = tape.variables(w0);
        auto x = tape.variables(x0);
        Var b = tape.variable(b0);
        Var f = ad::sum(x) * ad::dot(w, x) + ad::affine(w, x, b) * ad::lincomb(w0, x);

        auto eval = [&](std::vector<double> wv, std::vector<double> xv, double bv) {
            double s = 0, d = 0, l = 0;
            for (int k = 0; k < 6; ++k) {
                s += xv[k];
                d += wv[k] * xv[k];
                l += w0[k] * xv[k];
            }
            return s * d + (d + bv) * l;
        };
        CHECK(f.value() == doctest::Approx(eval(w0, x0, b0)).epsilon(1e-12));
        tape.backward(f);
        for (int k = 0; k < 6; ++k) {
            auto fx = [&](double v) {
                auto xv = x0;
                xv[k] = v;
                return eval(w0, xv, b0);
            };
            auto fw = [&](double v) {
                auto wv = w0;
                wv[k] = v;
                return eval(wv, x0, b0);
            };
            CHECK(gradient_close(tape.adjoint(x[k]), central_difference(fx, x0[k])));
            CHECK(gradient_close(tape.adjoint(w[k]), central_difference(fw, w0[k])));
        }
        CHECK(gradient_close(tape.adjoint(b), eval(w0, x0, 0.0) - eval(w0, x0, -1.0)));
    }
}

TEST_CASE("gradient of a sum is the sum of gradients") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> x0(5);
    for (auto& v : x0) {
        v = dist(rng);
    }
    auto term = [](const Var& x, int k) { return ad::sigmoid(x * Var(k + 1.0)) * x; };

    Tape total;
    auto xt = total.variables(x0);
    std::vector<Var> terms;
    for (int k = 0; k < 5; ++k) {
        terms.push_back(term(xt[k], k) * ad::exp(xt[(k + 1) % 5]));
    }
    total.backward(ad::sum(terms));

    std::vector<double> accumulated(5, 0.0);
    for (int k = 0; k < 5; ++k) {
        Tape single;
        auto xs = single.variables(x0);
        single.backward(term(xs[k], k) * ad::exp(xs[(k + 1) % 5]));
        for (int j = 0; j < 5; ++j) {
            accumulated[j] += single.adjoint(xs[j]);
        }
    }
    for (int j = 0; j < 5; ++j) {
        CHECK(total.adjoint(xt[j]) == doctest::Approx(accumulated[j]).epsilon(1e-13));
    }
}

TEST_CASE("simulator loss gradient w.r.t. beta matches finite differences") {
    std::mt19937_64 rng(1);
    const PatchGraph graph = fixtures::random_graph(rng, 3, 3, 0.3);
    DiseaseParams base = fixtures::random_params(rng, Level::Patch, 3, 10);
    for (Index p = 0; p < 3; ++p) {
        for (Index t = 0; t < 10; ++t) {
            base.beta()(p, t) = 0.3 + 0.4 * base.beta()(p, t);
        }
    }
    const auto init = fixtures::random_seed(rng, graph, 0.02);
    SimConfig config;
    config.steps = 10;
    const Trajectory target = simulate(graph, base, init, config);

    DiseaseParams shifted = base;
    for (Index p = 0; p < 3; ++p) {
        for (Index t = 0; t < 10; ++t) {
            shifted.beta()(p, t) *= 0.8;
        }
    }
    auto loss_of = [&](const DiseaseParams& params) {
        const Trajectory traj = simulate(graph, params, init, config);
        double acc = 0.0;
        for (Index p = 0; p < 3; ++p) {
            for (Index t = 0; t < 10; ++t) {
                const double d = traj.I(p, t) - target.I(p, t);
                acc += d * d;
            }
        }
        return acc / 30.0;
    };

    Tape tape;
    DiseaseParamsT<Var> vparams(Level::Patch, 3, 10);
    for (std::size_t k = 0; k < kParamCount; ++k) {
        for (Index p = 0; p < 3; ++p) {
            for (Index t = 0; t < 10; ++t) {
                const double v = shifted.grids[k](p, t);
                vparams.grids[k](p, t) = k == 0 ? tape.variable(v) : Var(v);
            }
        }
    }
    const auto vtraj = simulate(graph, vparams, init, config);
    std::vector<Var> sq;
    for (Index p = 0; p < 3; ++p) {
        for (Index t = 0; t < 10; ++t) {
            const Var d = vtraj.I(p, t) - Var(target.I(p, t));
            sq.push_back(d * d);
        }
    }
    const Var loss = ad::sum(sq) / Var(30.0);
    CHECK(loss.value() == loss_of(shifted));
    tape.backward(loss);

    for (Index p = 0; p < 3; ++p) {
        for (Index t = 0; t + 1 < 10; ++t) {
            const double h = 1e-5;
            DiseaseParams up = shifted, down = shifted;
            up.beta()(p, t) += h;
            down.beta()(p, t) -= h;
            const double numeric = (loss_of(up) - loss_of(down)) / (2.0 * h);
            const double analytic = tape.adjoint(vparams.beta()(p, t));
            INFO("patch " << p << " step " << t);
            CHECK(std::abs(analytic - numeric) <= 1e-4 * std::max(std::abs(numeric), 1e-8));
        }
    }
}

TEST_CASE("replay is bit-identical") {
    auto run = [](std::vector<double>& adj) {
        Tape tape;
        std::vector<double> x0 = {0.1, -0.7, 1.3, 0.4};
        auto x = tape.variables(x0);
        Var y = ad::tanh(ad::dot(x, x)) * ad::sigmoid(ad::sum(x)) + ad::min(x[0], x[1]) / (x[2] + 3.0);
        tape.backward(y);
        adj.assign(tape.adjoints().begin(), tape.adjoints().end());
        return y.value();
    };
    std::vector<double> a, b;
    const double ya = run(a);
    const double yb = run(b);
    CHECK(ya == yb);
    CHECK(a == b);
}
