#include "calypso/adapter.hpp"
#include "calypso/synth.hpp"
#include "fixtures.hpp"

#include <cmath>
#include <doctest.h>
#include <numbers>

using namespace calypso;

namespace {

Matrix wave(Index units, Index steps, double level, double phase = 0.0) {
    Matrix m(units, steps);
    for (Index u = 0; u < units; ++u) {
        for (Index t = 0; t < steps; ++t) {
            m(u, t) = level * (u + 1) * (1.0 + 0.3 * std::sin(2.0 * std::numbers::pi * (t + phase) / 26.0));
        }
    }
    return m;
}

AdapterNet ready_net(const Matrix& raw, std::uint64_t seed = 1) {
    AdapterNet net;
    net = AdapterNet(AdapterConfig{});
    net.init(seed);
    net.fit_scales(raw, raw.cols());
    return net;
}

} // namespace

TEST_CASE("zero head leaves the forecast unchanged") {
    const Matrix raw = wave(4, 30, 50.0);
    const AdapterNet net = ready_net(raw);
    const Matrix history = wave(4, 20, 60.0);
    CHECK(refine(net, raw, history) == raw);
    CHECK(refine(net, raw, Matrix()) == raw);
}

TEST_CASE("refined output is nonnegative and additive") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> wild(0.0, 2.0);
    std::uniform_real_distribution<double> level(0.0, 200.0);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix raw(5, 16);
        for (double& v : raw.data()) {
            v = level(rng);
        }
        AdapterNet net = ready_net(raw, trial);
        for (double& w : net.weights()) {
            w = wild(rng);
        }
        const Matrix history = raw.slice_cols(0, 8);
        const Matrix r = adapter_residual(net, raw, history);
        const Matrix out = refine(net, raw, history);
        for (Index i = 0; i < raw.data().size(); ++i) {
            REQUIRE(out.data()[i] >= 0.0);
            if (raw.data()[i] + r.data()[i] >= 0.0) {
                CHECK(out.data()[i] - raw.data()[i] ==
                      doctest::Approx(r.data()[i]).epsilon(1e-12).scale(raw.data()[i]));
            } else {
                CHECK(out.data()[i] == 0.0);
            }
        }
    }
}

TEST_CASE("non-finite forecasts are rejected") {
    Matrix raw = wave(2, 6, 10.0);
    const AdapterNet net = ready_net(raw);
    raw(1, 3) = std::nan("");
    try {
        refine(net, raw, Matrix());
        FAIL("expected NonFiniteInput");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NonFiniteInput);
    }
    CHECK_THROWS_AS(refine(net, wave(3, 6, 10.0), Matrix()), Error);
}

TEST_CASE("truth equal to raw keeps the residual at zero") {
    const Matrix raw = wave(3, 24, 40.0);
    const AdapterNet net = ready_net(raw);
    AdapterTrainConfig config;
    config.epochs = 50;
    const auto result = train_adapter(net, {{raw, raw, 12}}, config);
    double var = 0.0, mean = 0.0;
    for (double v : raw.data()) {
        mean += v / raw.data().size();
    }
    for (double v : raw.data()) {
        var += (v - mean) * (v - mean) / raw.data().size();
    }
    const Matrix r = adapter_residual(result.net, raw, raw.slice_cols(0, 12));
    double mse = 0.0;
    for (double v : r.data()) {
        mse += v * v / r.data().size();
    }
    CHECK(mse < 1e-6 * var);
}

TEST_CASE("full teacher forcing does not depend on the coin stream") {
    const Matrix truth = wave(3, 20, 30.0);
    Matrix raw = truth;
    for (double& v : raw.data()) {
        v *= 0.9;
    }
    const AdapterNet net = ready_net(raw);
    AdapterTrainConfig a;
    a.epochs = 20;
    a.teacher_forcing = 1.0;
    a.decay_teacher_forcing = false;
    a.seed = 1;
    AdapterTrainConfig b = a;
    b.seed = 99;
    const std::vector<AdapterSequence> seqs = {{raw, truth, 10}};
    CHECK(train_adapter(net, seqs, a).history == train_adapter(net, seqs, b).history);
    AdapterTrainConfig c = a;
    c.teacher_forcing = 0.5;
    c.seed = 99;
    CHECK(train_adapter(net, seqs, c).history != train_adapter(net, seqs, a).history);
}

TEST_CASE("a constant bias is learned") {
    const double bias = 12.0;
    std::vector<AdapterSequence> train;
    for (int k = 0; k < 4; ++k) {
        const Matrix truth = wave(3, 32, 60.0, 5.0 * k);
        Matrix raw = truth;
        for (double& v : raw.data()) {
            v -= bias;
        }
        train.push_back({raw, truth, 28});
    }
    AdapterNet net = ready_net(train.front().raw);
    AdapterTrainConfig config;
    config.epochs = 300;
    config.learning_rate = 1e-2;
    const auto result = train_adapter(net, train, config);
    CHECK(result.best_loss < result.initial_loss);

    const Matrix truth = wave(3, 32, 60.0, 23.0);
    Matrix raw = truth;
    for (double& v : raw.data()) {
        v -= bias;
    }
    const Matrix out = refine(result.net, raw, truth.slice_cols(0, 28));
    double remaining = 0.0;
    for (Index u = 0; u < 3; ++u) {
        for (Index t = 0; t < 32; ++t) {
            remaining += std::abs(out(u, t) - truth(u, t)) / (3.0 * 32.0);
        }
    }
    CHECK(remaining <= 0.2 * bias);
}

TEST_CASE("level stack rows") {
    std::mt19937_64 rng(3);
    const PatchGraph graph = fixtures::random_graph(rng, 5, 2);
    Matrix series(5, 4);
    for (Index i = 0; i < 20; ++i) {
        series.data()[i] = static_cast<double>(i);
    }
    const Matrix stack = level_stack(series, graph);
    REQUIRE(stack.rows() == 8);
    CHECK(state_row(graph) == 7);
    for (Index t = 0; t < 4; ++t) {
        double total = 0.0;
        for (Index p = 0; p < 5; ++p) {
            CHECK(stack(p, t) == series(p, t));
            total += series(p, t);
        }
        CHECK(stack(5, t) + stack(6, t) == doctest::Approx(total));
        CHECK(stack(7, t) == doctest::Approx(total));
    }
}

TEST_CASE("adapter training leaves the calibration net untouched and is deterministic") {
    SynthSpec spec;
    spec.patches = 8;
    spec.areas = 2;
    spec.weeks = 40;
    spec.horizon = 4;
    const auto synth = generate(spec);
    CalibNet calib(synth.data.channels());
    calib.init(3);
    calib.fit_normalization(synth.data, synth.graph);
    const auto before = calib.store().checksum();
    AdapterDataConfig data_config;
    data_config.origins = 3;
    AdapterTrainConfig config;
    config.epochs = 15;
    const auto a = fit_adapter(calib, synth.data, synth.graph, data_config, config);
    const auto b = fit_adapter(calib, synth.data, synth.graph, data_config, config);
    CHECK(calib.store().checksum() == before);
    CHECK(a.history == b.history);
    CHECK(a.net.weights() == b.net.weights());
    CHECK(a.best_loss <= a.initial_loss);

    const auto seqs = adapter_sequences(calib, synth.data, synth.graph, data_config);
    REQUIRE(seqs.size() == 4);
    CHECK(seqs[0].known == 40);
    CHECK(seqs[1].known == 36);
    CHECK(seqs[1].raw.cols() == 40);
    CHECK(seqs[3].known == 28);

    const auto fc = refined_forecast(calib, a.net, synth.data, synth.graph, 4);
    CHECK(fc.raw.cols() == 44);
    CHECK(fc.corrected.rows() == 8 + 4 + 1);
}

TEST_CASE("adapter checkpoint round trip") {
    const Matrix truth = wave(3, 20, 30.0);
    Matrix raw = truth;
    for (double& v : raw.data()) {
        v *= 0.8;
    }
    const AdapterNet net = ready_net(raw);
    AdapterTrainConfig config;
    config.epochs = 10;
    const auto result = train_adapter(net, {{raw, truth, 15}}, config);
    const AdapterNet loaded = parse_adapter_checkpoint(adapter_checkpoint_json(result, config));
    CHECK(loaded.weights() == result.net.weights());
    CHECK(loaded.scales() == result.net.scales());
    CHECK(refine(loaded, raw, truth.slice_cols(0, 15)) == refine(result.net, raw, truth.slice_cols(0, 15)));
    CHECK_THROWS_AS(parse_adapter_checkpoint("[]"), Error);
}
