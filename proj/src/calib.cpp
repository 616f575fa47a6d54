#include "calypso/calib.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <limits>
#include <json.hpp>
#include <sstream>

namespace calypso {

using json = nlohmann::ordered_json;

namespace {

constexpr double kBoundSlack = 1e-12;

Matrix region_channel(const Matrix& patch_channel, const PatchGraph& graph, Index steps) {
    if (patch_channel.cols() < steps) {
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("feature channel covers {} weeks, need {}", patch_channel.cols(), steps));
    }
    return aggregate(patch_channel.slice_cols(0, steps), Level::Region, graph);
}

std::pair<double, double> mean_sd(std::span<const double> xs) {
    double mean = 0.0;
    for (double x : xs) {
        mean += x;
    }
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) {
        var += (x - mean) * (x - mean);
    }
    var /= static_cast<double>(xs.size());
    const double sd = std::sqrt(var);
    return {mean, sd > 1e-12 ? sd : 1.0};
}

/// Static covariates per region: z-scored log population, non-general share.
Matrix static_covariates(const PatchGraph& graph) {
    const Index regions = graph.region_count();
    Matrix out(regions, kStaticCovariates);
    std::vector<double> log_pop(regions);
    for (Index r = 0; r < regions; ++r) {
        const double pop = graph.region_population(r);
        log_pop[r] = std::log(pop);
        double non_general = 0.0;
        for (Index p : graph.members(r)) {
            if (graph.categories()[p] == Category::NonGeneral) {
                non_general += graph.populations()[p];
            }
        }
        out(r, 1) = non_general / pop;
    }
    const auto [m, s] = mean_sd(log_pop);
    for (Index r = 0; r < regions; ++r) {
        out(r, 0) = regions > 1 ? (log_pop[r] - m) / s : 0.0;
    }
    return out;
}

double state_r2(const Matrix& predicted_I, const DataSet& data, const PatchGraph& graph) {
    const Index w = data.window;
    const Matrix pred = aggregate(predicted_I.slice_cols(0, w), Level::State, graph);
    const Matrix truth = aggregate(data.observed.slice_cols(0, w), Level::State, graph);
    try {
        return r_squared(pred.row(0), truth.row(0));
    } catch (const Error&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

void check_bounds(const DiseaseParams& params, const BoundSpec& bounds) {
    for (Param p : kAllParams) {
        for (double v : params[p].data()) {
            if (!(v >= bounds.lo(p) - kBoundSlack && v <= bounds.hi(p) + kBoundSlack)) {
                throw Error(ErrorCode::InvalidArgument,
                            fmt::format("{} = {} left its bound interval", to_string(p), v));
            }
        }
    }
}

template <class T>
T mean_square_error(const Grid<T>& pred, const Matrix& truth) {
    std::vector<T> sq;
    sq.reserve(pred.data().size());
    for (Index r = 0; r < pred.rows(); ++r) {
        for (Index t = 0; t < pred.cols(); ++t) {
            const T d = pred(r, t) - T(truth(r, t));
            sq.push_back(d * d);
        }
    }
    return num::sum(std::span<const T>(sq)) * T(1.0 / static_cast<double>(sq.size()));
}

} // namespace

void BoundSpec::validate() const {
    for (Param p : kAllParams) {
        const double lo_v = lo(p);
        const double hi_v = hi(p);
        if (!(lo_v >= 0.0) || !(hi_v >= lo_v) || !std::isfinite(hi_v)) {
            throw Error(ErrorCode::InvalidArgument, fmt::format("invalid bounds for {}", to_string(p)));
        }
        if (p != Param::Beta && hi_v > 1.0) {
            throw Error(ErrorCode::InvalidArgument, fmt::format("{} must stay within [0,1]", to_string(p)));
        }
    }
    if (hi(Param::Beta) > 1.0) {
        throw Error(ErrorCode::InvalidArgument, "beta upper bound above 1 can overdraw susceptibles");
    }
}

void LossWeights::validate() const {
    if (!(patch >= 0.0) || !(region >= 0.0) || !(state >= 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "loss weights must be nonnegative");
    }
    if (!(patch > 0.0 || region > 0.0 || state > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "at least one loss weight must be positive");
    }
}

CalibNet::CalibNet(Index channels, CalibNetConfig config) : channels_(channels), config_(std::move(config)) {
    config_.bounds.validate();
    if (config_.hidden == 0 || config_.decoder_hidden == 0) {
        throw Error(ErrorCode::InvalidArgument, "network widths must be positive");
    }
    nn::add_gru_blocks(store_, "enc", inputs(), config_.hidden);
    const Index dec_in = config_.hidden + 1 + config_.regions;
    store_.add("dec.w1", config_.decoder_hidden, dec_in, dec_in);
    store_.add("dec.b1", config_.decoder_hidden, 1, dec_in);
    store_.add("dec.w2", kParamCount, config_.decoder_hidden, config_.decoder_hidden);
    store_.add("dec.b2", kParamCount, 1, config_.decoder_hidden);
}

void CalibNet::init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    store_.init_uniform(rng);
}

void CalibNet::fit_normalization(const DataSet& data, const PatchGraph& graph) {
    if (data.channels() != channels_) {
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("data has {} feature channels, network expects {}", data.channels(), channels_));
    }
    const Index regions = graph.region_count();
    FeatureScaling fs;
    fs.mean.assign(channels_, 0.0);
    fs.sd.assign(channels_, 1.0);
    fs.region_mean = Matrix(regions, channels_);
    fs.region_sd = Matrix(regions, channels_, 1.0);
    for (Index c = 0; c < channels_; ++c) {
        const Matrix region = region_channel(data.features[c], graph, data.window);
        std::tie(fs.mean[c], fs.sd[c]) = mean_sd(region.data());
        for (Index r = 0; r < regions; ++r) {
            std::tie(fs.region_mean(r, c), fs.region_sd(r, c)) = mean_sd(region.row(r));
        }
    }
    scaling_ = std::move(fs);
}

void CalibNet::set_normalization(FeatureScaling scaling) {
    if (scaling.mean.size() != channels_ || scaling.sd.size() != channels_ ||
        scaling.region_mean.cols() != channels_ || scaling.region_sd.cols() != channels_ ||
        scaling.region_mean.rows() != scaling.region_sd.rows()) {
        throw Error(ErrorCode::ShapeMismatch, "normalization does not match the channel count");
    }
    scaling_ = std::move(scaling);
}

NetInputs CalibNet::prepare(const DataSet& data, const PatchGraph& graph, Index steps) const {
    if (data.channels() != channels_) {
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("data has {} feature channels, network expects {}", data.channels(), channels_));
    }
    if (steps == 0) {
        throw Error(ErrorCode::WindowMismatch, "network inputs need at least one week");
    }
    const Index regions = graph.region_count();
    FeatureScaling fs = scaling_;
    if (!normalized()) {
        CalibNet scratch = *this;
        scratch.fit_normalization(data, graph);
        fs = scratch.scaling_;
    }
    if (fs.region_mean.rows() != regions) {
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("normalization covers {} regions, graph has {}", fs.region_mean.rows(), regions));
    }
    const Matrix statics = static_covariates(graph);
    NetInputs out;
    out.regions.assign(regions, Matrix(steps, inputs()));
    for (Index c = 0; c < channels_; ++c) {
        const Matrix region = region_channel(data.features[c], graph, steps);
        for (Index r = 0; r < regions; ++r) {
            for (Index t = 0; t < steps; ++t) {
                out.regions[r](t, c) = (region(r, t) - fs.mean[c]) / fs.sd[c];
                out.regions[r](t, channels_ + c) = (region(r, t) - fs.region_mean(r, c)) / fs.region_sd(r, c);
            }
        }
    }
    for (Index r = 0; r < regions; ++r) {
        for (Index t = 0; t < steps; ++t) {
            for (Index k = 0; k < kStaticCovariates; ++k) {
                out.regions[r](t, 2 * channels_ + k) = statics(r, k);
            }
        }
    }
    return out;
}

DiseaseParams infer_params(const CalibNet& net, const DataSet& data, const PatchGraph& graph) {
    const NetInputs inputs = net.prepare(data, graph, data.window);
    return net.run(std::span<const double>(net.weights()), inputs, data.window);
}

template <class T>
T multi_resolution_loss(const Grid<T>& predicted_I, const DataSet& observed, const LossWeights& weights,
                        const PatchGraph& graph, LossParts* parts) {
    const Index w = observed.window;
    if (w == 0 || predicted_I.rows() != graph.patch_count() || predicted_I.cols() < w ||
        observed.observed.rows() != graph.patch_count() || observed.observed.cols() < w) {
        throw Error(ErrorCode::WindowMismatch,
                    fmt::format("prediction {}x{} does not cover the {}-week window of {} patches",
                                predicted_I.rows(), predicted_I.cols(), w, graph.patch_count()));
    }
    const Grid<T> pred = predicted_I.cols() == w ? predicted_I : predicted_I.slice_cols(0, w);
    const Matrix truth = observed.observed.slice_cols(0, w);

    T total(0.0);
    LossParts local;
    if (weights.patch != 0.0) {
        const T mse = mean_square_error(pred, truth);
        local.patch = num::value_of(mse);
        total = total + T(weights.patch) * mse;
    }
    if (weights.region != 0.0) {
        const T mse = mean_square_error(aggregate(pred, Level::Region, graph), aggregate(truth, Level::Region, graph));
        local.region = num::value_of(mse);
        total = total + T(weights.region) * mse;
    }
    if (weights.state != 0.0) {
        const T mse = mean_square_error(aggregate(pred, Level::State, graph), aggregate(truth, Level::State, graph));
        local.state = num::value_of(mse);
        total = total + T(weights.state) * mse;
    }
    local.total = num::value_of(total);
    if (parts != nullptr) {
        *parts = local;
    }
    return total;
}

template double multi_resolution_loss<double>(const Grid<double>&, const DataSet&, const LossWeights&,
                                              const PatchGraph&, LossParts*);
template ad::Var multi_resolution_loss<ad::Var>(const Grid<ad::Var>&, const DataSet&, const LossWeights&,
                                                const PatchGraph&, LossParts*);

LossGradient loss_and_gradient(const CalibNet& net, std::span<const double> weights, const NetInputs& inputs,
                               const DataSet& data, const PatchGraph& graph, const LossWeights& loss_weights) {
    ad::Tape tape;
    return loss_and_gradient(net, weights, inputs, data, graph, loss_weights, tape);
}

LossGradient loss_and_gradient(const CalibNet& net, std::span<const double> weights, const NetInputs& inputs,
                               const DataSet& data, const PatchGraph& graph, const LossWeights& loss_weights,
                               ad::Tape& tape) {
    tape.clear();
    const Index n = graph.patch_count();
    const Index w = data.window;
    const std::vector<ad::Var> vars = tape.variables(weights);
    const auto params = net.run(std::span<const ad::Var>(vars), inputs, w);

    DiseaseParams values(Level::Region, params.units(), params.steps());
    for (std::size_t k = 0; k < kParamCount; ++k) {
        for (Index i = 0; i < params.grids[k].data().size(); ++i) {
            values.grids[k].data()[i] = params.grids[k].data()[i].value();
        }
    }
    check_bounds(values, net.bounds());

    SimConfig config;
    config.steps = w;
    config.record_new_infections = false;
    const auto traj = simulate(graph, params, data.initial_infections, config);

    LossGradient out;
    const ad::Var loss = multi_resolution_loss(traj.I, data, loss_weights, graph, &out.parts);
    out.loss = loss.value();

    Matrix predicted(n, w);
    for (Index p = 0; p < n; ++p) {
        for (Index t = 0; t < w; ++t) {
            predicted(p, t) = traj.I(p, t).value();
        }
    }
    out.state_r2 = state_r2(predicted, data, graph);

    out.gradient.assign(weights.size(), 0.0);
    if (!loss.is_constant()) {
        tape.backward(loss);
        for (Index k = 0; k < vars.size(); ++k) {
            out.gradient[k] = tape.adjoint(vars[k]);
        }
    }
    return out;
}

double loss_value(const CalibNet& net, std::span<const double> weights, const NetInputs& inputs,
                  const DataSet& data, const PatchGraph& graph, const LossWeights& loss_weights) {
    const auto params = net.run(weights, inputs, data.window);
    SimConfig config;
    config.steps = data.window;
    config.record_new_infections = false;
    const auto traj = simulate(graph, params, data.initial_infections, config);
    return multi_resolution_loss(traj.I, data, loss_weights, graph);
}

TrainResult train_joint(const CalibNet& net, const DataSet& data, const PatchGraph& graph,
                        const TrainConfig& config) {
    config.loss_weights.validate();
    data.validate(graph);
    TrainResult result;
    result.net = net;
    result.best_r2_weights = net.weights();
    result.best_loss.loss = std::numeric_limits<double>::infinity();
    result.best_r2.state_r2 = -std::numeric_limits<double>::infinity();
    if (config.epochs == 0) {
        return result;
    }
    if (data.window < 2) {
        throw Error(ErrorCode::WindowMismatch, "training needs a window of at least two weeks");
    }
    if (!result.net.normalized()) {
        result.net.fit_normalization(data, graph);
    }
    const NetInputs inputs = result.net.prepare(data, graph, data.window);

    std::vector<double> weights = result.net.weights();
    std::vector<double> best_loss_weights = weights;
    nn::Adam adam(weights.size(), config.learning_rate, config.weight_decay);
    ad::Tape tape;
    const Index stride = config.history_stride == 0 ? 1 : config.history_stride;

    for (Index epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = nn::step_lr(config.learning_rate, epoch, config.lr_step, config.lr_gamma);
        adam.set_lr(lr);
        LossGradient lg = loss_and_gradient(result.net, weights, inputs, data, graph, config.loss_weights, tape);
        if (!std::isfinite(lg.loss)) {
            throw Error(ErrorCode::NonFiniteLoss, fmt::format("loss became non-finite at epoch {}", epoch));
        }
        if (lg.loss < result.best_loss.loss) {
            result.best_loss = {epoch, lg.loss, lg.state_r2};
            best_loss_weights = weights;
        }
        if (std::isfinite(lg.state_r2) && lg.state_r2 > result.best_r2.state_r2) {
            result.best_r2 = {epoch, lg.loss, lg.state_r2};
            result.best_r2_weights = weights;
        }
        const double norm = nn::clip_grad_norm(lg.gradient, config.clip_norm);
        for (double g : lg.gradient) {
            if (!std::isfinite(g)) {
                throw Error(ErrorCode::DivergedGradient,
                            fmt::format("gradient non-finite after clipping at epoch {}", epoch));
            }
        }
        if (epoch % stride == 0 || epoch + 1 == config.epochs) {
            result.history.push_back({epoch, lg.loss, lg.parts, lg.state_r2, lr, norm});
        }
        adam.step(weights, lg.gradient);
        if (!std::all_of(weights.begin(), weights.end(), [](double w) { return std::isfinite(w); })) {
            throw Error(ErrorCode::DivergedGradient, fmt::format("weights became non-finite at epoch {}", epoch));
        }
    }
    result.net.weights() = best_loss_weights;
    return result;
}

DiseaseParams forecast_params(const CalibNet& net, const DataSet& data, const PatchGraph& graph, Index horizon) {
    return forecast_params_at(net, data, graph, data.window, horizon);
}

DiseaseParams forecast_params_at(const CalibNet& net, const DataSet& data, const PatchGraph& graph, Index cut,
                                 Index horizon) {
    if (horizon == 0) {
        throw Error(ErrorCode::HorizonZero, "forecast horizon must be at least one week");
    }
    if (cut == 0 || cut > data.window) {
        throw Error(ErrorCode::WindowMismatch,
                    fmt::format("forecast origin {} outside the {}-week window", cut, data.window));
    }
    const NetInputs inputs = net.prepare(data, graph, cut);
    const DiseaseParams fitted = net.run(std::span<const double>(net.weights()), inputs, data.window);
    DiseaseParams out(Level::Region, fitted.units(), cut + horizon);
    for (std::size_t k = 0; k < kParamCount; ++k) {
        for (Index r = 0; r < fitted.units(); ++r) {
            for (Index t = 0; t < cut + horizon; ++t) {
                out.grids[k](r, t) = fitted.grids[k](r, std::min(t, cut - 1));
            }
        }
    }
    return out;
}

Trajectory forecast(const CalibNet& net, const DataSet& data, const PatchGraph& graph, Index horizon) {
    const DiseaseParams params = forecast_params(net, data, graph, horizon);
    SimConfig config;
    config.steps = params.steps();
    return simulate(graph, params, data.initial_infections, config);
}

namespace {

json best_json(const BestRecord& b) {
    json j;
    j["epoch"] = b.epoch;
    j["loss"] = std::isfinite(b.loss) ? json(b.loss) : json(nullptr);
    j["state_r2"] = std::isfinite(b.state_r2) ? json(b.state_r2) : json(nullptr);
    return j;
}

json weights_json(const nn::ParamStore& store, std::span<const double> values) {
    json blocks = json::array();
    for (const auto& b : store.blocks()) {
        json jb;
        jb["name"] = b.name;
        jb["rows"] = b.rows;
        jb["cols"] = b.cols;
        jb["values"] = std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(b.offset),
                                           values.begin() + static_cast<std::ptrdiff_t>(b.offset + b.size()));
        blocks.push_back(std::move(jb));
    }
    return blocks;
}

} // namespace

std::string checkpoint_json(const TrainResult& result, const TrainConfig& config) {
    const CalibNet& net = result.net;
    json j;
    j["format"] = "calypso-calibnet-1";
    j["channels"] = net.channels();
    j["hidden"] = net.config().hidden;
    j["decoder_hidden"] = net.config().decoder_hidden;
    j["regions"] = net.config().regions;
    json bounds;
    for (Param p : kAllParams) {
        bounds[std::string(to_string(p))] = {net.bounds().lo(p), net.bounds().hi(p)};
    }
    j["bounds"] = bounds;
    const auto& fs = net.scaling();
    auto rows = [](const Matrix& m) {
        json out = json::array();
        for (Index r = 0; r < m.rows(); ++r) {
            out.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
        }
        return out;
    };
    j["normalization"] = {{"mean", fs.mean},
                          {"sd", fs.sd},
                          {"region_mean", rows(fs.region_mean)},
                          {"region_sd", rows(fs.region_sd)}};
    j["hyperparameters"] = {{"epochs", config.epochs},
                            {"learning_rate", config.learning_rate},
                            {"weight_decay", config.weight_decay},
                            {"clip_norm", config.clip_norm},
                            {"lr_step", config.lr_step},
                            {"lr_gamma", config.lr_gamma},
                            {"loss_weights",
                             {{"patch", config.loss_weights.patch},
                              {"region", config.loss_weights.region},
                              {"state", config.loss_weights.state}}}};
    j["seed"] = config.seed;
    j["best_loss"] = best_json(result.best_loss);
    j["best_r2"] = best_json(result.best_r2);
    j["weights"] = weights_json(net.store(), net.weights());
    j["best_r2_weights"] = weights_json(net.store(), result.best_r2_weights);
    return j.dump(1);
}

void save_checkpoint(const std::string& path, const TrainResult& result, const TrainConfig& config) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::IoError, fmt::format("cannot write checkpoint '{}'", path));
    }
    out << checkpoint_json(result, config) << '\n';
}

CalibNet parse_checkpoint(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, fmt::format("checkpoint is not valid JSON: {}", e.what()));
    }
    try {
        if (j.at("format") != "calypso-calibnet-1") {
            throw Error(ErrorCode::ParseError, "unknown checkpoint format");
        }
        CalibNetConfig config;
        config.hidden = j.at("hidden").get<Index>();
        config.decoder_hidden = j.at("decoder_hidden").get<Index>();
        config.regions = j.value("regions", Index{0});
        for (Param p : kAllParams) {
            const auto& b = j.at("bounds").at(std::string(to_string(p)));
            config.bounds.interval[static_cast<std::size_t>(p)] = {b.at(0).get<double>(), b.at(1).get<double>()};
        }
        CalibNet net(j.at("channels").get<Index>(), config);
        const auto& norm = j.at("normalization");
        auto matrix = [](const json& rows) {
            const auto v = rows.get<std::vector<std::vector<double>>>();
            Matrix m(v.size(), v.empty() ? 0 : v.front().size());
            for (Index r = 0; r < v.size(); ++r) {
                if (v[r].size() != m.cols()) {
                    throw Error(ErrorCode::ShapeMismatch, "ragged normalization table");
                }
                std::copy(v[r].begin(), v[r].end(), m.row(r).begin());
            }
            return m;
        };
        FeatureScaling fs;
        fs.mean = norm.at("mean").get<std::vector<double>>();
        fs.sd = norm.at("sd").get<std::vector<double>>();
        if (!fs.mean.empty()) {
            fs.region_mean = matrix(norm.at("region_mean"));
            fs.region_sd = matrix(norm.at("region_sd"));
            net.set_normalization(std::move(fs));
        }
        for (const auto& jb : j.at("weights")) {
            const auto name = jb.at("name").get<std::string>();
            auto dst = net.store().block_values(name);
            const auto values = jb.at("values").get<std::vector<double>>();
            if (values.size() != dst.size()) {
                throw Error(ErrorCode::ShapeMismatch, fmt::format("checkpoint block '{}' has wrong size", name));
            }
            std::copy(values.begin(), values.end(), dst.begin());
        }
        return net;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, fmt::format("malformed checkpoint: {}", e.what()));
    }
}

CalibNet load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::IoError, fmt::format("cannot read checkpoint '{}'", path));
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_checkpoint(buffer.str());
}

} // namespace calypso
