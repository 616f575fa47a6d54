#pragma once

// Calibration network and joint training through the simulator.
//
// The network reads region-aggregated feature sequences and emits, per region
// and week, five logits squashed into their bound intervals. A GRU encoder
// runs over each region's sequence (weights shared across regions); a
// feed-forward decoder maps [h_t, tau_t] to the logits, where tau_t = t/(T-1).

#include "calypso/nn.hpp"
#include "calypso/sim.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace calypso {

struct BoundSpec {
    std::array<std::pair<double, double>, kParamCount> interval = {{
        {0.0, 1.0},  // beta
        {0.05, 0.9}, // gamma
        {0.0, 0.2},  // delta
        {0.0, 0.9},  // kappa
        {0.0, 1.0},  // epsilon
    }};

    double lo(Param p) const noexcept { return interval[static_cast<std::size_t>(p)].first; }
    double hi(Param p) const noexcept { return interval[static_cast<std::size_t>(p)].second; }
    double mid(Param p) const noexcept { return 0.5 * (lo(p) + hi(p)); }
    bool contains(Param p, double v) const noexcept { return v >= lo(p) && v <= hi(p); }

    /// Throws InvalidArgument unless 0 <= lo <= hi and gamma/delta/kappa/epsilon stay in [0,1].
    void validate() const;
};

/// lo + (hi - lo) * sigmoid(logit)
template <class T>
T bounded(const T& logit, double lo, double hi) {
    return T(lo) + T(hi - lo) * num::sigmoid(logit);
}

struct LossWeights {
    double patch = 1.0;
    double region = 1.0;
    double state = 1.0;

    void validate() const;
};

struct CalibNetConfig {
    Index hidden = 16;         // encoder GRU width
    Index decoder_hidden = 16; // decoder tanh layer width
    /// Regions given a one-hot identity input to the decoder; 0 disables it.
    Index regions = 0;
    BoundSpec bounds;
};

/// Number of static covariates appended to every region's feature vector:
/// z-scored log population and non-general population share.
inline constexpr Index kStaticCovariates = 2;

/// Feature statistics over the training window. Each channel enters the
/// network twice: z-scored with pooled statistics and z-scored per region.
struct FeatureScaling {
    std::vector<double> mean; // per channel, over all region-weeks
    std::vector<double> sd;
    Matrix region_mean;       // regions x channels
    Matrix region_sd;

    bool empty() const noexcept { return mean.empty(); }
};

/// Per-region network inputs: one steps x inputs matrix per region.
struct NetInputs {
    std::vector<Matrix> regions;

    Index steps() const noexcept { return regions.empty() ? 0 : regions.front().rows(); }
};

class CalibNet {
public:
    CalibNet() = default;
    CalibNet(Index channels, CalibNetConfig config = {});

    Index channels() const noexcept { return channels_; }
    Index inputs() const noexcept { return 2 * channels_ + kStaticCovariates; }
    const CalibNetConfig& config() const noexcept { return config_; }
    const BoundSpec& bounds() const noexcept { return config_.bounds; }

    nn::ParamStore& store() noexcept { return store_; }
    const nn::ParamStore& store() const noexcept { return store_; }
    std::vector<double>& weights() noexcept { return store_.values(); }
    const std::vector<double>& weights() const noexcept { return store_.values(); }

    /// Seeded U(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
    void init(std::uint64_t seed);

    /// Mean/sd of region-summed features over the first `window` weeks.
    /// Stored in the net so later inference on other data reuses them.
    void fit_normalization(const DataSet& data, const PatchGraph& graph);
    bool normalized() const noexcept { return !scaling_.empty(); }
    const FeatureScaling& scaling() const noexcept { return scaling_; }
    /// Throws ShapeMismatch if the statistics do not match the channel count.
    void set_normalization(FeatureScaling scaling);

    /// Normalized region inputs for weeks [0, steps). Without stored
    /// normalization the statistics are computed from `data` on the fly.
    NetInputs prepare(const DataSet& data, const PatchGraph& graph, Index steps) const;

    /// Region x steps bounded parameters from any weight vector of this net's
    /// layout. The time index is t / (tau_scale - 1).
    template <class T>
    DiseaseParamsT<T> run(std::span<const T> weights, const NetInputs& inputs, Index tau_scale) const;

private:
    Index channels_ = 0;
    CalibNetConfig config_;
    nn::ParamStore store_;
    FeatureScaling scaling_;
};

template <class T>
DiseaseParamsT<T> CalibNet::run(std::span<const T> weights, const NetInputs& inputs, Index tau_scale) const {
    const Index regions = inputs.regions.size();
    const Index steps = inputs.steps();
    const Index hidden = config_.hidden;
    const auto gru = nn::gru_view(weights, store_, "enc");
    const auto w1 = nn::view(weights, store_.block("dec.w1"));
    const auto b1 = nn::view(weights, store_.block("dec.b1")).data;
    const auto w2 = nn::view(weights, store_.block("dec.w2"));
    const auto b2 = nn::view(weights, store_.block("dec.b2")).data;
    const double denom = tau_scale > 1 ? static_cast<double>(tau_scale - 1) : 1.0;

    DiseaseParamsT<T> out(Level::Region, regions, steps);
    std::vector<T> x(inputs.regions.empty() ? 0 : inputs.regions.front().cols());
    const Index identity = config_.regions;
    if (identity != 0 && identity != regions) {
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("network has identity inputs for {} regions, inputs cover {}", identity, regions));
    }
    std::vector<T> dec_in(hidden + 1 + identity, T(0.0));
    std::vector<T> z1(config_.decoder_hidden);
    std::vector<T> logits(kParamCount);
    for (Index r = 0; r < regions; ++r) {
        std::vector<T> h(hidden, T(0.0));
        const Matrix& seq = inputs.regions[r];
        for (Index k = 0; k < identity; ++k) {
            dec_in[hidden + 1 + k] = T(k == r ? 1.0 : 0.0);
        }
        for (Index t = 0; t < steps; ++t) {
            for (Index k = 0; k < x.size(); ++k) {
                x[k] = T(seq(t, k));
            }
            h = nn::gru_step(gru, std::span<const T>(x), std::span<const T>(h));
            std::copy(h.begin(), h.end(), dec_in.begin());
            dec_in[hidden] = T(static_cast<double>(t) / denom);
            nn::affine(w1, b1, std::span<const T>(dec_in), std::span<T>(z1));
            for (auto& v : z1) {
                v = num::tanh(v);
            }
            nn::affine(w2, b2, std::span<const T>(z1), std::span<T>(logits));
            for (std::size_t k = 0; k < kParamCount; ++k) {
                const auto p = static_cast<Param>(k);
                out.grids[k](r, t) = bounded(logits[k], bounds().lo(p), bounds().hi(p));
            }
        }
    }
    return out;
}

/// Region x window parameters for a data set.
DiseaseParams infer_params(const CalibNet& net, const DataSet& data, const PatchGraph& graph);

struct LossParts {
    double patch = 0.0;
    double region = 0.0;
    double state = 0.0;
    double total = 0.0;
};

/// w_P MSE(patch) + w_R MSE(region) + w_S MSE(state) over the first
/// `observed.window` weeks. `parts` receives the unweighted level MSEs.
template <class T>
T multi_resolution_loss(const Grid<T>& predicted_I, const DataSet& observed, const LossWeights& weights,
                        const PatchGraph& graph, LossParts* parts = nullptr);

/// Convenience overload on a trajectory's I compartment.
template <class T>
T multi_resolution_loss(const TrajectoryT<T>& pred, const DataSet& observed, const LossWeights& weights,
                        const PatchGraph& graph, LossParts* parts = nullptr) {
    return multi_resolution_loss(pred.I, observed, weights, graph, parts);
}

struct TrainConfig {
    Index epochs = 2000;
    double learning_rate = 5e-3;
    double weight_decay = 0.01;
    double clip_norm = 10.0;
    Index lr_step = 30;
    double lr_gamma = 0.9;
    std::uint64_t seed = 0;
    LossWeights loss_weights;
    /// Record every n-th epoch in the history (the last epoch is always kept).
    Index history_stride = 1;
};

struct EpochRecord {
    Index epoch = 0;
    double loss = 0.0;
    LossParts parts;
    double state_r2 = 0.0;
    double learning_rate = 0.0;
    double grad_norm = 0.0;
};

struct BestRecord {
    Index epoch = 0;
    double loss = 0.0;
    double state_r2 = 0.0;
};

struct TrainResult {
    CalibNet net;                         // weights of the lowest-loss epoch
    std::vector<double> best_r2_weights;  // weights of the highest state-R^2 epoch
    BestRecord best_loss;
    BestRecord best_r2;
    std::vector<EpochRecord> history;
};

/// Loss and d(loss)/d(weights) for one weight vector.
struct LossGradient {
    double loss = 0.0;
    LossParts parts;
    double state_r2 = 0.0;
    std::vector<double> gradient;
};

/// One forward/backward pass through network and simulator over the window.
LossGradient loss_and_gradient(const CalibNet& net, std::span<const double> weights, const NetInputs& inputs,
                               const DataSet& data, const PatchGraph& graph, const LossWeights& loss_weights);
/// Same, recording on a caller-owned tape that is cleared first.
LossGradient loss_and_gradient(const CalibNet& net, std::span<const double> weights, const NetInputs& inputs,
                               const DataSet& data, const PatchGraph& graph, const LossWeights& loss_weights,
                               ad::Tape& tape);

/// Forward-only loss for an arbitrary weight vector (finite-difference oracle).
double loss_value(const CalibNet& net, std::span<const double> weights, const NetInputs& inputs,
                  const DataSet& data, const PatchGraph& graph, const LossWeights& loss_weights);

/// Adam + weight decay + clipping + step decay through the simulator. `net`
/// must already be initialised; normalization is fitted if absent.
TrainResult train_joint(const CalibNet& net, const DataSet& data, const PatchGraph& graph,
                        const TrainConfig& config);

/// Region-level parameters over window + horizon: network output for the
/// window, then the last window step held constant.
DiseaseParams forecast_params(const CalibNet& net, const DataSet& data, const PatchGraph& graph, Index horizon);

/// Forecast parameters as if the window ended after `cut` weeks: network
/// output from features of weeks [0, cut), then week cut-1 held for
/// `horizon` weeks. The time embedding keeps the full window's scale.
DiseaseParams forecast_params_at(const CalibNet& net, const DataSet& data, const PatchGraph& graph, Index cut,
                                 Index horizon);

/// Simulates window + horizon weeks from the data's initial infections.
Trajectory forecast(const CalibNet& net, const DataSet& data, const PatchGraph& graph, Index horizon);

/// Checkpoint JSON: weights by block, bounds, normalization, hyperparameters,
/// seed and best records.
std::string checkpoint_json(const TrainResult& result, const TrainConfig& config);
void save_checkpoint(const std::string& path, const TrainResult& result, const TrainConfig& config);
CalibNet load_checkpoint(const std::string& path);
CalibNet parse_checkpoint(const std::string& text);

} // namespace calypso
