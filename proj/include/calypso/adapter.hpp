#pragma once

// Residual corrector for simulator forecasts.
//
// The adapter works on a stack of series (patches, then regions, then the
// state total) sharing one recurrent network. At week t each series feeds
// [raw_t / s, prev_t / s, tau_t, sin, cos] through a stacked GRU; a linear
// head gives the residual r_t in units of s, and the corrected value is
// max(0, raw_t + s r_t). `prev_t` is the observed value of week t-1 while it
// is known and the adapter's own previous output afterwards.

#include "calypso/calib.hpp"
#include "calypso/nn.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace calypso {

struct AdapterConfig {
    Index hidden = 8;
    Index layers = 2;
    /// Seasonal period of the sin/cos time embedding, in weeks.
    double period = 52.0;
};

inline constexpr Index kAdapterInputs = 5;

class AdapterNet {
public:
    AdapterNet() = default;
    explicit AdapterNet(AdapterConfig config);

    const AdapterConfig& config() const noexcept { return config_; }
    nn::ParamStore& store() noexcept { return store_; }
    const nn::ParamStore& store() const noexcept { return store_; }
    std::vector<double>& weights() noexcept { return store_.values(); }
    const std::vector<double>& weights() const noexcept { return store_.values(); }

    /// Seeded uniform initialisation with a zeroed output head, so an
    /// untrained adapter is the identity.
    void init(std::uint64_t seed);

    /// Per-series scale max(1, mean of raw) over the first `steps` weeks.
    void fit_scales(const Matrix& raw, Index steps);
    const std::vector<double>& scales() const noexcept { return scales_; }
    void set_scales(std::vector<double> scales);
    /// Weeks mapped to tau = 1.
    Index tau_scale() const noexcept { return tau_scale_; }
    void set_tau_scale(Index steps);

private:
    AdapterConfig config_;
    nn::ParamStore store_;
    std::vector<double> scales_;
    Index tau_scale_ = 1;
};

/// One training sequence: raw simulator output and truth over the same weeks,
/// with truth usable as history for the first `known` weeks.
struct AdapterSequence {
    Matrix raw;
    Matrix truth;
    Index known = 0;
};

/// Residuals (in counts, before clamping) for a raw series stack. `history`
/// holds observed values for its first history.cols() weeks.
Matrix adapter_residual(const AdapterNet& net, const Matrix& raw, const Matrix& history);

/// max(0, raw + residual). Throws NonFiniteInput for non-finite raw values.
Matrix refine(const AdapterNet& net, const Matrix& raw, const Matrix& history);

struct AdapterTrainConfig {
    Index epochs = 300;
    double learning_rate = 5e-3;
    double weight_decay = 0.0;
    double clip_norm = 10.0;
    /// Probability of feeding the true previous value past the known prefix.
    double teacher_forcing = 0.5;
    /// Decay the teacher-forcing ratio linearly to 0 over training.
    bool decay_teacher_forcing = true;
    std::uint64_t seed = 0;
};

struct AdapterTrainResult {
    AdapterNet net; // lowest-loss weights
    double initial_loss = 0.0;
    double best_loss = 0.0;
    Index best_epoch = 0;
    std::vector<double> history;
};

/// Minimises the mean squared scaled error sum_{u,t} ((corrected - truth) / s_u)^2.
/// `net` must be initialised and have scales for the sequences' series.
AdapterTrainResult train_adapter(const AdapterNet& net, const std::vector<AdapterSequence>& sequences,
                                 const AdapterTrainConfig& config);

/// Mean squared scaled error of the refined sequences under `weights`.
double adapter_loss(const AdapterNet& net, std::span<const double> weights,
                    const std::vector<AdapterSequence>& sequences);

/// Patches, regions and state stacked as rows (patch_count + region_count + 1).
Matrix level_stack(const Matrix& patch_series, const PatchGraph& graph);
/// Row index of the state total inside a level stack.
inline Index state_row(const PatchGraph& graph) { return graph.patch_count() + graph.region_count(); }

struct AdapterDataConfig {
    Index horizon = 4;
    /// Pseudo-forecast origins at window - horizon - k * stride, k < origins.
    Index origins = 6;
    Index stride = 4;
};

/// Training sequences from a frozen calibration net: the in-window fit plus
/// pseudo-forecasts whose origin lies inside the window.
std::vector<AdapterSequence> adapter_sequences(const CalibNet& net, const DataSet& data, const PatchGraph& graph,
                                               const AdapterDataConfig& config);

/// Raw and adapter-corrected forecast over window + horizon as level stacks.
struct RefinedForecast {
    Matrix raw;
    Matrix corrected;
};

RefinedForecast refined_forecast(const CalibNet& calib, const AdapterNet& adapter, const DataSet& data,
                                 const PatchGraph& graph, Index horizon);

/// Fits scales, builds sequences and trains; throws InvariantViolation if
/// the calibration net's weights change while doing so.
AdapterTrainResult fit_adapter(const CalibNet& calib, const DataSet& data, const PatchGraph& graph,
                               const AdapterDataConfig& data_config, const AdapterTrainConfig& config,
                               AdapterConfig arch = {});

std::string adapter_checkpoint_json(const AdapterTrainResult& result, const AdapterTrainConfig& config);
void save_adapter_checkpoint(const std::string& path, const AdapterTrainResult& result,
                             const AdapterTrainConfig& config);
AdapterNet parse_adapter_checkpoint(const std::string& text);
AdapterNet load_adapter_checkpoint(const std::string& path);

} // namespace calypso
