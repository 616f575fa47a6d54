#include "calypso/core.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

namespace calypso {

namespace {

constexpr double kRowSumTolerance = 1e-9;

std::string patch_label(Index i, std::span<const std::string> ids) {
    return i < ids.size() ? ids[i] : fmt::format("#{}", i);
}

} // namespace

std::string_view to_string(Category c) noexcept {
    return c == Category::General ? "general" : "non-general";
}

Category parse_category(std::string_view text) {
    if (text == "general" || text == "1") {
        return Category::General;
    }
    if (text == "non-general" || text == "nongeneral" || text == "2") {
        return Category::NonGeneral;
    }
    throw Error(ErrorCode::ParseError, fmt::format("unknown patch category '{}'", text));
}

std::string_view to_string(Level level) noexcept {
    switch (level) {
    case Level::Patch: return "patch";
    case Level::Region: return "region";
    case Level::State: return "state";
    }
    return "?";
}

Level parse_level(std::string_view text) {
    if (text == "patch") return Level::Patch;
    if (text == "region") return Level::Region;
    if (text == "state") return Level::State;
    throw Error(ErrorCode::UnknownLevel, fmt::format("unknown aggregation level '{}'", text));
}

std::string_view to_string(Param p) noexcept {
    switch (p) {
    case Param::Beta: return "beta";
    case Param::Gamma: return "gamma";
    case Param::Delta: return "delta";
    case Param::Kappa: return "kappa";
    case Param::Epsilon: return "epsilon";
    }
    return "?";
}

Matrix build_travel_matrix(const FlowMap& commute, const FlowMap& facility,
                           std::span<const double> populations,
                           std::span<const std::string> patch_ids) {
    const Index n = populations.size();
    Matrix theta(n, n, 0.0);
    std::vector<double> outflow(n, 0.0);

    auto accumulate = [&](const FlowMap& flows) {
        for (const auto& [key, count] : flows) {
            const auto [src, dst] = key;
            if (src >= n || dst >= n) {
                throw Error(ErrorCode::ShapeMismatch, "flow references a patch outside the graph");
            }
            if (!(count >= 0.0)) {
                throw Error(ErrorCode::InvalidArgument,
                            fmt::format("negative flow from {}", patch_label(src, patch_ids)));
            }
            if (src == dst) {
                continue;
            }
            theta(src, dst) += count;
            outflow[src] += count;
        }
    };
    accumulate(commute);
    accumulate(facility);

    for (Index i = 0; i < n; ++i) {
        if (!(populations[i] > 0.0)) {
            throw Error(ErrorCode::InvalidArgument,
                        fmt::format("population of {} must be positive", patch_label(i, patch_ids)));
        }
        if (outflow[i] > populations[i]) {
            throw Error(ErrorCode::OffDiagonalOverflow,
                        fmt::format("outflow {} from patch {} exceeds its population {}", outflow[i],
                                    patch_label(i, patch_ids), populations[i]));
        }
        double off = 0.0;
        for (Index j = 0; j < n; ++j) {
            if (j != i) {
                theta(i, j) /= populations[i];
                off += theta(i, j);
            }
        }
        theta(i, i) = std::max(0.0, 1.0 - off);
    }
    return theta;
}

Matrix average_weekly_matrices(std::span<const Matrix> weekly) {
    if (weekly.empty()) {
        throw Error(ErrorCode::ShapeMismatch, "no weekly matrices to average");
    }
    const Index rows = weekly.front().rows();
    const Index cols = weekly.front().cols();
    Matrix mean(rows, cols, 0.0);
    for (const auto& m : weekly) {
        if (m.rows() != rows || m.cols() != cols) {
            throw Error(ErrorCode::ShapeMismatch,
                        fmt::format("weekly matrix {}x{} differs from {}x{}", m.rows(), m.cols(), rows, cols));
        }
        for (Index k = 0; k < m.data().size(); ++k) {
            mean.data()[k] += m.data()[k];
        }
    }
    const double scale = 1.0 / static_cast<double>(weekly.size());
    for (double& v : mean.data()) {
        v *= scale;
    }
    return mean;
}

PatchGraph::PatchGraph(std::vector<PatchInfo> patches, const Matrix& theta) {
    const Index n = patches.size();
    if (theta.rows() != n || theta.cols() != n) {
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("travel matrix is {}x{} for {} patches", theta.rows(), theta.cols(), n));
    }
    std::vector<Index> order(n);
    std::iota(order.begin(), order.end(), Index{0});
    std::sort(order.begin(), order.end(), [&](Index a, Index b) { return patches[a].id < patches[b].id; });
    for (Index k = 1; k < n; ++k) {
        if (patches[order[k]].id == patches[order[k - 1]].id) {
            throw Error(ErrorCode::InvalidArgument, fmt::format("duplicate patch id '{}'", patches[order[k]].id));
        }
    }

    std::vector<std::string> region_names;
    for (const auto& p : patches) {
        region_names.push_back(p.region);
    }
    std::sort(region_names.begin(), region_names.end());
    region_names.erase(std::unique(region_names.begin(), region_names.end()), region_names.end());
    regions_ = region_names;
    members_.assign(regions_.size(), {});

    theta_ = Matrix(n, n);
    for (Index a = 0; a < n; ++a) {
        const auto& p = patches[order[a]];
        if (!(p.population > 0.0) || !std::isfinite(p.population)) {
            throw Error(ErrorCode::InvalidArgument, fmt::format("population of '{}' must be positive", p.id));
        }
        ids_.push_back(p.id);
        populations_.push_back(p.population);
        categories_.push_back(p.category);
        const auto region = static_cast<Index>(
            std::lower_bound(regions_.begin(), regions_.end(), p.region) - regions_.begin());
        region_of_.push_back(region);
        members_[region].push_back(a);

        double row_sum = 0.0;
        for (Index b = 0; b < n; ++b) {
            const double v = theta(order[a], order[b]);
            if (!(v >= 0.0 && v <= 1.0)) {
                throw Error(ErrorCode::InvalidArgument,
                            fmt::format("travel fraction {} from '{}' is outside [0,1]", v, p.id));
            }
            theta_(a, b) = v;
            row_sum += v;
        }
        if (std::abs(row_sum - 1.0) > kRowSumTolerance) {
            throw Error(ErrorCode::InvalidArgument,
                        fmt::format("travel row of '{}' sums to {}", p.id, row_sum));
        }
    }
}

std::optional<Index> PatchGraph::find_patch(std::string_view id) const {
    const auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    if (it == ids_.end() || *it != id) {
        return std::nullopt;
    }
    return static_cast<Index>(it - ids_.begin());
}

std::optional<Index> PatchGraph::find_region(std::string_view name) const {
    const auto it = std::lower_bound(regions_.begin(), regions_.end(), name);
    if (it == regions_.end() || *it != name) {
        return std::nullopt;
    }
    return static_cast<Index>(it - regions_.begin());
}

Index PatchGraph::patch_index(std::string_view id) const {
    if (auto p = find_patch(id)) {
        return *p;
    }
    throw Error(ErrorCode::UnknownTarget, fmt::format("unknown patch '{}'", id));
}

Index PatchGraph::region_index(std::string_view name) const {
    if (auto r = find_region(name)) {
        return *r;
    }
    throw Error(ErrorCode::UnknownRegion, fmt::format("unknown region '{}'", name));
}

double PatchGraph::region_population(Index region) const {
    double total = 0.0;
    for (Index p : members(region)) {
        total += populations_[p];
    }
    return total;
}

double PatchGraph::total_population() const {
    return std::accumulate(populations_.begin(), populations_.end(), 0.0);
}

PatchGraph PatchGraph::with_theta(const Matrix& theta) const {
    std::vector<PatchInfo> patches;
    for (Index p = 0; p < patch_count(); ++p) {
        patches.push_back({ids_[p], regions_[region_of_[p]], categories_[p], populations_[p]});
    }
    return PatchGraph(std::move(patches), theta);
}

void DataSet::validate(const PatchGraph& graph) const {
    const Index n = graph.patch_count();
    if (observed.rows() != n) {
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("observed has {} rows for {} patches", observed.rows(), n));
    }
    if (initial_infections.size() != n) {
        throw Error(ErrorCode::ShapeMismatch, "initial infections do not cover every patch");
    }
    if (feature_names.size() != features.size()) {
        throw Error(ErrorCode::ShapeMismatch, "feature names do not match channel count");
    }
    for (const auto& f : features) {
        if (f.rows() != n || f.cols() != observed.cols()) {
            throw Error(ErrorCode::ShapeMismatch, "feature channel shape differs from observed counts");
        }
    }
    for (double v : observed.data()) {
        if (!(v >= 0.0)) {
            throw Error(ErrorCode::InvalidArgument, "observed counts must be nonnegative");
        }
    }
    for (Index p = 0; p < n; ++p) {
        if (!(initial_infections[p] >= 0.0) || initial_infections[p] > graph.populations()[p]) {
            throw Error(ErrorCode::InvalidArgument,
                        fmt::format("initial infections of '{}' outside [0, population]", graph.patch_ids()[p]));
        }
    }
    if (window == 0 || window > observed.cols()) {
        throw Error(ErrorCode::WindowMismatch,
                    fmt::format("window {} does not fit {} observed weeks", window, observed.cols()));
    }
}

Metrics metrics(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) {
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("prediction length {} differs from truth length {}", pred.size(), truth.size()));
    }
    if (truth.size() < 2) {
        throw Error(ErrorCode::InvalidArgument, "metrics need at least two points");
    }
    const double n = static_cast<double>(truth.size());
    const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / n;
    double ss_res = 0.0;
    double ss_tot = 0.0;
    double abs_err = 0.0;
    for (Index k = 0; k < truth.size(); ++k) {
        const double e = pred[k] - truth[k];
        ss_res += e * e;
        abs_err += std::abs(e);
        ss_tot += (truth[k] - mean) * (truth[k] - mean);
    }
    if (ss_tot == 0.0) {
        throw Error(ErrorCode::DegenerateTruth, "truth series is constant; R^2 undefined");
    }
    Metrics m;
    m.mse = ss_res / n;
    m.mae = abs_err / n;
    m.rmse = std::sqrt(m.mse);
    m.r2 = 1.0 - ss_res / ss_tot;
    return m;
}

double r_squared(std::span<const double> pred, std::span<const double> truth) {
    return metrics(pred, truth).r2;
}

} // namespace calypso
