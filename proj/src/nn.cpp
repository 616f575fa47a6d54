#include "calypso/nn.hpp"

#include "calypso/error.hpp"

#include <cmath>
#include <cstring>
#include <fmt/format.h>

namespace calypso::nn {

Index ParamStore::add(std::string name, Index rows, Index cols, Index fan_in) {
    Block b{std::move(name), values_.size(), rows, cols, fan_in == 0 ? 1 : fan_in};
    values_.resize(values_.size() + b.size(), 0.0);
    blocks_.push_back(std::move(b));
    return blocks_.size() - 1;
}

void ParamStore::init_uniform(std::mt19937_64& rng) {
    for (const auto& b : blocks_) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(b.fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Index k = 0; k < b.size(); ++k) {
            values_[b.offset + k] = dist(rng);
        }
    }
}

void ParamStore::zero_block(std::string_view name) {
    for (double& v : block_values(name)) {
        v = 0.0;
    }
}

Index ParamStore::block_index(std::string_view name) const {
    for (Index k = 0; k < blocks_.size(); ++k) {
        if (blocks_[k].name == name) {
            return k;
        }
    }
    throw Error(ErrorCode::InvalidArgument, fmt::format("no parameter block '{}'", name));
}

const Block& ParamStore::block(std::string_view name) const {
    return blocks_[block_index(name)];
}

std::span<double> ParamStore::block_values(std::string_view name) {
    const auto& b = block(name);
    return std::span<double>(values_).subspan(b.offset, b.size());
}

std::span<const double> ParamStore::block_values(std::string_view name) const {
    const auto& b = block(name);
    return std::span<const double>(values_).subspan(b.offset, b.size());
}

std::uint64_t ParamStore::checksum() const noexcept {
    std::uint64_t hash = 1469598103934665603ULL;
    for (double v : values_) {
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &v, sizeof(double));
        for (unsigned char c : bytes) {
            hash ^= c;
            hash *= 1099511628211ULL;
        }
    }
    return hash;
}

void add_gru_blocks(ParamStore& store, const std::string& prefix, Index input, Index hidden) {
    store.add(prefix + ".w_rz", 2 * hidden, input + hidden, input + hidden);
    store.add(prefix + ".b_rz", 2 * hidden, 1, input + hidden);
    store.add(prefix + ".w_in", hidden, input, input);
    store.add(prefix + ".b_in", hidden, 1, input);
    store.add(prefix + ".w_hn", hidden, hidden, hidden);
    store.add(prefix + ".b_hn", hidden, 1, hidden);
}

Adam::Adam(Index size, double lr, double weight_decay, double beta1, double beta2, double eps)
    : lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, 0.0),
      v_(size, 0.0) {}

void Adam::step(std::span<double> values, std::span<const double> grads) {
    if (values.size() != m_.size() || grads.size() != m_.size()) {
        throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match parameter count");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (Index k = 0; k < values.size(); ++k) {
        const double g = grads[k] + weight_decay_ * values[k];
        m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * g;
        v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * g * g;
        const double m_hat = m_[k] / c1;
        const double v_hat = v_[k] / c2;
        values[k] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
}

double step_lr(double base_lr, Index epoch, Index step_size, double gamma) {
    if (step_size == 0) {
        return base_lr;
    }
    return base_lr * std::pow(gamma, static_cast<double>(epoch / step_size));
}

double clip_grad_norm(std::span<double> grads, double max_norm) {
    double sq = 0.0;
    for (double g : grads) {
        sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (std::isfinite(norm) && max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / (norm + 1e-6);
        for (double& g : grads) {
            g *= scale;
        }
    }
    return norm;
}

} // namespace calypso::nn
