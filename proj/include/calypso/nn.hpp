#pragma once

// Small neural-network toolkit shared by the calibration network and the
// adapter: a flat parameter store with named blocks, affine and GRU layers
// generic over double / ad::Var, Adam with L2 weight decay, step learning-rate
// decay and global-norm gradient clipping.

#include "calypso/grid.hpp"
#include "calypso/scalar.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace calypso::nn {

struct Block {
    std::string name;
    Index offset = 0;
    Index rows = 0;
    Index cols = 0; // 1 for bias vectors
    Index fan_in = 1;

    Index size() const noexcept { return rows * cols; }
};

class ParamStore {
public:
    /// Registers a rows x cols block initialised later from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    Index add(std::string name, Index rows, Index cols, Index fan_in);

    void init_uniform(std::mt19937_64& rng);
    void zero_block(std::string_view name);

    const std::vector<Block>& blocks() const noexcept { return blocks_; }
    const Block& block(std::string_view name) const;
    Index block_index(std::string_view name) const;

    std::vector<double>& values() noexcept { return values_; }
    const std::vector<double>& values() const noexcept { return values_; }
    Index size() const noexcept { return values_.size(); }

    std::span<double> block_values(std::string_view name);
    std::span<const double> block_values(std::string_view name) const;

    /// FNV-1a over the raw weight bytes; used to prove analyses leave a
    /// model untouched.
    std::uint64_t checksum() const noexcept;

private:
    std::vector<Block> blocks_;
    std::vector<double> values_;
};

/// Read-only view of a block inside a flat weight vector of any scalar type.
template <class T>
struct MatrixView {
    std::span<const T> data;
    Index rows = 0;
    Index cols = 0;

    std::span<const T> row(Index r) const { return data.subspan(r * cols, cols); }
};

template <class T>
MatrixView<T> view(std::span<const T> weights, const Block& b) {
    return {weights.subspan(b.offset, b.size()), b.rows, b.cols};
}

/// out = W x + b
template <class T>
void affine(const MatrixView<T>& w, std::span<const T> bias, std::span<const T> x, std::span<T> out) {
    for (Index r = 0; r < w.rows; ++r) {
        out[r] = num::affine(w.row(r), x, bias[r]);
    }
}

/// Weights of one GRU layer (PyTorch gate convention).
template <class T>
struct GruWeights {
    MatrixView<T> w_rz; // 2H x (I+H): reset then update gate, over [x; h]
    std::span<const T> b_rz;
    MatrixView<T> w_in; // H x I
    std::span<const T> b_in;
    MatrixView<T> w_hn; // H x H
    std::span<const T> b_hn;

    Index hidden() const noexcept { return w_hn.rows; }
};

/// Registers the blocks of a GRU layer under `prefix`.
void add_gru_blocks(ParamStore& store, const std::string& prefix, Index input, Index hidden);

template <class T>
GruWeights<T> gru_view(std::span<const T> weights, const ParamStore& store, const std::string& prefix) {
    return {view(weights, store.block(prefix + ".w_rz")),
            view(weights, store.block(prefix + ".b_rz")).data,
            view(weights, store.block(prefix + ".w_in")),
            view(weights, store.block(prefix + ".b_in")).data,
            view(weights, store.block(prefix + ".w_hn")),
            view(weights, store.block(prefix + ".b_hn")).data};
}

/// One GRU step:
///   r = sigma(W_r [x;h] + b_r), z = sigma(W_z [x;h] + b_z)
///   n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
///   h' = (1 - z) n + z h
template <class T>
std::vector<T> gru_step(const GruWeights<T>& w, std::span<const T> x, std::span<const T> h) {
    const Index hidden = w.hidden();
    std::vector<T> xh;
    xh.reserve(x.size() + h.size());
    xh.insert(xh.end(), x.begin(), x.end());
    xh.insert(xh.end(), h.begin(), h.end());

    std::vector<T> out(hidden);
    for (Index k = 0; k < hidden; ++k) {
        const T r = num::sigmoid(num::affine(w.w_rz.row(k), std::span<const T>(xh), w.b_rz[k]));
        const T z = num::sigmoid(num::affine(w.w_rz.row(hidden + k), std::span<const T>(xh), w.b_rz[hidden + k]));
        const T a = num::affine(w.w_in.row(k), x, w.b_in[k]);
        const T c = num::affine(w.w_hn.row(k), h, w.b_hn[k]);
        const T n = num::tanh(a + r * c);
        out[k] = n + z * (h[k] - n);
    }
    return out;
}

/// Adam with L2 weight decay folded into the gradient.
class Adam {
public:
    Adam(Index size, double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void set_lr(double lr) noexcept { lr_ = lr; }
    double lr() const noexcept { return lr_; }

    void step(std::span<double> values, std::span<const double> grads);

private:
    double lr_;
    double weight_decay_;
    double beta1_;
    double beta2_;
    double eps_;
    std::int64_t t_ = 0;
    std::vector<double> m_;
    std::vector<double> v_;
};

/// lr * gamma^(floor(epoch / step_size))
double step_lr(double base_lr, Index epoch, Index step_size, double gamma);

/// Scales `grads` in place so their L2 norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(std::span<double> grads, double max_norm);

} // namespace calypso::nn
