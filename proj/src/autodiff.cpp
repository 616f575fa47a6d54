#include "calypso/autodiff.hpp"

#include "calypso/error.hpp"

#include <cmath>
#include <fmt/format.h>

namespace calypso::ad {

namespace {

Tape* common_tape(const Var& a, const Var& b) {
    if (a.is_constant()) {
        return b.tape();
    }
    if (!b.is_constant() && a.tape() != b.tape()) {
        throw Error(ErrorCode::TapeMismatch, "operands live on different tapes");
    }
    return a.tape();
}

// Collects edges for the non-constant arguments of an n-ary node.
class EdgeList {
public:
    EdgeList() : edges_(scratch()) { edges_.clear(); }

    void add(const Var& v, double partial) {
        if (v.is_constant()) {
            return;
        }
        if (tape_ == nullptr) {
            tape_ = v.tape();
        } else if (tape_ != v.tape()) {
            throw Error(ErrorCode::TapeMismatch, "operands live on different tapes");
        }
        edges_.push_back({v.index(), partial});
    }
    void reserve(std::size_t n) { edges_.reserve(n); }

    Var finish(Op op, double value) const {
        if (tape_ == nullptr) {
            return Var(value);
        }
        return tape_->push(op, value, edges_);
    }

private:
    static std::vector<Tape::Edge>& scratch() {
        thread_local std::vector<Tape::Edge> buffer;
        return buffer;
    }

    Tape* tape_ = nullptr;
    std::vector<Tape::Edge>& edges_;
};

Var binary(Op op, const Var& a, double da, const Var& b, double db, double value) {
    if (a.is_constant()) {
        return b.is_constant() ? Var(value) : b.tape()->push(op, value, {{b.index(), db}});
    }
    if (b.is_constant()) {
        return a.tape()->push(op, value, {{a.index(), da}});
    }
    return a.tape()->push(op, value, {{a.index(), da}, {b.index(), db}});
}

Var unary(Op op, const Var& x, double value, double partial) {
    if (x.is_constant()) {
        return Var(value);
    }
    return x.tape()->push(op, value, {{x.index(), partial}});
}

} // namespace

void Tape::reserve(std::size_t nodes, std::size_t edges) {
    values_.reserve(nodes);
    ops_.reserve(nodes);
    edge_begin_.reserve(nodes + 1);
    edges_.reserve(edges);
}

void Tape::clear() noexcept {
    values_.clear();
    ops_.clear();
    edge_begin_.assign(1, 0);
    edges_.clear();
    adjoints_.clear();
}

Var Tape::variable(double value) {
    return push(Op::Leaf, value, {});
}

std::vector<Var> Tape::variables(std::span<const double> values) {
    std::vector<Var> out;
    out.reserve(values.size());
    for (double v : values) {
        out.push_back(variable(v));
    }
    return out;
}

Var Tape::push(Op op, double value, std::span<const Edge> edges) {
    const auto index = static_cast<std::uint32_t>(values_.size());
    values_.push_back(value);
    ops_.push_back(op);
    edges_.insert(edges_.end(), edges.begin(), edges.end());
    edge_begin_.push_back(static_cast<std::uint32_t>(edges_.size()));
    return Var(this, index, value);
}

std::span<const Tape::Edge> Tape::edges(std::uint32_t node) const {
    const auto begin = edge_begin_.at(node);
    const auto end = edge_begin_.at(node + 1);
    return std::span<const Edge>(edges_.data() + begin, end - begin);
}

void Tape::backward(const Var& root) {
    if (root.tape() != this) {
        throw Error(ErrorCode::TapeMismatch, "backward root does not belong to this tape");
    }
    adjoints_.assign(values_.size(), 0.0);
    adjoints_[root.index()] = 1.0;
    for (std::int64_t k = root.index(); k >= 0; --k) {
        const double adj = adjoints_[static_cast<std::size_t>(k)];
        if (adj == 0.0) {
            continue;
        }
        const auto begin = edge_begin_[static_cast<std::size_t>(k)];
        const auto end = edge_begin_[static_cast<std::size_t>(k) + 1];
        for (auto e = begin; e < end; ++e) {
            adjoints_[edges_[e].parent] += adj * edges_[e].partial;
        }
    }
}

void Tape::backward(std::span<const Var> root) {
    if (root.size() != 1) {
        throw Error(ErrorCode::NonScalarRoot,
                    fmt::format("backward needs a scalar root, got {} elements", root.size()));
    }
    backward(root.front());
}

double Tape::adjoint(const Var& v) const {
    if (v.is_constant()) {
        return 0.0;
    }
    if (v.tape() != this) {
        throw Error(ErrorCode::TapeMismatch, "variable does not belong to this tape");
    }
    return v.index() < adjoints_.size() ? adjoints_[v.index()] : 0.0;
}

Var operator+(const Var& a, const Var& b) {
    common_tape(a, b);
    const double value = a.value() + b.value();
    return binary(Op::Add, a, 1.0, b, 1.0, value);
}

Var operator-(const Var& a, const Var& b) {
    common_tape(a, b);
    const double value = a.value() - b.value();
    return binary(Op::Sub, a, 1.0, b, -1.0, value);
}

Var operator*(const Var& a, const Var& b) {
    common_tape(a, b);
    const double value = a.value() * b.value();
    return binary(Op::Mul, a, b.value(), b, a.value(), value);
}

Var operator/(const Var& a, const Var& b) {
    common_tape(a, b);
    if (b.value() == 0.0) {
        throw Error(ErrorCode::DivisionByZero, "division by zero on tape");
    }
    const double inv = 1.0 / b.value();
    const double value = a.value() * inv;
    return binary(Op::Div, a, inv, b, -value * inv, value);
}

Var operator-(const Var& a) {
    return unary(Op::Neg, a, -a.value(), -1.0);
}

Var min(const Var& a, const Var& b) {
    common_tape(a, b);
    if (a.value() <= b.value()) {
        return unary(Op::Min, a, a.value(), 1.0);
    }
    return unary(Op::Min, b, b.value(), 1.0);
}

Var exp(const Var& x) {
    const double value = std::exp(x.value());
    return unary(Op::Exp, x, value, value);
}

Var log(const Var& x) {
    return unary(Op::Log, x, std::log(x.value()), 1.0 / x.value());
}

Var sigmoid(const Var& x) {
    const double v = x.value();
    const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    return unary(Op::Sigmoid, x, s, s * (1.0 - s));
}

Var tanh(const Var& x) {
    const double t = std::tanh(x.value());
    return unary(Op::Tanh, x, t, 1.0 - t * t);
}

Var relu(const Var& x) {
    return x.value() > 0.0 ? unary(Op::Relu, x, x.value(), 1.0) : unary(Op::Relu, x, 0.0, 0.0);
}

Var sum(std::span<const Var> xs) {
    EdgeList edges;
    edges.reserve(xs.size());
    double value = 0.0;
    for (const auto& x : xs) {
        value += x.value();
        edges.add(x, 1.0);
    }
    return edges.finish(Op::Sum, value);
}

Var dot(std::span<const Var> a, std::span<const Var> b) {
    if (a.size() != b.size()) {
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("dot of lengths {} and {}", a.size(), b.size()));
    }
    EdgeList edges;
    edges.reserve(2 * a.size());
    double value = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        value += a[k].value() * b[k].value();
        edges.add(a[k], b[k].value());
        edges.add(b[k], a[k].value());
    }
    return edges.finish(Op::Dot, value);
}

Var affine(std::span<const Var> w, std::span<const Var> x, const Var& b) {
    if (w.size() != x.size()) {
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("affine of lengths {} and {}", w.size(), x.size()));
    }
    EdgeList edges;
    edges.reserve(2 * w.size() + 1);
    double value = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
        value += w[k].value() * x[k].value();
        edges.add(w[k], x[k].value());
        edges.add(x[k], w[k].value());
    }
    value += b.value();
    edges.add(b, 1.0);
    return edges.finish(Op::Affine, value);
}

Var lincomb(std::span<const double> w, std::span<const Var> x) {
    if (w.size() != x.size()) {
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("lincomb of lengths {} and {}", w.size(), x.size()));
    }
    EdgeList edges;
    edges.reserve(x.size());
    double value = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
        if (w[k] == 0.0) {
            continue;
        }
        value += w[k] * x[k].value();
        edges.add(x[k], w[k]);
    }
    return edges.finish(Op::LinComb, value);
}

} // namespace calypso::ad
