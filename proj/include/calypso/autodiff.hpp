#pragma once

// Reverse-mode automatic differentiation over scalars.
//
// A Tape is an append-only list of nodes. Each node stores its forward value,
// the operation that produced it, and one (parent, local partial) edge per
// non-constant argument. Vector-shaped operations (sum, dot, affine, linear
// combination) are recorded as a single n-ary node so that a simulator step
// over N patches costs O(N) nodes rather than O(N^2).

#include <cstdint>
#include <span>
#include <vector>

namespace calypso::ad {

enum class Op : std::uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Min,
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Relu,
    Sum,
    Dot,
    Affine,
    LinComb,
};

class Tape;

/// A scalar that is either a constant (no tape) or a node on a Tape.
class Var {
public:
    Var() noexcept = default;
    Var(double constant) noexcept : value_(constant) {} // NOLINT: implicit by design of generic code

    double value() const noexcept { return value_; }
    bool is_constant() const noexcept { return tape_ == nullptr; }
    Tape* tape() const noexcept { return tape_; }
    std::uint32_t index() const noexcept { return index_; }

private:
    friend class Tape;
    Var(Tape* tape, std::uint32_t index, double value) noexcept
        : tape_(tape), index_(index), value_(value) {}

    Tape* tape_ = nullptr;
    std::uint32_t index_ = 0;
    double value_ = 0.0;
};

class Tape {
public:
    struct Edge {
        std::uint32_t parent;
        double partial;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void reserve(std::size_t nodes, std::size_t edges);
    /// Drops every node but keeps the allocated storage. Vars recorded
    /// earlier become invalid.
    void clear() noexcept;

    Var variable(double value);
    std::vector<Var> variables(std::span<const double> values);

    /// Appends a node. Edges must reference nodes already on this tape.
    Var push(Op op, double value, std::span<const Edge> edges);
    Var push(Op op, double value, std::initializer_list<Edge> edges) {
        return push(op, value, std::span<const Edge>(edges.begin(), edges.size()));
    }

    std::size_t size() const noexcept { return values_.size(); }
    double value(std::uint32_t node) const { return values_.at(node); }
    Op op(std::uint32_t node) const { return ops_.at(node); }
    std::span<const Edge> edges(std::uint32_t node) const;

    /// Propagates adjoints from a scalar root. Adjoints from earlier calls are
    /// discarded first.
    void backward(const Var& root);
    /// Same, for a root passed as a sequence; anything but one element throws
    /// NonScalarRoot.
    void backward(std::span<const Var> root);

    double adjoint(const Var& v) const;
    std::span<const double> adjoints() const noexcept { return adjoints_; }

private:
    std::vector<double> values_;
    std::vector<Op> ops_;
    std::vector<std::uint32_t> edge_begin_{0};
    std::vector<Edge> edges_;
    std::vector<double> adjoints_;
};

// Arithmetic. Mixed constant/tape operands are allowed; two tape operands must
// share a tape (TapeMismatch otherwise).
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }

/// Smaller argument; on ties the gradient goes to `a`.
Var min(const Var& a, const Var& b);
Var exp(const Var& x);
Var log(const Var& x);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var relu(const Var& x);

Var sum(std::span<const Var> xs);
Var dot(std::span<const Var> a, std::span<const Var> b);
/// w . x + b as one node.
Var affine(std::span<const Var> w, std::span<const Var> x, const Var& b);
/// Constant-weighted sum; zero weights contribute no edges.
Var lincomb(std::span<const double> w, std::span<const Var> x);

} // namespace calypso::ad
