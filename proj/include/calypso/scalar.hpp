#pragma once

// Scalar helpers shared by code that is generic over `double` (fast path) and
// `ad::Var` (tape-recorded path).

#include "calypso/autodiff.hpp"

#include <cmath>
#include <span>

namespace calypso::num {

inline double value_of(double x) noexcept { return x; }
inline double value_of(const ad::Var& x) noexcept { return x.value(); }

/// Ties resolve to `a`, matching ad::min.
inline double min(double a, double b) noexcept { return a <= b ? a : b; }
inline ad::Var min(const ad::Var& a, const ad::Var& b) { return ad::min(a, b); }

inline double sigmoid(double x) noexcept {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
inline ad::Var sigmoid(const ad::Var& x) { return ad::sigmoid(x); }

inline double tanh(double x) noexcept { return std::tanh(x); }
inline ad::Var tanh(const ad::Var& x) { return ad::tanh(x); }

inline double relu(double x) noexcept { return x > 0.0 ? x : 0.0; }
inline ad::Var relu(const ad::Var& x) { return ad::relu(x); }

inline double sum(std::span<const double> xs) noexcept {
    double acc = 0.0;
    for (double x : xs) {
        acc += x;
    }
    return acc;
}
inline ad::Var sum(std::span<const ad::Var> xs) { return ad::sum(xs); }

inline double lincomb(std::span<const double> w, std::span<const double> x) noexcept {
    double acc = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
        if (w[k] != 0.0) {
            acc += w[k] * x[k];
        }
    }
    return acc;
}
inline ad::Var lincomb(std::span<const double> w, std::span<const ad::Var> x) {
    return ad::lincomb(w, x);
}

inline double affine(std::span<const double> w, std::span<const double> x, double b) noexcept {
    double acc = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
        acc += w[k] * x[k];
    }
    return acc + b;
}
inline ad::Var affine(std::span<const ad::Var> w, std::span<const ad::Var> x, const ad::Var& b) {
    return ad::affine(w, x, b);
}

} // namespace calypso::num
