#pragma once

#include "calypso/error.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace calypso {

using Index = std::size_t;

/// Dense row-major rows x cols array. Rows are units (patches, regions),
/// columns are weeks unless stated otherwise.
template <class T>
class Grid {
public:
    Grid() = default;
    Grid(Index rows, Index cols, const T& fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Index rows() const noexcept { return rows_; }
    Index cols() const noexcept { return cols_; }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(Index r, Index c) noexcept { return data_[r * cols_ + c]; }
    const T& operator()(Index r, Index c) const noexcept { return data_[r * cols_ + c]; }

    T& at(Index r, Index c) {
        check(r, c);
        return data_[r * cols_ + c];
    }
    const T& at(Index r, Index c) const {
        check(r, c);
        return data_[r * cols_ + c];
    }

    std::span<T> row(Index r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(Index r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::vector<T> column(Index c) const {
        std::vector<T> out(rows_);
        for (Index r = 0; r < rows_; ++r) {
            out[r] = (*this)(r, c);
        }
        return out;
    }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }

    /// Columns [first, first + count).
    Grid slice_cols(Index first, Index count) const {
        if (first + count > cols_) {
            throw Error(ErrorCode::ShapeMismatch, "column slice out of range");
        }
        Grid out(rows_, count);
        for (Index r = 0; r < rows_; ++r) {
            for (Index c = 0; c < count; ++c) {
                out(r, c) = (*this)(r, first + c);
            }
        }
        return out;
    }

    bool operator==(const Grid& other) const = default;

private:
    void check(Index r, Index c) const {
        if (r >= rows_ || c >= cols_) {
            throw Error(ErrorCode::ShapeMismatch, "grid index out of range");
        }
    }

    Index rows_ = 0;
    Index cols_ = 0;
    std::vector<T> data_;
};

using Matrix = Grid<double>;

} // namespace calypso
