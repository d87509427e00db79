#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "quanet/common.hpp"

namespace quanet {

// Dense multi-dimensional array: flat buffer + shape metadata. The universal
// carrier for images, embeddings, feature maps, and density maps.
template <typename T>
struct Grid {
    Shape shape;
    std::vector<T> data;

    Grid() = default;
    explicit Grid(Shape s) : shape(std::move(s)), data(static_cast<size_t>(shape.numel()), T(0)) {}
    Grid(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        require_shape(static_cast<int64_t>(data.size()) == shape.numel(),
                      "grid buffer length does not match shape " + shape.str());
    }

    int64_t numel() const { return shape.numel(); }
    bool empty() const { return data.empty(); }

    T& operator[](size_t i) { return data[i]; }
    const T& operator[](size_t i) const { return data[i]; }

    // 2-D accessors (row-major)
    T& at(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
    const T& at(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

    // 3-D accessors (row-major, innermost = channels)
    T& at(int y, int x, int c) {
        return data[(static_cast<size_t>(y) * shape[1] + x) * shape[2] + c];
    }
    const T& at(int y, int x, int c) const {
        return data[(static_cast<size_t>(y) * shape[1] + x) * shape[2] + c];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    T sum() const {
        T s = T(0);
        for (const T& v : data) s += v;
        return s;
    }

    bool all_finite() const {
        for (const T& v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Grid<U> cast() const {
        Grid<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using GridF = Grid<float>;
using GridD = Grid<double>;

}  // namespace quanet
