#pragma once

#include <cassert>
#include <vector>

#include "dept/errors.hpp"

namespace dept {

// Row-major W×H value grid. (x, y) = (column, row).
template <typename T>
struct Grid {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

    size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    int index(int x, int y) const {
        assert(x >= 0 && x < width && y >= 0 && y < height);
        return y * width + x;
    }

    T& at(int x, int y) { return data[index(x, y)]; }
    const T& at(int x, int y) const { return data[index(x, y)]; }

    bool same_shape(const Grid& other) const {
        return width == other.width && height == other.height;
    }

    bool operator==(const Grid& other) const = default;
};

inline void require_same_shape(int wa, int ha, int wb, int hb, const char* what) {
    if (wa != wb || ha != hb) {
        throw DimensionMismatch(std::string(what) + ": " + std::to_string(wa) + "x" +
                                std::to_string(ha) + " vs " + std::to_string(wb) + "x" +
                                std::to_string(hb));
    }
}

}  // namespace dept
