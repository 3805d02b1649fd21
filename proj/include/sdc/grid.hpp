#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "sdc/errors.hpp"

namespace sdc {

/// Dense row-major 2-D array. The workhorse carrier for depth values,
/// validity masks, label maps and per-channel image planes.
template <typename T>
class Grid {
  public:
    Grid() = default;
    Grid(int height, int width, T fill = T{})
        : height_(height), width_(width),
          data_(checked_size(height, width), fill) {}

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& at(int r, int c) {
        assert(in_bounds(r, c));
        return data_[static_cast<std::size_t>(r) * width_ + c];
    }
    const T& at(int r, int c) const {
        assert(in_bounds(r, c));
        return data_[static_cast<std::size_t>(r) * width_ + c];
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    bool in_bounds(int r, int c) const {
        return r >= 0 && r < height_ && c >= 0 && c < width_;
    }
    bool same_shape(const Grid& other) const {
        return height_ == other.height_ && width_ == other.width_;
    }

    auto begin() { return data_.begin(); }
    auto end() { return data_.end(); }
    auto begin() const { return data_.begin(); }
    auto end() const { return data_.end(); }

    friend bool operator==(const Grid&, const Grid&) = default;

  private:
    static std::size_t checked_size(int h, int w) {
        if (h < 0 || w < 0)
            throw ShapeError("Grid dimensions must be non-negative");
        return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<T> data_;
};

using MaskGrid = Grid<std::uint8_t>;

}  // namespace sdc
