#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "nsn/annotations.hpp"

namespace nsn {

/// One image channel, indexed (row, col) = (y, x).
template <typename Scalar>
using Plane = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using BinaryMask = Plane<bool>;

/// Planar multi-channel image. Channel count is 1 (gray) or 3 (RGB).
template <typename Scalar>
struct Raster {
    std::vector<Plane<Scalar>> planes;

    Raster() = default;
    Raster(int width, int height, int channels, Scalar fill = Scalar(0))
        : planes(static_cast<std::size_t>(channels), Plane<Scalar>::Constant(height, width, fill)) {}
    explicit Raster(std::vector<Plane<Scalar>> p) : planes(std::move(p)) {}

    int width() const { return planes.empty() ? 0 : static_cast<int>(planes.front().cols()); }
    int height() const { return planes.empty() ? 0 : static_cast<int>(planes.front().rows()); }
    int channels() const { return static_cast<int>(planes.size()); }
    ImageSize size() const { return {width(), height()}; }

    Plane<Scalar>& operator[](int c) { return planes[static_cast<std::size_t>(c)]; }
    const Plane<Scalar>& operator[](int c) const { return planes[static_cast<std::size_t>(c)]; }

    Scalar& at(int x, int y, int c = 0) { return planes[static_cast<std::size_t>(c)](y, x); }
    Scalar at(int x, int y, int c = 0) const { return planes[static_cast<std::size_t>(c)](y, x); }

    template <typename Other>
    Raster<Other> cast() const {
        Raster<Other> out;
        out.planes.reserve(planes.size());
        for (const auto& p : planes) out.planes.push_back(p.template cast<Other>());
        return out;
    }

    bool operator==(const Raster& o) const {
        if (planes.size() != o.planes.size()) return false;
        for (std::size_t c = 0; c < planes.size(); ++c) {
            if (planes[c].rows() != o.planes[c].rows() || planes[c].cols() != o.planes[c].cols()) return false;
            if ((planes[c] != o.planes[c]).any()) return false;
        }
        return true;
    }
};

using RasterImage = Raster<std::uint8_t>;

/// Rounds half-up and clamps into [0, 255].
template <typename Derived>
Plane<std::uint8_t> quantize(const Eigen::ArrayBase<Derived>& values) {
    return (values + 0.5).floor().max(0.0).min(255.0).template cast<std::uint8_t>();
}

/// Sub-block copy of every plane.
template <typename Scalar>
Raster<Scalar> crop(const Raster<Scalar>& img, const PixelRect& r) {
    Raster<Scalar> out;
    for (const auto& p : img.planes) out.planes.push_back(p.block(r.y0, r.x0, r.height(), r.width()));
    return out;
}

inline BinaryMask crop(const BinaryMask& m, const PixelRect& r) {
    return m.block(r.y0, r.x0, r.height(), r.width());
}

/// Smallest rectangle containing every set pixel; empty rect when the mask is empty.
PixelRect tight_box(const BinaryMask& mask);

}  // namespace nsn
