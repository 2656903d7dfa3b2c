#pragma once

#include <vector>

#include "nsn/poisson.hpp"
#include "nsn/raster.hpp"

namespace nsn {

/// Luma 0.299 R + 0.587 G + 0.114 B, rounded half-up. A 1-channel input is returned as is.
RasterImage to_grayscale(const RasterImage& rgb);

/// Bilinear resampling with align-corners sampling and edge clamping.
RasterImage resize_bilinear(const RasterImage& image, ImageSize target);

/// Mask variant: interpolates membership as 0/1 and re-binarizes at 0.5.
BinaryMask resize_bilinear(const BinaryMask& mask, ImageSize target);

template <typename Scalar>
Plane<double> resize_plane(const Plane<Scalar>& src, ImageSize target) {
    const int sw = static_cast<int>(src.cols()), sh = static_cast<int>(src.rows());
    Plane<double> out(target.height, target.width);
    auto coord = [](int i, int dst, int srcn) {
        if (dst == 1) return (srcn - 1) / 2.0;
        return static_cast<double>(i) * (srcn - 1) / (dst - 1);
    };
    for (int y = 0; y < target.height; ++y) {
        const double sy = coord(y, target.height, sh);
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, sh - 1);
        const double fy = sy - y0;
        for (int x = 0; x < target.width; ++x) {
            const double sx = coord(x, target.width, sw);
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, sw - 1);
            const double fx = sx - x0;
            const double top = (1 - fx) * static_cast<double>(src(y0, x0)) + fx * static_cast<double>(src(y0, x1));
            const double bot = (1 - fx) * static_cast<double>(src(y1, x0)) + fx * static_cast<double>(src(y1, x1));
            out(y, x) = (1 - fy) * top + fy * bot;
        }
    }
    return out;
}

/// Otsu threshold over values in [0, 1] using a 256-bin histogram; returns the cut in [0, 1].
double otsu_threshold(const Plane<double>& values);

/// 4-connected labelling in raster order; -1 marks background. `sizes` receives pixel counts.
Plane<int> component_labels(const BinaryMask& mask, std::vector<std::size_t>* sizes = nullptr);

/// Keeps the largest 4-connected component (ties: first in raster order).
BinaryMask largest_component(const BinaryMask& mask);

/// Sets background pixels not 4-connected to the mask border.
BinaryMask fill_holes(const BinaryMask& mask);

BinaryMask dilate3x3(const BinaryMask& mask);
/// Pixels outside the mask array do not erode.
BinaryMask erode3x3(const BinaryMask& mask);
BinaryMask close3x3(const BinaryMask& mask);

/// Spectral-residual saliency of a gray image, normalized to [0, 1], at the input size.
Plane<double> spectral_residual(const RasterImage& gray);

struct SaliencyResult {
    BinaryMask mask;
    bool degraded = false;
};

/// Spectral residual -> Otsu -> largest 4-component -> 3x3 closing, then refined against the
/// gray-level Otsu classes (see imaging.cpp). Falls back to the central 80% rectangle (flagged
/// degraded) when the result covers under 1% or over 99% of the crop.
SaliencyResult saliency_mask(const RasterImage& crop);

BinaryMask central_fallback_mask(ImageSize size);

/// Seamless cloning of `source` into `target` over the masked region placed at `offset`
/// (top-left of source in target coordinates). Pixels outside the region's interior keep the
/// target value exactly.
RasterImage poisson_blend(const RasterImage& target, const RasterImage& source, const BinaryMask& mask,
                          Offset offset, const PoissonSolveParams& params = {});

/// Hard masked copy, used when blending is not possible.
RasterImage masked_copy(const RasterImage& target, const RasterImage& source, const BinaryMask& mask,
                        Offset offset);

}  // namespace nsn
