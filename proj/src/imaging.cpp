#include "nsn/imaging.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "nsn/error.hpp"

namespace nsn {

PixelRect tight_box(const BinaryMask& mask) {
    int x0 = static_cast<int>(mask.cols()), y0 = static_cast<int>(mask.rows()), x1 = 0, y1 = 0;
    for (int y = 0; y < mask.rows(); ++y)
        for (int x = 0; x < mask.cols(); ++x)
            if (mask(y, x)) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x + 1);
                y1 = std::max(y1, y + 1);
            }
    if (x1 <= x0) return {};
    return {x0, y0, x1, y1};
}

RasterImage to_grayscale(const RasterImage& rgb) {
    if (rgb.channels() == 1) return rgb;
    if (rgb.channels() != 3) throw SizeError("to_grayscale expects 1 or 3 channels");
    const Plane<double> luma = 0.299 * rgb[0].cast<double>() + 0.587 * rgb[1].cast<double>() + 0.114 * rgb[2].cast<double>();
    RasterImage out;
    out.planes.push_back(quantize(luma));
    return out;
}

RasterImage resize_bilinear(const RasterImage& image, ImageSize target) {
    if (target.width < 1 || target.height < 1) throw SizeError("resize target must be at least 1x1");
    if (image.size() == target) return image;
    RasterImage out;
    for (const auto& p : image.planes) out.planes.push_back(quantize(resize_plane(p, target)));
    return out;
}

BinaryMask resize_bilinear(const BinaryMask& mask, ImageSize target) {
    if (target.width < 1 || target.height < 1) throw SizeError("resize target must be at least 1x1");
    if (mask.cols() == target.width && mask.rows() == target.height) return mask;
    return resize_plane(Plane<double>(mask.cast<double>()), target) >= 0.5;
}

double otsu_threshold(const Plane<double>& values) {
    std::array<double, 256> hist{};
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        const int bin = std::clamp(static_cast<int>(values(i) * 255.0 + 0.5), 0, 255);
        hist[static_cast<std::size_t>(bin)] += 1;
    }
    const double total = static_cast<double>(values.size());
    double sum_all = 0;
    for (int b = 0; b < 256; ++b) sum_all += b * hist[static_cast<std::size_t>(b)];
    double w0 = 0, sum0 = 0, best = -1;
    int best_bin = 0;
    for (int b = 0; b < 256; ++b) {
        w0 += hist[static_cast<std::size_t>(b)];
        sum0 += b * hist[static_cast<std::size_t>(b)];
        const double w1 = total - w0;
        if (w0 == 0 || w1 == 0) continue;
        const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (between > best) {
            best = between;
            best_bin = b;
        }
    }
    // members are strictly above the returned cut
    return (best_bin + 0.5) / 255.0;
}

Plane<int> component_labels(const BinaryMask& mask, std::vector<std::size_t>* sizes) {
    const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
    Plane<int> label = Plane<int>::Constant(h, w, -1);
    std::vector<std::pair<int, int>> stack;
    std::vector<std::size_t> counts;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!mask(y, x) || label(y, x) >= 0) continue;
            const int id = static_cast<int>(counts.size());
            std::size_t size = 0;
            label(y, x) = id;
            stack.assign(1, {x, y});
            while (!stack.empty()) {
                auto [cx, cy] = stack.back();
                stack.pop_back();
                ++size;
                const int nx[4] = {cx - 1, cx + 1, cx, cx};
                const int ny[4] = {cy, cy, cy - 1, cy + 1};
                for (int k = 0; k < 4; ++k) {
                    if (nx[k] < 0 || ny[k] < 0 || nx[k] >= w || ny[k] >= h) continue;
                    if (!mask(ny[k], nx[k]) || label(ny[k], nx[k]) >= 0) continue;
                    label(ny[k], nx[k]) = id;
                    stack.emplace_back(nx[k], ny[k]);
                }
            }
            counts.push_back(size);
        }
    if (sizes) *sizes = std::move(counts);
    return label;
}

BinaryMask largest_component(const BinaryMask& mask) {
    std::vector<std::size_t> sizes;
    const Plane<int> label = component_labels(mask, &sizes);
    if (sizes.empty()) return mask;
    const auto best = std::max_element(sizes.begin(), sizes.end()) - sizes.begin();
    return label == static_cast<int>(best);
}

BinaryMask fill_holes(const BinaryMask& mask) {
    const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
    std::vector<std::size_t> sizes;
    const Plane<int> label = component_labels(!mask.eval(), &sizes);
    std::vector<bool> touches(sizes.size(), false);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (label(y, x) >= 0 && (x == 0 || y == 0 || x == w - 1 || y == h - 1))
                touches[static_cast<std::size_t>(label(y, x))] = true;
    BinaryMask out = mask;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (label(y, x) >= 0 && !touches[static_cast<std::size_t>(label(y, x))]) out(y, x) = true;
    return out;
}

BinaryMask dilate3x3(const BinaryMask& mask) {
    const Eigen::Index h = mask.rows(), w = mask.cols();
    BinaryMask out = BinaryMask::Constant(h, w, false);
    for (Eigen::Index y = 0; y < h; ++y)
        for (Eigen::Index x = 0; x < w; ++x) {
            if (!mask(y, x)) continue;
            const Eigen::Index y0 = std::max<Eigen::Index>(0, y - 1), x0 = std::max<Eigen::Index>(0, x - 1);
            const Eigen::Index y1 = std::min(h - 1, y + 1), x1 = std::min(w - 1, x + 1);
            out.block(y0, x0, y1 - y0 + 1, x1 - x0 + 1).setConstant(true);
        }
    return out;
}

BinaryMask erode3x3(const BinaryMask& mask) {
    return (!dilate3x3(!mask).eval()).eval();
}

BinaryMask close3x3(const BinaryMask& mask) { return erode3x3(dilate3x3(mask)); }

namespace {

using Complex = std::complex<double>;
using ComplexPlane = Eigen::Array<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void fft2(ComplexPlane& data, bool inverse) {
    Eigen::FFT<double> fft;
    std::vector<Complex> in, out;
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
        in.assign(data.row(r).data(), data.row(r).data() + data.cols());
        inverse ? fft.inv(out, in) : fft.fwd(out, in);
        for (Eigen::Index c = 0; c < data.cols(); ++c) data(r, c) = out[static_cast<std::size_t>(c)];
    }
    for (Eigen::Index c = 0; c < data.cols(); ++c) {
        in.resize(static_cast<std::size_t>(data.rows()));
        for (Eigen::Index r = 0; r < data.rows(); ++r) in[static_cast<std::size_t>(r)] = data(r, c);
        inverse ? fft.inv(out, in) : fft.fwd(out, in);
        for (Eigen::Index r = 0; r < data.rows(); ++r) data(r, c) = out[static_cast<std::size_t>(r)];
    }
}

/// Separable mean over a (2r+1)^2 window. Wrap-around borders when `periodic`, clamped otherwise.
Plane<double> box_filter(const Plane<double>& in, int radius, bool periodic) {
    const int h = static_cast<int>(in.rows()), w = static_cast<int>(in.cols());
    auto idx = [&](int i, int n) { return periodic ? ((i % n) + n) % n : std::clamp(i, 0, n - 1); };
    Plane<double> tmp(h, w), out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0;
            for (int k = -radius; k <= radius; ++k) s += in(y, idx(x + k, w));
            tmp(y, x) = s / (2 * radius + 1);
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0;
            for (int k = -radius; k <= radius; ++k) s += tmp(idx(y + k, h), x);
            out(y, x) = s / (2 * radius + 1);
        }
    return out;
}

Plane<double> gaussian_blur(const Plane<double>& in, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0;
    for (int k = -radius; k <= radius; ++k) sum += kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * k * k / (sigma * sigma));
    for (auto& v : kernel) v /= sum;
    const int h = static_cast<int>(in.rows()), w = static_cast<int>(in.cols());
    Plane<double> tmp(h, w), out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0;
            for (int k = -radius; k <= radius; ++k) s += kernel[static_cast<std::size_t>(k + radius)] * in(y, std::clamp(x + k, 0, w - 1));
            tmp(y, x) = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0;
            for (int k = -radius; k <= radius; ++k) s += kernel[static_cast<std::size_t>(k + radius)] * tmp(std::clamp(y + k, 0, h - 1), x);
            out(y, x) = s;
        }
    return out;
}

constexpr int kSaliencyResolution = 64;

}  // namespace

Plane<double> spectral_residual(const RasterImage& gray_in) {
    const RasterImage gray = to_grayscale(gray_in);
    const ImageSize work{kSaliencyResolution, kSaliencyResolution};
    const Plane<double> small = resize_plane(gray[0], work);

    ComplexPlane spectrum = small.cast<Complex>();
    fft2(spectrum, false);
    const Plane<double> amplitude = spectrum.abs();
    const Plane<double> phase = spectrum.arg();
    const Plane<double> log_amp = (amplitude + 1.0).log();
    const Plane<double> residual = log_amp - box_filter(log_amp, 1, true);

    ComplexPlane recon(work.height, work.width);
    const Plane<double> magnitude = residual.exp();
    for (Eigen::Index i = 0; i < recon.size(); ++i) recon(i) = std::polar(magnitude(i), phase(i));
    fft2(recon, true);

    Plane<double> saliency = gaussian_blur(recon.abs(), 2.0).square();
    const double maxv = saliency.maxCoeff();
    if (maxv > 0) saliency /= maxv;
    return resize_plane(saliency, gray.size());
}

BinaryMask central_fallback_mask(ImageSize size) {
    BinaryMask m = BinaryMask::Constant(size.height, size.width, false);
    const int mw = std::max(1, static_cast<int>(round_half_up(0.8 * size.width)));
    const int mh = std::max(1, static_cast<int>(round_half_up(0.8 * size.height)));
    m.block((size.height - mh) / 2, (size.width - mw) / 2, mh, mw).setConstant(true);
    return m;
}

SaliencyResult saliency_mask(const RasterImage& crop) {
    if (crop.width() < 8 || crop.height() < 8) throw SizeError("saliency_mask needs a crop of at least 8x8 pixels");
    const RasterImage gray = to_grayscale(crop);
    const auto fallback = [&] { return SaliencyResult{central_fallback_mask(crop.size()), true}; };
    if (gray[0].maxCoeff() == gray[0].minCoeff()) return fallback();

    const Plane<double> saliency = spectral_residual(gray);
    const BinaryMask salient = largest_component(close3x3(saliency > otsu_threshold(saliency)));

    // Spectral residual responds mostly along object contours. The salient region picks the
    // intensity class (Otsu on gray) and the connected piece of it that forms the object.
    const Plane<double> intensity = gray[0].cast<double>() / 255.0;
    const BinaryMask bright = intensity > otsu_threshold(intensity);
    const BinaryMask dark = !bright;
    auto mean_saliency = [&](const BinaryMask& m) {
        const auto n = m.count();
        return n ? m.select(saliency, 0.0).sum() / static_cast<double>(n) : 0.0;
    };
    const BinaryMask object_class = mean_saliency(bright) >= mean_saliency(dark) ? bright : dark;

    std::vector<std::size_t> sizes;
    const Plane<int> label = component_labels(object_class, &sizes);
    std::vector<std::size_t> overlap(sizes.size(), 0);
    for (Eigen::Index i = 0; i < label.size(); ++i)
        if (label(i) >= 0 && salient(i)) ++overlap[static_cast<std::size_t>(label(i))];
    std::size_t best = 0;
    for (std::size_t k = 1; k < sizes.size(); ++k)
        if (overlap[k] > overlap[best] || (overlap[k] == overlap[best] && sizes[k] > sizes[best])) best = k;

    BinaryMask mask = sizes.empty() ? salient : BinaryMask(label == static_cast<int>(best));
    mask = largest_component(close3x3(fill_holes(mask)));

    const double coverage = static_cast<double>(mask.count()) / static_cast<double>(mask.size());
    if (coverage < 0.01 || coverage > 0.99) return fallback();
    return {mask, false};
}

namespace {

void check_placement(const RasterImage& target, const RasterImage& source, const BinaryMask& mask, Offset offset) {
    if (source.width() != mask.cols() || source.height() != mask.rows())
        throw SizeError("source and mask dimensions differ");
    if (target.channels() != source.channels()) throw SizeError("target and source channel counts differ");
    const PixelRect region = tight_box(mask);
    if (region.empty()) return;
    const int x0 = region.x0 + offset.x, y0 = region.y0 + offset.y;
    const int x1 = region.x1 + offset.x, y1 = region.y1 + offset.y;
    if (x0 < 1 || y0 < 1 || x1 > target.width() - 1 || y1 > target.height() - 1)
        throw PlacementError("mask region must lie inside the target without touching its border");
}

}  // namespace

RasterImage poisson_blend(const RasterImage& target, const RasterImage& source, const BinaryMask& mask, Offset offset,
                          const PoissonSolveParams& params) {
    if (params.tolerance <= 0) throw InputError("poisson tolerance must be positive");
    check_placement(target, source, mask, offset);
    const auto system = PoissonSystem<double>::build(mask);
    RasterImage out = target;
    if (system.unknowns() == 0) return out;
    for (int c = 0; c < target.channels(); ++c) {
        const auto b = system.rhs(target[c], source[c], offset);
        const auto solved = conjugate_gradient(system, b, params);
        for (Eigen::Index i = 0; i < system.unknowns(); ++i) {
            const auto [x, y] = system.coords()[static_cast<std::size_t>(i)];
            out.at(x + offset.x, y + offset.y, c) =
                static_cast<std::uint8_t>(std::clamp(std::floor(solved.x(i) + 0.5), 0.0, 255.0));
        }
    }
    return out;
}

RasterImage masked_copy(const RasterImage& target, const RasterImage& source, const BinaryMask& mask, Offset offset) {
    check_placement(target, source, mask, offset);
    RasterImage out = target;
    for (int y = 0; y < mask.rows(); ++y)
        for (int x = 0; x < mask.cols(); ++x)
            if (mask(y, x))
                for (int c = 0; c < target.channels(); ++c) out.at(x + offset.x, y + offset.y, c) = source.at(x, y, c);
    return out;
}

}  // namespace nsn
