#pragma once

#include <austkit/rng.hpp>
#include <austkit/tensor.hpp>

#include <array>
#include <stdexcept>

namespace austkit {

struct ColorSpaceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class ColorSpace { RGB, YUV, Mapped };

/// H×W×3 image held planar as [3,H,W], values in [0,1] for RGB.
struct ImagePlane {
    ColorSpace space = ColorSpace::RGB;
    Tensor pixels; // [3,H,W]

    int height() const { return pixels.dim(1); }
    int width() const { return pixels.dim(2); }
};

// Full-range BT.601 luma/chroma coefficients, kept as an explicit table so a
// different matrix can be swapped in.
struct ColorMatrix {
    std::array<double, 9> m; // row-major 3x3, rows are output channels
};

inline ColorMatrix rgb_to_yuv_matrix() {
    constexpr double kr = 0.299, kg = 0.587, kb = 0.114;
    return {{kr, kg, kb,                                               // Y
             -0.5 * kr / (1 - kb), -0.5 * kg / (1 - kb), 0.5,          // U = 0.5(B-Y)/(1-kb)
             0.5, -0.5 * kg / (1 - kr), -0.5 * kb / (1 - kr)}};        // V = 0.5(R-Y)/(1-kr)
}

/// Numeric 3x3 inverse (Gauss-Jordan); the round trip is tested to 1e-10.
inline ColorMatrix invert(const ColorMatrix& in) {
    std::array<double, 9> a = in.m;
    std::array<double, 9> inv = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    for (int col = 0; col < 3; ++col) {
        int piv = col;
        for (int r = col + 1; r < 3; ++r)
            if (std::abs(a[r * 3 + col]) > std::abs(a[piv * 3 + col])) piv = r;
        for (int c = 0; c < 3; ++c) {
            std::swap(a[piv * 3 + c], a[col * 3 + c]);
            std::swap(inv[piv * 3 + c], inv[col * 3 + c]);
        }
        const double d = a[col * 3 + col];
        if (d == 0.0) throw ColorSpaceError("invert: singular color matrix");
        for (int c = 0; c < 3; ++c) {
            a[col * 3 + c] /= d;
            inv[col * 3 + c] /= d;
        }
        for (int r = 0; r < 3; ++r) {
            if (r == col) continue;
            const double f = a[r * 3 + col];
            for (int c = 0; c < 3; ++c) {
                a[r * 3 + c] -= f * a[col * 3 + c];
                inv[r * 3 + c] -= f * inv[col * 3 + c];
            }
        }
    }
    return {inv};
}

namespace detail {
// Per-pixel 3x3 channel mix as a differentiable 1x1 convolution.
inline Tensor apply_color_matrix(const Tensor& chw, const ColorMatrix& mat) {
    const int H = chw.dim(1), W = chw.dim(2);
    Tensor kernel = Tensor::from_data(std::vector<double>(mat.m.begin(), mat.m.end()), {3, 3, 1, 1});
    Tensor out = conv2d(reshape(chw, {1, 3, H, W}), kernel, Tensor::zeros({3}), 1, 0);
    return reshape(out, {3, H, W});
}
} // namespace detail

inline ImagePlane rgb_to_yuv(const ImagePlane& img) {
    if (img.space != ColorSpace::RGB)
        throw ColorSpaceError("rgb_to_yuv: input image is not in RGB space");
    return {ColorSpace::YUV, detail::apply_color_matrix(img.pixels, rgb_to_yuv_matrix())};
}

inline ImagePlane yuv_to_rgb(const ImagePlane& img) {
    if (img.space != ColorSpace::YUV)
        throw ColorSpaceError("yuv_to_rgb: input image is not in YUV space");
    return {ColorSpace::RGB, detail::apply_color_matrix(img.pixels, invert(rgb_to_yuv_matrix()))};
}

/// Parameters of the learned color mapping: a 3x3 then 7x7 conv block whose
/// 6-channel output is split into per-pixel scale A and offset B.
struct ColorMapParams {
    Conv2dParams conv1; // 3 -> hidden, 3x3, pad 1
    Conv2dParams conv2; // hidden -> 6, 7x7, pad 3

    static constexpr int kHidden = 16;
};

/// Near-identity initialization: A starts at 1, B at 0, so early training
/// sees the raw YUV image.
inline ColorMapParams init_color_map_params(Rng& rng, int hidden = ColorMapParams::kHidden) {
    ColorMapParams p;
    auto he = [&rng](std::vector<int> shape, int fan_in, double scale) {
        std::size_t n = 1;
        for (int e : shape) n *= static_cast<std::size_t>(e);
        std::vector<double> v(n);
        const double std = scale * std::sqrt(2.0 / fan_in);
        for (auto& x : v) x = rng.normal(0.0, std);
        return Tensor::from_data(std::move(v), std::move(shape), true);
    };
    p.conv1 = {he({hidden, 3, 3, 3}, 3 * 9, 1.0), Tensor::zeros({hidden}, true), 1, 1};
    p.conv2 = {he({6, hidden, 7, 7}, hidden * 49, 0.01),
               Tensor::from_data({1, 1, 1, 0, 0, 0}, {6}, true), 1, 3};
    return p;
}

/// The 6-channel transform coefficient map P = [A, B] for an image.
inline Tensor color_map_coeffs(const ImagePlane& img, const ColorMapParams& params) {
    if (img.space != ColorSpace::YUV)
        throw ColorSpaceError("color_map: input image is not in YUV space");
    const int H = img.height(), W = img.width();
    Tensor h = relu(conv2d(reshape(img.pixels, {1, 3, H, W}), params.conv1));
    return conv2d(h, params.conv2); // [1,6,H,W]
}

/// Apply a fixed per-pixel, per-channel affine map: out = A*img + B.
inline Tensor apply_color_affine(const Tensor& chw, const Tensor& a, const Tensor& b) {
    return add(mul(a, chw), b);
}

/// Learned per-pixel linear color transform of a YUV image. The output is
/// intentionally not clamped to any range.
inline ImagePlane color_map(const ImagePlane& img, const ColorMapParams& params) {
    const int H = img.height(), W = img.width();
    Tensor p = color_map_coeffs(img, params);
    Tensor a = reshape(slice_channels(p, 0, 3), {3, H, W});
    Tensor b = reshape(slice_channels(p, 3, 6), {3, H, W});
    return {ColorSpace::Mapped, apply_color_affine(img.pixels, a, b)};
}

} // namespace austkit
