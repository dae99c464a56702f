#pragma once

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vec.hpp"

namespace texedit {

/// Interleaved floating-point raster, row 0 at the top.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    std::size_t index(int x, int y, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    double& at(int x, int y, int c) { return data[index(x, y, c)]; }
    double at(int x, int y, int c) const { return data[index(x, y, c)]; }

    Vec3 rgb(int x, int y) const {
        const std::size_t i = index(x, y);
        return {data[i], data[i + 1], data[i + 2]};
    }
    void set_rgb(int x, int y, const Vec3& v) {
        const std::size_t i = index(x, y);
        data[i] = v.x;
        data[i + 1] = v.y;
        data[i + 2] = v.z;
    }

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    bool empty() const { return data.empty(); }
    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

/// Dense n-dimensional tensor used for latents and wire payloads.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0) : shape(std::move(s)) {
        data.assign(numel(shape), fill);
    }

    static std::size_t numel(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }
    std::size_t size() const { return data.size(); }
};

/// Image viewed as an (H, W, C) tensor.
inline Tensor to_tensor(const Image& img) {
    Tensor t;
    t.shape = {static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width),
               static_cast<std::size_t>(img.channels)};
    t.data = img.data;
    return t;
}

inline Image to_image(const Tensor& t) {
    if (t.shape.size() != 3) throw std::invalid_argument("to_image: tensor must be (H, W, C)");
    Image img;
    img.height = static_cast<int>(t.shape[0]);
    img.width = static_cast<int>(t.shape[1]);
    img.channels = static_cast<int>(t.shape[2]);
    img.data = t.data;
    return img;
}

inline double l2_norm(std::span<const double> v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Bilinear footprint of a texture lookup: up to four texels and their weights.
struct Footprint {
    std::array<int, 4> x{};
    std::array<int, 4> y{};
    std::array<double, 4> w{};
};

/// UV (v up) to texel footprint with clamp-to-edge addressing. Texel centres sit at
/// ((i + 0.5) / W, 1 - (j + 0.5) / H).
inline Footprint uv_footprint(const Vec2& uv, int width, int height) {
    const double fx = uv.x * width - 0.5;
    const double fy = (1.0 - uv.y) * height - 0.5;
    const double x0f = std::floor(fx);
    const double y0f = std::floor(fy);
    const double tx = fx - x0f;
    const double ty = fy - y0f;
    const int x0 = static_cast<int>(x0f);
    const int y0 = static_cast<int>(y0f);
    auto cx = [width](int v) { return std::clamp(v, 0, width - 1); };
    auto cy = [height](int v) { return std::clamp(v, 0, height - 1); };
    Footprint f;
    f.x = {cx(x0), cx(x0 + 1), cx(x0), cx(x0 + 1)};
    f.y = {cy(y0), cy(y0), cy(y0 + 1), cy(y0 + 1)};
    f.w = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
    return f;
}

inline Vec3 sample_rgb(const Image& tex, const Footprint& f) {
    Vec3 r;
    for (int k = 0; k < 4; ++k) r += tex.rgb(f.x[k], f.y[k]) * f.w[k];
    return r;
}

inline Vec3 sample_rgb(const Image& tex, const Vec2& uv) {
    return sample_rgb(tex, uv_footprint(uv, tex.width, tex.height));
}

/// Adjoint of sample_rgb: accumulate an RGB cotangent into the footprint texels.
inline void scatter_rgb(Image& grad, const Footprint& f, const Vec3& g) {
    for (int k = 0; k < 4; ++k) {
        const std::size_t i = grad.index(f.x[k], f.y[k]);
        grad.data[i] += g.x * f.w[k];
        grad.data[i + 1] += g.y * f.w[k];
        grad.data[i + 2] += g.z * f.w[k];
    }
}

/// Box-filter downsample by integer factor (used for supersampled beauty renders).
inline Image downsample_box(const Image& src, int factor) {
    if (factor <= 1) return src;
    Image out(src.width / factor, src.height / factor, src.channels);
    const double inv = 1.0 / (factor * factor);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < src.channels; ++c) {
                double s = 0;
                for (int j = 0; j < factor; ++j)
                    for (int i = 0; i < factor; ++i) s += src.at(x * factor + i, y * factor + j, c);
                out.at(x, y, c) = s * inv;
            }
    return out;
}

/// Peak signal-to-noise ratio in dB for signals with the given peak value.
inline double psnr(const Image& a, const Image& b, double peak = 1.0) {
    if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
    double mse = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse == 0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

}  // namespace texedit
