#pragma once

// Log-chroma conversion and weighted 2-D uv histograms.

#include <ccmnet/colorimetry.hpp>
#include <ccmnet/errors.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace ccmnet {

struct UvChroma {
    double u = 0.0;
    double v = 0.0;
};

/// u = ln(g/r), v = ln(g/b).
inline UvChroma rgb_to_uv(const RgbColor& c) {
    if (!(c.r > 0.0 && c.g > 0.0 && c.b > 0.0)) {
        throw DomainError("rgb_to_uv: all channels must be positive");
    }
    return {std::log(c.g / c.r), std::log(c.g / c.b)};
}

/// Inverse of rgb_to_uv with green fixed at 1.
inline RgbColor uv_to_rgb(const UvChroma& p) { return {std::exp(-p.u), 1.0, std::exp(-p.v)}; }

inline RgbColor unit_normalized(const RgbColor& c) {
    const double n = c.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw DomainError("cannot normalize a zero or non-finite color");
    return {c.r / n, c.g / n, c.b / n};
}

struct HistogramSpec {
    int bins = 64;
    double u_min = -2.85;
    double u_max = 2.85;
    double v_min = -2.85;
    double v_max = 2.85;

    static HistogramSpec query(int bins = 64) { return {bins, -2.85, 2.85, -2.85, 2.85}; }
    static HistogramSpec locus(int bins = 64) { return {bins, -0.5, 1.5, -0.5, 1.5}; }

    void validate() const {
        if (bins <= 0) throw DomainError("histogram bins must be positive");
        if (!(u_min < u_max) || !(v_min < v_max)) {
            throw DomainError("histogram range must satisfy min < max");
        }
    }
    double u_width() const { return (u_max - u_min) / bins; }
    double v_width() const { return (v_max - v_min) / bins; }

    /// floor((u - u_min) / width), clamped to the edge bins.
    int u_bin(double u) const { return clamp_bin(std::floor((u - u_min) / u_width())); }
    int v_bin(double v) const { return clamp_bin(std::floor((v - v_min) / v_width())); }

    double u_center(int i) const { return u_min + (i + 0.5) * u_width(); }
    double v_center(int j) const { return v_min + (j + 0.5) * v_width(); }

    friend bool operator==(const HistogramSpec&, const HistogramSpec&) = default;

private:
    int clamp_bin(double f) const {
        if (!(f >= 0.0)) return 0;  // also catches NaN
        if (f >= bins - 1) return bins - 1;
        return static_cast<int>(f);
    }
};

/// bins x bins map; rows index u, columns index v.
struct UvHistogram {
    HistogramSpec spec;
    std::vector<double> data;
    /// Set when no pixel contributed.
    bool empty = true;

    UvHistogram() = default;
    explicit UvHistogram(const HistogramSpec& s)
        : spec(s), data(static_cast<std::size_t>(s.bins) * static_cast<std::size_t>(s.bins), 0.0) {}

    double& at(int iu, int iv) { return data[static_cast<std::size_t>(iu * spec.bins + iv)]; }
    double at(int iu, int iv) const { return data[static_cast<std::size_t>(iu * spec.bins + iv)]; }

    double total() const {
        double s = 0.0;
        for (double v : data) s += v;
        return s;
    }

    void normalize() {
        const double s = total();
        if (s > 0.0) {
            for (double& v : data) v /= s;
        }
    }
};

/// Raw-linear image, row-major, interleaved RGB.
struct RawImage {
    int width = 0;
    int height = 0;
    std::vector<double> pixels;
    double saturation_level = 1.0;

    RawImage() = default;
    RawImage(int w, int h, double saturation = 1.0)
        : width(w),
          height(h),
          pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, 0.0),
          saturation_level(saturation) {
        if (w <= 0 || h <= 0) throw DomainError("image dimensions must be positive");
        if (!(saturation > 0.0)) throw DomainError("saturation level must be positive");
    }

    std::size_t pixel_count() const {
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    }
    double& at(int x, int y, int c) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + static_cast<std::size_t>(c)];
    }
    double at(int x, int y, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + static_cast<std::size_t>(c)];
    }
    RgbColor pixel(std::size_t i) const { return {pixels[3 * i], pixels[3 * i + 1], pixels[3 * i + 2]}; }
    void set_pixel(std::size_t i, const RgbColor& c) {
        pixels[3 * i] = c.r;
        pixels[3 * i + 1] = c.g;
        pixels[3 * i + 2] = c.b;
    }
};

/// Fraction of the saturation level at or above which a pixel is considered clipped.
inline constexpr double kSaturationFraction = 0.98;

/// Pixels entering histograms and gray-world: strictly positive and below
/// the clipping threshold in every channel.
inline bool is_valid_pixel(const RgbColor& c, double saturation_level) {
    const double limit = kSaturationFraction * saturation_level;
    return c.r > 0.0 && c.g > 0.0 && c.b > 0.0 && c.r < limit && c.g < limit && c.b < limit;
}

/// Norm-weighted, nearest-bin uv histogram normalized to unit mass. An image
/// with no valid pixel yields an all-zero histogram with `empty` set.
inline UvHistogram build_histogram(const RawImage& image, const HistogramSpec& spec) {
    spec.validate();
    UvHistogram h(spec);
    const std::size_t n = image.pixel_count();
    for (std::size_t i = 0; i < n; ++i) {
        const RgbColor c = image.pixel(i);
        if (!is_valid_pixel(c, image.saturation_level)) continue;
        const UvChroma p = rgb_to_uv(c);
        h.at(spec.u_bin(p.u), spec.v_bin(p.v)) += c.norm();
        h.empty = false;
    }
    h.normalize();
    return h;
}

/// Per-channel L1 gradient magnitude |dI/dx| + |dI/dy| by forward differences
/// with replicated border (last row/column difference is zero).
inline RawImage edge_image(const RawImage& image) {
    if (image.width < 2 || image.height < 2) {
        throw DomainError("edge_image: image must be at least 2x2, got " +
                          std::to_string(image.width) + "x" + std::to_string(image.height));
    }
    RawImage out(image.width, image.height, image.saturation_level);
    for (int y = 0; y < image.height; ++y) {
        const int yn = std::min(y + 1, image.height - 1);
        for (int x = 0; x < image.width; ++x) {
            const int xn = std::min(x + 1, image.width - 1);
            for (int c = 0; c < 3; ++c) {
                const double v = image.at(x, y, c);
                out.at(x, y, c) = std::abs(image.at(xn, y, c) - v) + std::abs(image.at(x, yn, c) - v);
            }
        }
    }
    return out;
}

}  // namespace ccmnet
