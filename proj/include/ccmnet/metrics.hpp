#pragma once

// Angular-error summary statistics and the gray-world baseline.

#include <ccmnet/colorimetry.hpp>
#include <ccmnet/errors.hpp>
#include <ccmnet/histogram.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace ccmnet {

struct ErrorStats {
    double mean = 0.0;
    double median = 0.0;
    double trimean = 0.0;
    double best25_mean = 0.0;
    double worst25_mean = 0.0;
    std::size_t count = 0;
};

/// Quantile of sorted data, linear interpolation between order statistics
/// at position q (n - 1).
inline double sorted_quantile(const std::vector<double>& s, double q) {
    const double pos = q * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

inline ErrorStats compute_stats(std::vector<double> errors) {
    if (errors.empty()) throw DomainError("compute_stats: empty error list");
    for (double e : errors) {
        if (!std::isfinite(e) || e < 0.0) throw DomainError("compute_stats: errors must be finite and non-negative");
    }
    std::sort(errors.begin(), errors.end());
    const std::size_t n = errors.size();
    const std::size_t k = (n + 3) / 4;
    ErrorStats s;
    s.count = n;
    s.mean = std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(n);
    s.median = sorted_quantile(errors, 0.5);
    s.trimean = (sorted_quantile(errors, 0.25) + 2.0 * s.median + sorted_quantile(errors, 0.75)) / 4.0;
    s.best25_mean = std::accumulate(errors.begin(), errors.begin() + static_cast<std::ptrdiff_t>(k), 0.0) /
                    static_cast<double>(k);
    s.worst25_mean = std::accumulate(errors.end() - static_cast<std::ptrdiff_t>(k), errors.end(), 0.0) /
                     static_cast<double>(k);
    s.best25_mean = std::min(s.best25_mean, s.mean);
    s.worst25_mean = std::max(s.worst25_mean, s.mean);
    return s;
}

/// Per-channel mean over valid pixels, unit length.
inline RgbColor gray_world(const RawImage& image) {
    double sum[3] = {0.0, 0.0, 0.0};
    std::size_t n = 0;
    for (std::size_t i = 0; i < image.pixel_count(); ++i) {
        const RgbColor p = image.pixel(i);
        if (!is_valid_pixel(p, image.saturation_level)) continue;
        sum[0] += p.r;
        sum[1] += p.g;
        sum[2] += p.b;
        ++n;
    }
    if (n == 0) throw EstimationError("gray_world: no valid pixels");
    return unit_normalized({sum[0], sum[1], sum[2]});
}

}  // namespace ccmnet
