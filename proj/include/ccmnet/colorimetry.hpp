#pragma once

// Correlated color temperature, daylight-locus sampling, color-matrix
// interpolation between two calibration illuminants, and the fixed-point
// conversion of a camera-native illuminant to XYZ and CCT.

#include <ccmnet/errors.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace ccmnet {

using Vec3 = std::array<double, 3>;

/// Valid span of the locus approximation used by cct_to_xy. Below ~2244 K the
/// daylight polynomial folds back on itself, so the lower edge sits above it.
inline constexpr double kMinCctKelvin = 2300.0;
inline constexpr double kMaxCctKelvin = 25000.0;

/// Correlated color temperature in Kelvin.
class Cct {
public:
    constexpr Cct() = default;
    explicit Cct(double kelvin) : kelvin_(kelvin) {
        if (!std::isfinite(kelvin) || kelvin < kMinCctKelvin || kelvin > kMaxCctKelvin) {
            throw DomainError("CCT " + std::to_string(kelvin) + " K outside valid range [" +
                              std::to_string(kMinCctKelvin) + ", " +
                              std::to_string(kMaxCctKelvin) + "] K");
        }
    }
    constexpr double kelvin() const { return kelvin_; }
    friend constexpr bool operator==(Cct a, Cct b) { return a.kelvin_ == b.kelvin_; }
    friend constexpr auto operator<=>(Cct a, Cct b) { return a.kelvin_ <=> b.kelvin_; }

private:
    double kelvin_ = 6504.0;
};

struct XyzColor {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Vec3 vec() const { return {x, y, z}; }
    static XyzColor from(const Vec3& v) { return {v[0], v[1], v[2]}; }
    friend bool operator==(const XyzColor&, const XyzColor&) = default;
};

/// Camera raw-linear color.
struct RgbColor {
    double r = 0.0;
    double g = 0.0;
    double b = 0.0;

    Vec3 vec() const { return {r, g, b}; }
    static RgbColor from(const Vec3& v) { return {v[0], v[1], v[2]}; }
    double norm() const { return std::sqrt(r * r + g * g + b * b); }
    bool all_positive() const { return r > 0.0 && g > 0.0 && b > 0.0; }
    bool all_finite() const { return std::isfinite(r) && std::isfinite(g) && std::isfinite(b); }
    friend bool operator==(const RgbColor&, const RgbColor&) = default;
};

struct Chromaticity {
    double x = 0.0;
    double y = 0.0;
};

/// 3x3 real matrix, row-major.
class ColorMatrix3 {
public:
    static constexpr double kMaxCondition = 1e8;

    ColorMatrix3() = default;
    explicit ColorMatrix3(const std::array<double, 9>& entries) : m_(entries) {}

    static ColorMatrix3 identity() { return ColorMatrix3({1, 0, 0, 0, 1, 0, 0, 0, 1}); }
    static ColorMatrix3 diagonal(const Vec3& d) {
        return ColorMatrix3({d[0], 0, 0, 0, d[1], 0, 0, 0, d[2]});
    }

    double operator()(std::size_t row, std::size_t col) const { return m_[row * 3 + col]; }
    double& operator()(std::size_t row, std::size_t col) { return m_[row * 3 + col]; }
    const std::array<double, 9>& entries() const { return m_; }

    Vec3 apply(const Vec3& v) const {
        return {m_[0] * v[0] + m_[1] * v[1] + m_[2] * v[2],
                m_[3] * v[0] + m_[4] * v[1] + m_[5] * v[2],
                m_[6] * v[0] + m_[7] * v[1] + m_[8] * v[2]};
    }

    friend ColorMatrix3 operator*(const ColorMatrix3& a, const ColorMatrix3& b) {
        ColorMatrix3 out;
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < 3; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
                out(i, j) = s;
            }
        }
        return out;
    }
    friend ColorMatrix3 operator+(const ColorMatrix3& a, const ColorMatrix3& b) {
        ColorMatrix3 out;
        for (std::size_t i = 0; i < 9; ++i) out.m_[i] = a.m_[i] + b.m_[i];
        return out;
    }
    friend ColorMatrix3 operator*(double s, const ColorMatrix3& a) {
        ColorMatrix3 out;
        for (std::size_t i = 0; i < 9; ++i) out.m_[i] = s * a.m_[i];
        return out;
    }
    friend bool operator==(const ColorMatrix3&, const ColorMatrix3&) = default;

    bool all_finite() const {
        for (double v : m_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    /// 2-norm condition number (ratio of extreme singular values).
    double condition_number() const {
        if (!all_finite()) return std::numeric_limits<double>::infinity();
        Eigen::Matrix3d a;
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) a(i, j) = m_[static_cast<std::size_t>(i * 3 + j)];
        }
        Eigen::JacobiSVD<Eigen::Matrix3d> svd(a);
        const auto& s = svd.singularValues();
        if (s(2) == 0.0) return std::numeric_limits<double>::infinity();
        return s(0) / s(2);
    }

    /// Inverse by adjugate. Throws NumericError when the condition number
    /// reaches kMaxCondition.
    ColorMatrix3 inverse() const {
        const double cond = condition_number();
        if (!(cond < kMaxCondition)) {
            throw NumericError("matrix is singular or ill-conditioned (condition number " +
                               std::to_string(cond) + ")");
        }
        const auto& a = m_;
        const double c00 = a[4] * a[8] - a[5] * a[7];
        const double c01 = a[5] * a[6] - a[3] * a[8];
        const double c02 = a[3] * a[7] - a[4] * a[6];
        const double det = a[0] * c00 + a[1] * c01 + a[2] * c02;
        const double inv = 1.0 / det;
        return ColorMatrix3({c00 * inv, (a[2] * a[7] - a[1] * a[8]) * inv,
                             (a[1] * a[5] - a[2] * a[4]) * inv, c01 * inv,
                             (a[0] * a[8] - a[2] * a[6]) * inv, (a[2] * a[3] - a[0] * a[5]) * inv,
                             c02 * inv, (a[1] * a[6] - a[0] * a[7]) * inv,
                             (a[0] * a[4] - a[1] * a[3]) * inv});
    }

private:
    std::array<double, 9> m_{};
};

/// The two calibrated ColorMatrix/ForwardMatrix pairs of a camera. cm_* map
/// XYZ to camera raw under the calibration illuminant; fm_* map white-balanced
/// raw to XYZ.
struct CameraCalibration {
    std::string camera_id;
    ColorMatrix3 cm_low = ColorMatrix3::identity();
    ColorMatrix3 cm_high = ColorMatrix3::identity();
    ColorMatrix3 fm_low = ColorMatrix3::identity();
    ColorMatrix3 fm_high = ColorMatrix3::identity();
    Cct cct_low{2856.0};
    Cct cct_high{6504.0};

    /// Throws DomainError / NumericError describing the first violated invariant.
    void validate() const {
        if (!(cct_low < cct_high)) {
            throw DomainError("calibration '" + camera_id + "': cct_low must be below cct_high");
        }
        const std::pair<const char*, const ColorMatrix3*> named[] = {
            {"cm_low", &cm_low}, {"cm_high", &cm_high}, {"fm_low", &fm_low}, {"fm_high", &fm_high}};
        for (const auto& [name, m] : named) {
            if (!m->all_finite()) {
                throw NumericError("calibration '" + camera_id + "': " + name +
                                   " has non-finite entries");
            }
            const double cond = m->condition_number();
            if (!(cond < ColorMatrix3::kMaxCondition)) {
                throw NumericError("calibration '" + camera_id + "': " + name +
                                   " is not invertible (condition number " +
                                   std::to_string(cond) + ")");
            }
        }
    }
};

enum class MatrixKind { color_matrix, forward_matrix };

// ---------------------------------------------------------------------------
// Locus conversions

inline constexpr Chromaticity kD65Chromaticity{0.3127, 0.3290};

/// Chromaticity of the CIE daylight locus at CCT t. The 4000-7000 K
/// polynomial is extended below 4000 K.
inline Chromaticity cct_to_xy(Cct t) {
    const double k = t.kelvin();
    const double s = 1.0 / k;
    double x = 0.0;
    if (k <= 7000.0) {
        x = -4.6070e9 * s * s * s + 2.9678e6 * s * s + 0.09911e3 * s + 0.244063;
    } else {
        x = -2.0064e9 * s * s * s + 1.9018e6 * s * s + 0.24748e3 * s + 0.237040;
    }
    const double y = -3.0 * x * x + 2.870 * x - 0.275;
    return {x, y};
}

namespace detail {

inline std::pair<double, double> xy_to_uv1960(double x, double y) {
    const double d = -2.0 * x + 12.0 * y + 3.0;
    return {4.0 * x / d, 6.0 * y / d};
}

inline double locus_distance_sq(double mired, double u, double v) {
    const Chromaticity c = cct_to_xy(Cct(1e6 / mired));
    const auto [lu, lv] = xy_to_uv1960(c.x, c.y);
    return (lu - u) * (lu - u) + (lv - v) * (lv - v);
}

}  // namespace detail

/// Maximum xy distance from the locus accepted by xy_to_cct.
inline constexpr double kMaxLocusDistance = 0.05;

namespace detail {

// Nearest locus temperature in CIE 1960 UCS, without a distance limit.
inline Cct nearest_locus_cct(double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y) || -2.0 * x + 12.0 * y + 3.0 <= 0.0) {
        throw DomainError("chromaticity (" + std::to_string(x) + ", " + std::to_string(y) +
                          ") is not a valid xy coordinate");
    }
    const auto [u, v] = detail::xy_to_uv1960(x, y);
    const double lo = 1e6 / kMaxCctKelvin;
    const double hi = 1e6 / kMinCctKelvin;

    constexpr int kGrid = 256;
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= kGrid; ++i) {
        const double m = lo + (hi - lo) * i / kGrid;
        const double d = detail::locus_distance_sq(m, u, v);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    double a = lo + (hi - lo) * std::max(best - 1, 0) / kGrid;
    double b = lo + (hi - lo) * std::min(best + 1, kGrid) / kGrid;

    // Golden-section search on the bracketing grid cells.
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = detail::locus_distance_sq(c, u, v);
    double fd = detail::locus_distance_sq(d, u, v);
    while (b - a > 1e-10) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = detail::locus_distance_sq(c, u, v);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = detail::locus_distance_sq(d, u, v);
        }
    }
    const double mired = 0.5 * (a + b);
    return Cct(std::clamp(1e6 / mired, kMinCctKelvin, kMaxCctKelvin));
}

}  // namespace detail

/// CCT of a chromaticity: the locus temperature nearest to (x, y) in the
/// CIE 1960 UCS. Exact inverse of cct_to_xy for points on the locus.
inline Cct xy_to_cct(double x, double y) {
    const Cct t = detail::nearest_locus_cct(x, y);
    const Chromaticity on = cct_to_xy(t);
    const double dist = std::hypot(on.x - x, on.y - y);
    if (!(dist < kMaxLocusDistance)) {
        throw DomainError("chromaticity (" + std::to_string(x) + ", " + std::to_string(y) +
                          ") is " + std::to_string(dist) + " from the locus (limit " +
                          std::to_string(kMaxLocusDistance) + ")");
    }
    return t;
}

// ---------------------------------------------------------------------------
// Matrix interpolation

/// Inverse-temperature interpolation weight of the low-CCT matrix, clamped to
/// [0, 1] outside the calibrated span.
inline double interpolation_weight(double t, double cct_low, double cct_high) {
    if (!(t > 0.0) || !(cct_low > 0.0) || !(cct_high > 0.0)) {
        throw DomainError("interpolation_weight: color temperatures must be positive");
    }
    if (!(cct_low < cct_high)) {
        throw DomainError("interpolation_weight: cct_low must be below cct_high");
    }
    const double g = (1.0 / t - 1.0 / cct_high) / (1.0 / cct_low - 1.0 / cct_high);
    return std::clamp(g, 0.0, 1.0);
}

inline double interpolation_weight(Cct t, Cct cct_low, Cct cct_high) {
    return interpolation_weight(t.kelvin(), cct_low.kelvin(), cct_high.kelvin());
}

inline ColorMatrix3 interpolate_ccm(Cct t, const CameraCalibration& cal, MatrixKind which) {
    const double g = interpolation_weight(t, cal.cct_low, cal.cct_high);
    const ColorMatrix3& lo = which == MatrixKind::color_matrix ? cal.cm_low : cal.fm_low;
    const ColorMatrix3& hi = which == MatrixKind::color_matrix ? cal.cm_high : cal.fm_high;
    // Endpoints return the calibrated matrices bit-identically.
    if (g == 1.0) return lo;
    if (g == 0.0) return hi;
    return g * lo + (1.0 - g) * hi;
}

// ---------------------------------------------------------------------------
// Locus sampling

struct PlanckianSample {
    Cct cct;
    XyzColor xyz;
};

using PlanckianSampleSet = std::vector<PlanckianSample>;

/// XYZ of a locus chromaticity, scaled to Y = 1.
inline XyzColor xyz_from_xy(Chromaticity c) {
    return {c.x / c.y, 1.0, (1.0 - c.x - c.y) / c.y};
}

inline Chromaticity xy_from_xyz(const XyzColor& c) {
    const double s = c.x + c.y + c.z;
    return {c.x / s, c.y / s};
}

inline PlanckianSampleSet planckian_xyz_samples(double lo = 2500.0, double hi = 7500.0,
                                                double step = 100.0) {
    if (!(lo < hi) || !(step > 0.0)) {
        throw DomainError("planckian_xyz_samples: need lo < hi and step > 0");
    }
    PlanckianSampleSet out;
    // Integer stepping keeps the sample grid exact (2500, 2600, ..., 7500).
    const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const Cct t(lo + step * static_cast<double>(i));
        out.push_back({t, xyz_from_xy(cct_to_xy(t))});
    }
    return out;
}

/// Camera-native color of an XYZ illuminant with CCT t (ColorMatrix path).
inline RgbColor raw_from_xyz(const XyzColor& xyz, Cct t, const CameraCalibration& cal) {
    return RgbColor::from(interpolate_ccm(t, cal, MatrixKind::color_matrix).apply(xyz.vec()));
}

// ---------------------------------------------------------------------------
// Illuminant raw -> XYZ / CCT

struct IlluminantXyzCct {
    XyzColor xyz;
    Cct cct;
    int iterations = 0;
};

/// Raised when the raw -> XYZ fixed point fails to settle.
class ConvergenceError : public NumericError {
public:
    ConvergenceError(const std::string& what, Chromaticity last_xy, double last_cct)
        : NumericError(what), last_xy_(last_xy), last_cct_(last_cct) {}
    Chromaticity last_xy() const { return last_xy_; }
    double last_cct() const { return last_cct_; }

private:
    Chromaticity last_xy_;
    double last_cct_;
};

struct FixedPointOptions {
    int max_iterations = 100;
    double tolerance = 1e-6;
};

/// Iterates CCT -> interpolated ColorMatrix -> XYZ -> chromaticity from the
/// D65 seed until the chromaticity moves less than `tolerance` per coordinate.
inline IlluminantXyzCct illuminant_raw_to_xyz_cct(const RgbColor& illum,
                                                  const CameraCalibration& cal,
                                                  FixedPointOptions opts = {}) {
    if (!illum.all_finite() || !illum.all_positive()) {
        throw DomainError("illuminant_raw_to_xyz_cct: illuminant channels must be positive");
    }
    Chromaticity xy = kD65Chromaticity;
    double last_cct = 0.0;
    for (int it = 1; it <= opts.max_iterations; ++it) {
        Cct t;
        try {
            t = detail::nearest_locus_cct(xy.x, xy.y);
        } catch (const DomainError& e) {
            throw ConvergenceError(std::string("illuminant_raw_to_xyz_cct: invalid iterate: ") +
                                       e.what(),
                                   xy, last_cct);
        }
        last_cct = t.kelvin();
        const ColorMatrix3 inv = interpolate_ccm(t, cal, MatrixKind::color_matrix).inverse();
        const XyzColor xyz = XyzColor::from(inv.apply(illum.vec()));
        const double sum = xyz.x + xyz.y + xyz.z;
        if (!std::isfinite(sum) || sum == 0.0) {
            throw NumericError("illuminant_raw_to_xyz_cct: degenerate XYZ iterate");
        }
        const Chromaticity next{xyz.x / sum, xyz.y / sum};
        if (std::abs(next.x - xy.x) < opts.tolerance && std::abs(next.y - xy.y) < opts.tolerance) {
            return {xyz, t, it};
        }
        xy = next;
    }
    throw ConvergenceError("illuminant_raw_to_xyz_cct: no convergence within " +
                               std::to_string(opts.max_iterations) + " iterations",
                           xy, last_cct);
}

}  // namespace ccmnet
