#pragma once

// Camera-to-camera mapping and imaginary-camera synthesis. Training images are
// white balanced and lifted to XYZ with their camera's forward matrix; the XYZ
// scenes are then re-rendered into other cameras, and pairs of renderings are
// blended into images of cameras that do not exist.

#include <ccmnet/colorimetry.hpp>
#include <ccmnet/errors.hpp>
#include <ccmnet/histogram.hpp>
#include <ccmnet/random.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace ccmnet {

/// White-balanced XYZ scene lifted from one camera's image.
struct XyzImage {
    int width = 0;
    int height = 0;
    std::vector<double> pixels;
    std::string source_camera_id;
    Cct source_cct;
};

/// Image plus its label and camera, as used by the augmentation pipeline.
struct LabeledImage {
    RawImage image;
    RgbColor gt;
    std::string camera_id;
};

struct IlluminantPool {
    std::string camera_id;
    std::vector<RgbColor> gt_illuminants;
    /// v = c[3] u^3 + c[2] u^2 + c[1] u + c[0]
    std::array<double, 4> poly_coeffs{};
    double u_min = 0.0;
    double u_max = 0.0;
    double jitter_sigma = 0.02;
    double residual_rms = 0.0;

    double curve(double u) const {
        return ((poly_coeffs[3] * u + poly_coeffs[2]) * u + poly_coeffs[1]) * u + poly_coeffs[0];
    }
};

struct ImaginaryCamera {
    std::string cam_a_id;
    std::string cam_b_id;
    double alpha = 1.0;
    CameraCalibration calibration;
};

inline RawImage white_balance(const RawImage& image, const RgbColor& illum) {
    if (!illum.all_finite() || !illum.all_positive()) {
        throw DomainError("white_balance: illuminant channels must be positive");
    }
    const double d[3] = {illum.r / illum.g, 1.0, illum.b / illum.g};
    RawImage out = image;
    for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] /= d[i % 3];
    return out;
}

/// White balance with the label, then apply the forward matrix interpolated
/// at the label's temperature.
inline XyzImage to_xyz(const RawImage& image, const RgbColor& gt, const CameraCalibration& cal) {
    const IlluminantXyzCct ref = illuminant_raw_to_xyz_cct(gt, cal);
    const ColorMatrix3 fm = interpolate_ccm(ref.cct, cal, MatrixKind::forward_matrix);
    const RawImage wb = white_balance(image, gt);
    XyzImage out{image.width, image.height, std::vector<double>(wb.pixels.size()), cal.camera_id, ref.cct};
    for (std::size_t i = 0; i < wb.pixel_count(); ++i) {
        const Vec3 x = fm.apply(wb.pixel(i).vec());
        for (std::size_t c = 0; c < 3; ++c) out.pixels[3 * i + c] = x[c];
    }
    return out;
}

struct XyzPool {
    std::vector<XyzImage> images;
    /// Index into the input list for each pooled image.
    std::vector<std::size_t> source_index;
    std::size_t skipped = 0;
    std::vector<std::string> warnings;
};

/// Lifts every image to XYZ. Images whose label does not converge to a
/// temperature are skipped and reported.
inline XyzPool to_xyz_pool(const std::vector<LabeledImage>& images,
                           const std::map<std::string, CameraCalibration>& cameras) {
    XyzPool pool;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto it = cameras.find(images[i].camera_id);
        if (it == cameras.end()) throw LoadError("to_xyz_pool: unknown camera '" + images[i].camera_id + "'");
        try {
            pool.images.push_back(to_xyz(images[i].image, images[i].gt, it->second));
            pool.source_index.push_back(i);
        } catch (const NumericError& e) {
            ++pool.skipped;
            pool.warnings.push_back("image " + std::to_string(i) + " skipped: " + e.what());
        }
    }
    return pool;
}

/// Least-squares cubic v(u) through the labels' uv coordinates.
inline IlluminantPool fit_illuminant_poly(const std::vector<RgbColor>& gts, const std::string& camera_id = {},
                                          double jitter_sigma = 0.02) {
    std::vector<UvChroma> pts;
    std::set<double> distinct;
    for (const auto& g : gts) {
        pts.push_back(rgb_to_uv(g));
        distinct.insert(pts.back().u);
    }
    if (distinct.size() < 4) {
        throw FitError("fit_illuminant_poly: need at least 4 distinct u values, got " + std::to_string(distinct.size()));
    }
    const auto n = static_cast<Eigen::Index>(pts.size());
    Eigen::MatrixXd a(n, 4);
    Eigen::VectorXd b(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double u = pts[static_cast<std::size_t>(i)].u;
        a(i, 0) = 1.0;
        a(i, 1) = u;
        a(i, 2) = u * u;
        a(i, 3) = u * u * u;
        b(i) = pts[static_cast<std::size_t>(i)].v;
    }
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    if (qr.rank() < 4) throw FitError("fit_illuminant_poly: design matrix is rank deficient");
    const Eigen::VectorXd c = qr.solve(b);
    IlluminantPool pool;
    pool.camera_id = camera_id;
    pool.gt_illuminants = gts;
    for (int k = 0; k < 4; ++k) pool.poly_coeffs[static_cast<std::size_t>(k)] = c(k);
    pool.u_min = *distinct.begin();
    pool.u_max = *distinct.rbegin();
    pool.jitter_sigma = jitter_sigma;
    double ss = 0.0;
    for (const auto& p : pts) ss += (p.v - pool.curve(p.u)) * (p.v - pool.curve(p.u));
    pool.residual_rms = std::sqrt(ss / static_cast<double>(pts.size()));
    return pool;
}

inline RgbColor sample_augmented_illuminant(const IlluminantPool& pool, Rng& rng) {
    const double u = rng.uniform(pool.u_min, pool.u_max);
    const double v = pool.curve(u) + (pool.jitter_sigma > 0.0 ? rng.normal(0.0, pool.jitter_sigma) : 0.0);
    return uv_to_rgb({u, v});
}

/// Camera A's illuminant expressed in camera B's raw space.
inline RgbColor map_illuminant(const RgbColor& illum_a, const CameraCalibration& cal_a, const CameraCalibration& cal_b) {
    const IlluminantXyzCct ref = illuminant_raw_to_xyz_cct(illum_a, cal_a);
    return RgbColor::from(interpolate_ccm(ref.cct, cal_b, MatrixKind::color_matrix).apply(ref.xyz.vec()));
}

struct RenderedImage {
    RawImage image;
    RgbColor gt;
};

/// Inverse forward matrix at `cct`, then tint by the (green-normalized)
/// illuminant.
inline RenderedImage render_to_camera(const XyzImage& xyz, const CameraCalibration& cal, const RgbColor& illum_native,
                                      Cct cct, double saturation_level = 1.0) {
    if (!illum_native.all_finite() || !illum_native.all_positive()) {
        throw DomainError("render_to_camera: illuminant channels must be positive");
    }
    const ColorMatrix3 inv = interpolate_ccm(cct, cal, MatrixKind::forward_matrix).inverse();
    const RgbColor gt{illum_native.r / illum_native.g, 1.0, illum_native.b / illum_native.g};
    RenderedImage out{RawImage(xyz.width, xyz.height, saturation_level), gt};
    for (std::size_t i = 0; i < out.image.pixel_count(); ++i) {
        const Vec3 raw = inv.apply({xyz.pixels[3 * i], xyz.pixels[3 * i + 1], xyz.pixels[3 * i + 2]});
        out.image.set_pixel(i, {raw[0] * gt.r, raw[1], raw[2] * gt.b});
    }
    return out;
}

/// Entrywise alpha * A + (1 - alpha) * B of all four matrices.
inline CameraCalibration blend_calibrations(const CameraCalibration& a, const CameraCalibration& b, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("blend_calibrations: alpha must lie in [0, 1]");
    if (a.cct_low != b.cct_low || a.cct_high != b.cct_high) {
        throw DomainError("blend_calibrations: cameras '" + a.camera_id + "' and '" + b.camera_id +
                          "' use different calibration temperatures");
    }
    CameraCalibration v = a;
    v.cm_low = alpha * a.cm_low + (1.0 - alpha) * b.cm_low;
    v.cm_high = alpha * a.cm_high + (1.0 - alpha) * b.cm_high;
    v.fm_low = alpha * a.fm_low + (1.0 - alpha) * b.fm_low;
    v.fm_high = alpha * a.fm_high + (1.0 - alpha) * b.fm_high;
    if (alpha == 1.0) {
        v.camera_id = a.camera_id;
    } else if (alpha == 0.0) {
        v.camera_id = b.camera_id;
    } else {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", alpha);
        v.camera_id = a.camera_id + "*" + buf + "+" + b.camera_id;
    }
    return v;
}

struct ImaginarySample {
    RawImage image;
    RgbColor gt;
    CameraCalibration calibration;
};

/// Pixelwise alpha-blend of two aligned renderings of one scene, with the
/// labels and calibrations blended by the same weight.
inline ImaginarySample synthesize_imaginary(const RawImage& pair_a, const RawImage& pair_b, const RgbColor& gt_a,
                                            const RgbColor& gt_b, const CameraCalibration& cal_a,
                                            const CameraCalibration& cal_b, double alpha) {
    if (pair_a.width != pair_b.width || pair_a.height != pair_b.height) {
        throw ShapeError("synthesize_imaginary: images are " + std::to_string(pair_a.width) + "x" +
                         std::to_string(pair_a.height) + " and " + std::to_string(pair_b.width) + "x" +
                         std::to_string(pair_b.height));
    }
    ImaginarySample s{pair_a, {}, blend_calibrations(cal_a, cal_b, alpha)};
    for (std::size_t i = 0; i < s.image.pixels.size(); ++i) {
        s.image.pixels[i] = alpha * pair_a.pixels[i] + (1.0 - alpha) * pair_b.pixels[i];
    }
    s.gt = {alpha * gt_a.r + (1.0 - alpha) * gt_b.r, alpha * gt_a.g + (1.0 - alpha) * gt_b.g,
            alpha * gt_a.b + (1.0 - alpha) * gt_b.b};
    return s;
}

// ---------------------------------------------------------------------------
// Augmented training sets

enum class AlphaMode { none, one, uniform };

inline AlphaMode parse_alpha_mode(const std::string& s) {
    if (s == "none") return AlphaMode::none;
    if (s == "one") return AlphaMode::one;
    if (s == "uniform") return AlphaMode::uniform;
    throw ConfigError("unknown alpha mode '" + s + "' (expected none, one or uniform)");
}

inline const char* alpha_mode_name(AlphaMode m) {
    switch (m) {
        case AlphaMode::none: return "none";
        case AlphaMode::one: return "one";
        case AlphaMode::uniform: return "uniform";
    }
    return "?";
}

struct AugmentConfig {
    AlphaMode mode = AlphaMode::uniform;
    std::size_t count = 0;
    std::uint64_t seed = 0;
    double jitter_sigma = 0.02;
};

struct AugmentedSample {
    RawImage image;
    RgbColor gt;
    CameraCalibration calibration;
    std::size_t source_image = 0;
    std::string cam_a;
    std::string cam_b;
    double alpha = 1.0;
};

struct AugmentResult {
    std::vector<AugmentedSample> samples;
    std::size_t pool_skipped = 0;
    std::size_t render_failures = 0;
};

/// Draws `count` augmented images: a random pooled XYZ scene, an illuminant
/// drawn from its source camera's label curve, mapped into two random
/// training cameras A and B, rendered in both and blended with alpha (1 for
/// AlphaMode::one, uniform in [0, 1] for AlphaMode::uniform).
inline AugmentResult build_augmented_set(const std::vector<LabeledImage>& images,
                                         const std::map<std::string, CameraCalibration>& cameras,
                                         const AugmentConfig& cfg) {
    AugmentResult res;
    if (cfg.mode == AlphaMode::none || cfg.count == 0) return res;
    if (cameras.size() < 2 && cfg.mode == AlphaMode::uniform) {
        throw ConfigError("imaginary-camera augmentation needs at least two cameras");
    }
    const XyzPool pool = to_xyz_pool(images, cameras);
    res.pool_skipped = pool.skipped;
    if (pool.images.empty()) throw ConfigError("augmentation: no image could be lifted to XYZ");

    std::map<std::string, std::vector<RgbColor>> labels;
    for (const auto& im : images) labels[im.camera_id].push_back(im.gt);
    std::map<std::string, IlluminantPool> curves;
    for (const auto& [id, gts] : labels) curves[id] = fit_illuminant_poly(gts, id, cfg.jitter_sigma);
    std::vector<std::string> ids;
    for (const auto& [id, cal] : cameras) ids.push_back(id);

    Rng rng(cfg.seed);
    std::size_t attempts = 0;
    while (res.samples.size() < cfg.count) {
        if (++attempts > 20 * cfg.count + 100) {
            throw NumericError("augmentation: too many rendering failures (" + std::to_string(res.render_failures) + ")");
        }
        const std::size_t k = rng.index(pool.images.size());
        const XyzImage& scene = pool.images[k];
        const std::string& a = ids[rng.index(ids.size())];
        std::string b = a;
        if (ids.size() > 1) {
            while (b == a) b = ids[rng.index(ids.size())];
        }
        const double alpha = cfg.mode == AlphaMode::one ? 1.0 : rng.uniform();
        const RgbColor src = sample_augmented_illuminant(curves.at(scene.source_camera_id), rng);
        const double exposure = rng.uniform(0.5, 0.9);
        try {
            const CameraCalibration& cs = cameras.at(scene.source_camera_id);
            const IlluminantXyzCct ref = illuminant_raw_to_xyz_cct(src, cs);
            const CameraCalibration& ca = cameras.at(a);
            const CameraCalibration& cb = cameras.at(b);
            const RgbColor la = RgbColor::from(interpolate_ccm(ref.cct, ca, MatrixKind::color_matrix).apply(ref.xyz.vec()));
            const RgbColor lb = RgbColor::from(interpolate_ccm(ref.cct, cb, MatrixKind::color_matrix).apply(ref.xyz.vec()));
            const RenderedImage ra = render_to_camera(scene, ca, la, ref.cct);
            const RenderedImage rb = render_to_camera(scene, cb, lb, ref.cct);
            ImaginarySample v = synthesize_imaginary(ra.image, rb.image, ra.gt, rb.gt, ca, cb, alpha);
            double peak = 0.0;
            for (double p : v.image.pixels) peak = std::max(peak, p);
            if (!(peak > 0.0) || !v.gt.all_positive()) throw NumericError("degenerate rendering");
            for (double& p : v.image.pixels) p *= exposure / peak;
            res.samples.push_back({std::move(v.image), v.gt, std::move(v.calibration), pool.source_index[k], a, b, alpha});
        } catch (const Error&) {
            ++res.render_failures;
        }
    }
    return res;
}

}  // namespace ccmnet
