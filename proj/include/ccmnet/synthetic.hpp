#pragma once

// Synthetic multi-camera data. Each camera responds to XYZ through a pair of
// matrices blended with the same inverse-temperature weight used for color
// matrix interpolation, so its metadata describes it exactly.

#include <ccmnet/colorimetry.hpp>
#include <ccmnet/dataio.hpp>
#include <ccmnet/histogram.hpp>
#include <ccmnet/random.hpp>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace ccmnet {

struct SyntheticCameraSpec {
    std::string camera_id;
    ColorMatrix3 m_low;
    ColorMatrix3 m_high;
    std::uint64_t seed = 0;
};

struct SyntheticScene {
    RawImage image;
    RgbColor gt;
    Cct cct;
    std::size_t camera = 0;
    /// Per-pixel XYZ reflectance, interleaved like the image.
    std::vector<double> reflectance;
    /// Index of a pixel inside the neutral patch.
    std::size_t neutral_pixel = 0;
};

struct SyntheticDataset {
    std::vector<SyntheticCameraSpec> specs;
    std::vector<CameraCalibration> cameras;
    std::vector<SyntheticScene> scenes;
};

// Reference DNG-style color matrices of a consumer sensor (XYZ -> raw).
inline const ColorMatrix3 kReferenceCmD65({0.4716, 0.0603, -0.0830, -0.7798, 1.5474, 0.2480, -0.1496, 0.1937, 0.6651});
inline const ColorMatrix3 kReferenceCmA({0.5309, -0.0229, -0.0336, -0.6241, 1.3265, 0.3337, -0.0817, 0.1215, 0.6664});

inline constexpr double kSyntheticMaxCondition = 100.0;

/// Spread of random cameras around the reference sensor.
struct CameraVariation {
    double gain_min = 0.8;
    double gain_max = 1.25;
    double shared_sigma = 0.03;
    double own_sigma = 0.01;
};

/// Random camera around the reference sensor: per-channel gains plus entry
/// jitter, shared between the two calibration matrices.
inline SyntheticCameraSpec random_camera_spec(const std::string& id, std::uint64_t seed,
                                              const CameraVariation& var = {}) {
    Rng rng(seed);
    for (;;) {
        const Vec3 gain{rng.uniform(var.gain_min, var.gain_max), 1.0, rng.uniform(var.gain_min, var.gain_max)};
        ColorMatrix3 jitter;
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < 3; ++j) jitter(i, j) = rng.normal(0.0, var.shared_sigma);
        }
        const ColorMatrix3 g = ColorMatrix3::diagonal(gain);
        SyntheticCameraSpec s{id, g * (kReferenceCmA + jitter), g * (kReferenceCmD65 + jitter), seed};
        for (ColorMatrix3* m : {&s.m_low, &s.m_high}) {
            for (std::size_t i = 0; i < 9; ++i) (*m)(i / 3, i % 3) += rng.normal(0.0, var.own_sigma);
        }
        if (s.m_low.condition_number() < kSyntheticMaxCondition && s.m_high.condition_number() < kSyntheticMaxCondition) {
            return s;
        }
    }
}

/// Illuminant XYZ at a temperature (Y = 1).
inline XyzColor illuminant_xyz(Cct t) { return xyz_from_xy(cct_to_xy(t)); }

/// Forward matrix making the calibration illuminant map to unit XYZ
/// reflectance: diag(1/L) M^-1 diag(M L).
inline ColorMatrix3 synthetic_forward_matrix(const ColorMatrix3& m, Cct t) {
    const XyzColor l = illuminant_xyz(t);
    const Vec3 raw = m.apply(l.vec());
    return ColorMatrix3::diagonal({1.0 / l.x, 1.0 / l.y, 1.0 / l.z}) * m.inverse() * ColorMatrix3::diagonal(raw);
}

inline CameraCalibration calibration_from_spec(const SyntheticCameraSpec& s) {
    CameraCalibration cal;
    cal.camera_id = s.camera_id;
    cal.cm_low = s.m_low;
    cal.cm_high = s.m_high;
    cal.fm_low = synthetic_forward_matrix(s.m_low, cal.cct_low);
    cal.fm_high = synthetic_forward_matrix(s.m_high, cal.cct_high);
    cal.validate();
    return cal;
}

/// Camera response at temperature t: (g m_low + (1 - g) m_high) xyz.
inline RgbColor synthetic_response(const SyntheticCameraSpec& s, Cct t, const XyzColor& xyz) {
    CameraCalibration blend;
    blend.cm_low = s.m_low;
    blend.cm_high = s.m_high;
    return RgbColor::from(interpolate_ccm(t, blend, MatrixKind::color_matrix).apply(xyz.vec()));
}

/// Log-reflectance offset shared by the colored patches of one scene.
inline constexpr double kSceneCastSigma = 0.3;

/// 32x32 scene of 8-32 reflectance patches on an 8x8 grid of 4x4 cells. Patch
/// 0 is neutral and always present; the others share a scene-wide color cast. The exposure puts the brightest channel
/// between 50% and 90% of saturation.
inline SyntheticScene render_synthetic_scene(const SyntheticCameraSpec& spec, std::size_t camera, Cct t, Rng& rng) {
    constexpr int kSize = 32, kCell = 4, kGrid = kSize / kCell;
    const int patches = 8 + static_cast<int>(rng.index(25));
    std::vector<Vec3> refl(static_cast<std::size_t>(patches));
    const double gray = rng.uniform(0.3, 0.9);
    refl[0] = {gray, gray, gray};
    Vec3 cast;
    for (double& c : cast) c = rng.normal(0.0, kSceneCastSigma);
    for (int p = 1; p < patches; ++p) {
        const double k = rng.uniform(0.1, 0.9);
        auto& r = refl[static_cast<std::size_t>(p)];
        for (std::size_t c = 0; c < 3; ++c) r[c] = k * std::exp(cast[c] + rng.normal(0.0, 0.35));
    }
    std::vector<int> cell(kGrid * kGrid);
    for (int i = 0; i < kGrid * kGrid; ++i) cell[static_cast<std::size_t>(i)] = i < patches ? i : static_cast<int>(rng.index(static_cast<std::size_t>(patches)));
    for (std::size_t i = cell.size(); i > 1; --i) std::swap(cell[i - 1], cell[rng.index(i)]);

    const XyzColor l = illuminant_xyz(t);
    SyntheticScene sc;
    sc.image = RawImage(kSize, kSize, 1.0);
    sc.reflectance.resize(sc.image.pixels.size());
    sc.cct = t;
    sc.camera = camera;
    double peak = 0.0;
    for (int y = 0; y < kSize; ++y) {
        for (int x = 0; x < kSize; ++x) {
            const int p = cell[static_cast<std::size_t>((y / kCell) * kGrid + x / kCell)];
            const Vec3& r = refl[static_cast<std::size_t>(p)];
            const std::size_t i = static_cast<std::size_t>(y * kSize + x);
            if (p == 0) sc.neutral_pixel = i;
            const RgbColor raw = synthetic_response(spec, t, {r[0] * l.x, r[1] * l.y, r[2] * l.z});
            sc.image.set_pixel(i, raw);
            for (int c = 0; c < 3; ++c) sc.reflectance[3 * i + static_cast<std::size_t>(c)] = r[static_cast<std::size_t>(c)];
            peak = std::max({peak, raw.r, raw.g, raw.b});
        }
    }
    const double exposure = rng.uniform(0.5, 0.9) / peak;
    for (double& v : sc.image.pixels) v *= exposure;
    const RgbColor gt = synthetic_response(spec, t, l);
    sc.gt = {gt.r / gt.g, 1.0, gt.b / gt.g};
    return sc;
}

inline std::string synthetic_camera_id(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "synth_%02zu", i);
    return buf;
}

/// Deterministic dataset: camera k uses seed-derived stream k; scenes draw
/// their temperature uniformly from [2500, 7500] K.
inline SyntheticDataset generate_synthetic_dataset(int n_cameras, int scenes_per_camera, std::uint64_t seed,
                                                   const CameraVariation& var = {}) {
    if (n_cameras < 1) throw DomainError("generate_synthetic_dataset: need at least one camera");
    if (scenes_per_camera < 0) throw DomainError("generate_synthetic_dataset: scene count must be non-negative");
    Rng master(seed);
    SyntheticDataset ds;
    for (int c = 0; c < n_cameras; ++c) {
        const std::uint64_t cam_seed = master.next();
        ds.specs.push_back(random_camera_spec(synthetic_camera_id(static_cast<std::size_t>(c)), cam_seed, var));
        ds.cameras.push_back(calibration_from_spec(ds.specs.back()));
    }
    for (int c = 0; c < n_cameras; ++c) {
        Rng rng(master.next());
        for (int s = 0; s < scenes_per_camera; ++s) {
            const Cct t(rng.uniform(2500.0, 7500.0));
            ds.scenes.push_back(render_synthetic_scene(ds.specs[static_cast<std::size_t>(c)], static_cast<std::size_t>(c), t, rng));
        }
    }
    return ds;
}

/// Writes images, camera metadata and manifest.csv under dir; returns the
/// manifest path.
inline fs::path write_synthetic_dataset(const SyntheticDataset& ds, const fs::path& dir) {
    DatasetManifest m;
    for (const auto& cal : ds.cameras) {
        const fs::path meta = dir / "cameras" / (cal.camera_id + ".txt");
        save_camera_metadata(meta, cal);
        m.camera_files[cal.camera_id] = meta;
    }
    std::vector<int> counter(ds.cameras.size(), 0);
    for (const auto& sc : ds.scenes) {
        const std::string& id = ds.cameras[sc.camera].camera_id;
        char name[64];
        std::snprintf(name, sizeof name, "%s_%04d.pfm", id.c_str(), counter[sc.camera]++);
        const fs::path img = dir / "images" / name;
        write_raw_image(img, sc.image);
        m.records.push_back({img, sc.gt, id});
    }
    const fs::path manifest = dir / "manifest.csv";
    save_manifest(manifest, m);
    return manifest;
}

}  // namespace ccmnet
