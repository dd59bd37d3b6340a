#pragma once

// Glue between datasets on disk, augmentation, training and evaluation.

#include <ccmnet/augmentation.hpp>
#include <ccmnet/dataio.hpp>
#include <ccmnet/estimator.hpp>
#include <ccmnet/metrics.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace ccmnet {

/// Small model used by the synthetic benchmark and as the CLI default.
inline ModelConfig reduced_model_config() {
    ModelConfig c;
    c.backbone.bins = 16;
    c.backbone.widths = {4, 8, 8, 8};
    c.query = HistogramSpec::query(16);
    c.cfe.bins = 32;
    c.cfe.widths = {2, 4, 4, 8};
    c.cfe.hidden = 16;
    return c;
}

/// Manifest images in manifest order.
inline std::vector<LabeledImage> load_labeled_images(const DatasetManifest& m) {
    std::vector<LabeledImage> out;
    out.reserve(m.records.size());
    for (const auto& r : m.records) {
        RawImage img = read_raw_image(r.image_path);
        out.push_back({std::move(img), r.gt, r.camera_id});
    }
    return out;
}

struct AssembledSet {
    TrainingSet set;
    std::size_t skipped = 0;
};

/// Real images first, then augmented samples, each imaginary camera with its own locus.
inline AssembledSet assemble_training_set(const std::vector<LabeledImage>& images,
                                          const std::map<std::string, CameraCalibration>& cameras,
                                          const ModelConfig& cfg, const std::vector<AugmentedSample>& augmented = {}) {
    AssembledSet out;
    std::map<std::string, std::size_t> locus;
    for (const auto& [id, cal] : cameras) locus[id] = add_camera(out.set, cal, cfg.cfe.bins);
    for (const auto& im : images) {
        const auto it = locus.find(im.camera_id);
        if (it == locus.end()) throw LoadError("training image refers to unknown camera '" + im.camera_id + "'");
        if (!add_sample(out.set, im.image, im.gt, it->second, cfg.query)) ++out.skipped;
    }
    for (const auto& s : augmented) {
        const std::size_t l = add_camera(out.set, s.calibration, cfg.cfe.bins);
        if (!add_sample(out.set, s.image, s.gt, l, cfg.query)) {
            out.set.loci.pop_back();
            ++out.skipped;
        }
    }
    return out;
}

/// Runs f(i) for i in [0, n) on up to `threads` workers; rethrows the first failure.
template <typename F>
void parallel_for(std::size_t n, unsigned threads, F f) {
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!err) err = std::current_exception();
                    next = n;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

struct Prediction {
    RgbColor rgb;
    UvChroma uv;
    double error = 0.0;
};

/// Per-image predictions in input order. An empty fingerprint means "use the camera's own".
template <typename T>
std::vector<Prediction> predict_all(const std::vector<LabeledImage>& images,
                                    const std::map<std::string, CameraCalibration>& cameras, Model<T>& model,
                                    unsigned threads = 1, bool zero_fingerprint = false) {
    std::map<std::string, CameraFingerprint> fp;
    for (const auto& [id, cal] : cameras) {
        fp[id] = zero_fingerprint ? CameraFingerprint{std::vector<double>(static_cast<std::size_t>(model.config.cfe.output), 0.0)}
                                  : camera_fingerprint(cal, model);
    }
    std::vector<Prediction> out(images.size());
    parallel_for(images.size(), threads, [&](std::size_t i) {
        const auto it = fp.find(images[i].camera_id);
        if (it == fp.end()) throw LoadError("image " + std::to_string(i) + " refers to unknown camera '" + images[i].camera_id + "'");
        IlluminantEstimate e;
        try {
            e = estimate_from_histograms(query_histograms(images[i].image, model.config.query), it->second, model);
        } catch (const EstimationError& ex) {
            throw EstimationError("image " + std::to_string(i) + ": " + ex.what());
        }
        out[i] = {e.rgb, e.uv, angular_error(e.rgb, images[i].gt)};
    });
    return out;
}

inline std::vector<Prediction> predict_gray_world(const std::vector<LabeledImage>& images, unsigned threads = 1) {
    std::vector<Prediction> out(images.size());
    parallel_for(images.size(), threads, [&](std::size_t i) {
        RgbColor e;
        try {
            e = gray_world(images[i].image);
        } catch (const EstimationError& ex) {
            throw EstimationError("image " + std::to_string(i) + ": " + ex.what());
        }
        out[i] = {e, rgb_to_uv(e), angular_error(e, images[i].gt)};
    });
    return out;
}

inline std::vector<double> errors_of(const std::vector<Prediction>& p) {
    std::vector<double> e;
    e.reserve(p.size());
    for (const auto& x : p) e.push_back(x.error);
    return e;
}

/// Writes images, per-camera metadata, manifest.csv and provenance.csv under dir.
/// Samples at alpha 0 or 1 reuse the real camera id; the rest get aug_NNNNN ids.
inline fs::path write_augmented_dataset(const AugmentResult& res, const std::vector<fs::path>& sources,
                                        const std::map<std::string, CameraCalibration>& cameras, std::uint64_t seed,
                                        const fs::path& dir) {
    DatasetManifest m;
    std::string prov = "index,image,camera_id,imaginary_name,source_index,source_image,cam_a,cam_b,alpha,r,g,b,seed\n";
    for (std::size_t i = 0; i < res.samples.size(); ++i) {
        const AugmentedSample& s = res.samples[i];
        std::string id;
        if (cameras.count(s.calibration.camera_id)) {
            id = s.calibration.camera_id;
        } else {
            char buf[32];
            std::snprintf(buf, sizeof buf, "aug_%05zu", i);
            id = buf;
        }
        if (!m.camera_files.count(id)) {
            const fs::path meta = dir / "cameras" / (id + ".txt");
            CameraCalibration cal = s.calibration;
            cal.camera_id = id;
            save_camera_metadata(meta, cal);
            m.camera_files[id] = meta;
        }
        char name[32];
        std::snprintf(name, sizeof name, "aug_%05zu.pfm", i);
        const fs::path img = dir / "images" / name;
        write_raw_image(img, s.image);
        m.records.push_back({img, s.gt, id});
        const std::string src = s.source_image < sources.size() ? sources[s.source_image].generic_string() : "";
        prov += std::to_string(i) + ",images/" + name + "," + id + "," + s.calibration.camera_id + "," +
                std::to_string(s.source_image) + "," + src + "," + s.cam_a + "," + s.cam_b + "," +
                format_double("%.6f", s.alpha) + "," + format_double("%.6f", s.gt.r) + "," +
                format_double("%.6f", s.gt.g) + "," + format_double("%.6f", s.gt.b) + "," + std::to_string(seed) + "\n";
    }
    const fs::path manifest = dir / "manifest.csv";
    save_manifest(manifest, m);
    write_file_text(dir / "provenance.csv", prov);
    return manifest;
}

}  // namespace ccmnet
