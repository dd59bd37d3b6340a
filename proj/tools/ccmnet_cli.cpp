#include <ccmnet/pipeline.hpp>
#include <ccmnet/synthetic.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <string>

using namespace ccmnet;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string csv_row(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double("%.6f", v[i]);
    return s;
}

ModelConfig preset_config(const std::string& preset) {
    if (preset == "reduced") return reduced_model_config();
    if (preset == "full") return ModelConfig{};
    throw UsageError("unknown preset '" + preset + "'");
}

// ---- synth

struct SynthArgs {
    int cameras = 4;
    int scenes = 20;
    std::uint64_t seed = 0;
    std::string out;
};

int run_synth(const SynthArgs& a) {
    if (a.cameras < 1 || a.scenes < 1) throw UsageError("--cameras and --scenes must be positive");
    const SyntheticDataset ds = generate_synthetic_dataset(a.cameras, a.scenes, a.seed);
    const fs::path manifest = write_synthetic_dataset(ds, a.out);
    std::printf("wrote %zu images from %d cameras to %s\n", ds.scenes.size(), a.cameras, manifest.string().c_str());
    return 0;
}

// ---- fingerprint

struct FingerprintArgs {
    std::string camera, model, csv;
};

int run_fingerprint(const FingerprintArgs& a) {
    const CameraCalibration cal = load_camera_metadata(a.camera);
    Model<float> m = load_checkpoint<float>(a.model);
    const CameraFingerprint f = camera_fingerprint(cal, m);
    std::string head;
    for (std::size_t i = 0; i < f.size(); ++i) head += (i ? "," : "") + std::string("f") + std::to_string(i);
    std::printf("%s\n%s\n", head.c_str(), csv_row(f.values).c_str());
    if (!a.csv.empty()) {
        const UvHistogram h = cfe_histogram(cal, m.config.cfe.bins);
        std::string s = "u_index,v_index,u,v,weight\n";
        for (int i = 0; i < h.spec.bins; ++i) {
            for (int j = 0; j < h.spec.bins; ++j) {
                s += std::to_string(i) + "," + std::to_string(j) + "," + csv_row({h.spec.u_center(i), h.spec.v_center(j), h.at(i, j)}) + "\n";
            }
        }
        write_file_text(a.csv, s);
    }
    return 0;
}

// ---- train

struct TrainArgs {
    std::string manifest, out, loss_csv, alpha_mode = "uniform", preset = "reduced";
    int epochs = 50;
    int batch = 16;
    double lr = 5e-4;
    int decay_epoch = 0;
    std::uint64_t seed = 0;
    std::uint64_t aug_seed = 1;
    long aug_count = -1;
    double jitter = 0.02;
    bool verbose = false;
};

int run_train(const TrainArgs& a) {
    const AlphaMode mode = parse_alpha_mode(a.alpha_mode);
    const ModelConfig cfg = preset_config(a.preset);
    const DatasetManifest man = load_manifest(a.manifest);
    const std::vector<LabeledImage> images = load_labeled_images(man);
    AugmentResult aug;
    if (mode != AlphaMode::none) {
        AugmentConfig ac{mode, a.aug_count < 0 ? images.size() : static_cast<std::size_t>(a.aug_count), a.aug_seed,
                         a.jitter};
        aug = build_augmented_set(images, man.cameras, ac);
    }
    const AssembledSet data = assemble_training_set(images, man.cameras, cfg, aug.samples);
    TrainConfig tc;
    tc.epochs = a.epochs;
    tc.batch_size = a.batch;
    tc.lr = a.lr;
    tc.decay_epoch = a.decay_epoch > 0 ? a.decay_epoch : std::max(1, a.epochs / 2);
    tc.seed = a.seed;
    Model<float> m = init_model<float>(cfg, a.seed);
    const TrainResult r = train(m, data.set, tc, [&](int epoch, double loss) {
        if (a.verbose) std::fprintf(stderr, "epoch %d loss %.6f\n", epoch, loss);
    });
    save_checkpoint(a.out, m);
    std::string csv = "epoch,loss\n";
    for (std::size_t i = 0; i < r.epoch_loss.size(); ++i) csv += std::to_string(i + 1) + "," + format_double("%.6f", r.epoch_loss[i]) + "\n";
    write_file_text(a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv, csv);
    std::printf("trained on %zu samples (%zu augmented, %zu skipped), %ld steps, final loss %.6f\n",
                data.set.samples.size(), aug.samples.size(), data.skipped, r.steps, r.epoch_loss.back());
    return 0;
}

// ---- infer / heatmap

struct InferArgs {
    std::string image, camera, model, heatmap;
};

PfmImage heatmap_pfm(const Tensor<double>& p, int bins) {
    PfmImage img{bins, bins, 1, {}};
    img.data.reserve(p.size());
    for (double v : p.values()) img.data.push_back(static_cast<float>(v));
    return img;
}

IlluminantEstimate infer_one(const InferArgs& a, Model<float>& m) {
    const RawImage img = read_raw_image(a.image);
    const CameraCalibration cal = load_camera_metadata(a.camera);
    return estimate_illuminant(img, cal, m);
}

int run_infer(const InferArgs& a) {
    Model<float> m = load_checkpoint<float>(a.model);
    const IlluminantEstimate e = infer_one(a, m);
    std::printf("r,g,b,u,v\n%s\n", csv_row({e.rgb.r, e.rgb.g, e.rgb.b, e.uv.u, e.uv.v}).c_str());
    if (!a.heatmap.empty()) write_pfm(a.heatmap, heatmap_pfm(e.heatmap, m.config.query.bins));
    return 0;
}

struct HeatmapArgs {
    InferArgs in;
    std::string csv;
};

int run_heatmap(const HeatmapArgs& a) {
    Model<float> m = load_checkpoint<float>(a.in.model);
    const IlluminantEstimate e = infer_one(a.in, m);
    const HistogramSpec& spec = m.config.query;
    write_pfm(a.in.heatmap, heatmap_pfm(e.heatmap, spec.bins));
    if (!a.csv.empty()) {
        std::string s = "u_index,v_index,u,v,p\n";
        for (int i = 0; i < spec.bins; ++i) {
            for (int j = 0; j < spec.bins; ++j) {
                s += std::to_string(i) + "," + std::to_string(j) + "," +
                     csv_row({spec.u_center(i), spec.v_center(j), e.heatmap[static_cast<std::size_t>(i * spec.bins + j)]}) + "\n";
            }
        }
        write_file_text(a.csv, s);
    }
    std::printf("centroid u=%.6f v=%.6f, wrote %s\n", e.uv.u, e.uv.v, a.in.heatmap.c_str());
    return 0;
}

// ---- eval

struct EvalArgs {
    std::string manifest, model, baseline, csv, predictions;
    unsigned threads = 1;
    bool zero_fingerprint = false;
};

int run_eval(const EvalArgs& a) {
    if (a.model.empty() == a.baseline.empty()) throw UsageError("give exactly one of --model or --baseline");
    if (!a.baseline.empty() && a.baseline != "gray-world") throw UsageError("unknown baseline '" + a.baseline + "'");
    const DatasetManifest man = load_manifest(a.manifest);
    const std::vector<LabeledImage> images = load_labeled_images(man);
    std::vector<Prediction> pred;
    std::string method = "gray-world";
    if (!a.model.empty()) {
        Model<float> m = load_checkpoint<float>(a.model);
        pred = predict_all(images, man.cameras, m, a.threads, a.zero_fingerprint);
        method = a.zero_fingerprint ? "ccmnet-zero-cfe" : "ccmnet";
    } else {
        pred = predict_gray_world(images, a.threads);
    }
    if (pred.empty()) throw LoadError(a.manifest + ": manifest lists no images");
    const ErrorStats s = compute_stats(errors_of(pred));
    std::printf("%-16s %10s %10s %10s %10s %10s %6s\n", "method", "mean", "median", "trimean", "best25", "worst25", "n");
    std::printf("%-16s %10.6f %10.6f %10.6f %10.6f %10.6f %6zu\n", method.c_str(), s.mean, s.median, s.trimean,
                s.best25_mean, s.worst25_mean, s.count);
    if (!a.csv.empty()) {
        write_file_text(a.csv, "method,mean,median,trimean,best25,worst25,count\n" + method + "," +
                                   csv_row({s.mean, s.median, s.trimean, s.best25_mean, s.worst25_mean}) + "," +
                                   std::to_string(s.count) + "\n");
    }
    if (!a.predictions.empty()) {
        std::string t = "index,image,camera_id,r,g,b,u,v,error_deg\n";
        for (std::size_t i = 0; i < pred.size(); ++i) {
            t += std::to_string(i) + "," + man.records[i].image_path.generic_string() + "," + man.records[i].camera_id + "," +
                 csv_row({pred[i].rgb.r, pred[i].rgb.g, pred[i].rgb.b, pred[i].uv.u, pred[i].uv.v, pred[i].error}) + "\n";
        }
        write_file_text(a.predictions, t);
    }
    return 0;
}

// ---- augment

struct AugmentArgs {
    std::string manifest, out, alpha = "uniform";
    std::uint64_t seed = 0;
    long count = -1;
    double jitter = 0.02;
};

int run_augment(const AugmentArgs& a) {
    const AlphaMode mode = parse_alpha_mode(a.alpha);
    if (mode == AlphaMode::none) throw UsageError("--alpha none produces no samples");
    const DatasetManifest man = load_manifest(a.manifest);
    const std::vector<LabeledImage> images = load_labeled_images(man);
    AugmentConfig ac{mode, a.count < 0 ? images.size() : static_cast<std::size_t>(a.count), a.seed, a.jitter};
    const AugmentResult res = build_augmented_set(images, man.cameras, ac);
    std::vector<fs::path> sources;
    for (const auto& r : man.records) sources.push_back(r.image_path);
    const fs::path out = write_augmented_dataset(res, sources, man.cameras, a.seed, a.out);
    std::printf("wrote %zu samples to %s (%zu pool images skipped, %zu render failures)\n", res.samples.size(),
                out.string().c_str(), res.pool_skipped, res.render_failures);
    return 0;
}

int fail(int code, const std::string& msg) {
    std::string line = msg;
    for (char& c : line) {
        if (c == '\n') c = ' ';
    }
    std::fprintf(stderr, "ccmnet: %s\n", line.c_str());
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-camera color constancy from calibration matrices"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a synthetic multi-camera dataset");
    s->add_option("--cameras", synth.cameras, "Number of cameras")->capture_default_str();
    s->add_option("--scenes", synth.scenes, "Scenes per camera")->capture_default_str();
    s->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
    s->add_option("--out", synth.out, "Output directory")->required();

    FingerprintArgs fp;
    auto* f = app.add_subcommand("fingerprint", "Print a camera's fingerprint");
    f->add_option("--camera", fp.camera, "Camera metadata file")->required();
    f->add_option("--model", fp.model, "Checkpoint")->required();
    f->add_option("--csv", fp.csv, "Write the locus histogram as CSV");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a model");
    t->add_option("--manifest", tr.manifest, "Training manifest")->required();
    t->add_option("--out", tr.out, "Checkpoint path")->required();
    t->add_option("--loss-csv", tr.loss_csv, "Per-epoch loss CSV (default: <out>.loss.csv)");
    t->add_option("--epochs", tr.epochs)->capture_default_str();
    t->add_option("--batch", tr.batch)->capture_default_str();
    t->add_option("--lr", tr.lr)->capture_default_str();
    t->add_option("--decay-epoch", tr.decay_epoch, "Epoch at which the learning rate halves (default: epochs/2)");
    t->add_option("--seed", tr.seed, "Initialization and shuffling seed")->capture_default_str();
    t->add_option("--alpha-mode", tr.alpha_mode, "Augmentation: none, one or uniform")->capture_default_str();
    t->add_option("--aug-seed", tr.aug_seed, "Augmentation seed")->capture_default_str();
    t->add_option("--aug-count", tr.aug_count, "Augmented samples (default: one per image)");
    t->add_option("--jitter", tr.jitter, "Illuminant jitter sigma")->capture_default_str();
    t->add_option("--preset", tr.preset, "Model size: reduced or full")->capture_default_str();
    t->add_flag("--verbose", tr.verbose, "Print per-epoch loss");

    InferArgs inf;
    auto* i = app.add_subcommand("infer", "Estimate the illuminant of one image");
    i->add_option("--image", inf.image, "Raw image (PFM)")->required();
    i->add_option("--camera", inf.camera, "Camera metadata file")->required();
    i->add_option("--model", inf.model, "Checkpoint")->required();
    i->add_option("--heatmap", inf.heatmap, "Write the probability map as PFM");

    HeatmapArgs hm;
    auto* h = app.add_subcommand("heatmap", "Export the probability map of one image");
    h->add_option("--image", hm.in.image, "Raw image (PFM)")->required();
    h->add_option("--camera", hm.in.camera, "Camera metadata file")->required();
    h->add_option("--model", hm.in.model, "Checkpoint")->required();
    h->add_option("--out", hm.in.heatmap, "Output PFM")->required();
    h->add_option("--csv", hm.csv, "Also write the map as CSV");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Angular-error statistics over a manifest");
    e->add_option("--manifest", ev.manifest, "Test manifest")->required();
    e->add_option("--model", ev.model, "Checkpoint");
    e->add_option("--baseline", ev.baseline, "Baseline instead of a model: gray-world");
    e->add_option("--csv", ev.csv, "Write statistics as CSV");
    e->add_option("--predictions", ev.predictions, "Write per-image predictions as CSV");
    e->add_option("--threads", ev.threads, "Worker threads")->capture_default_str();
    e->add_flag("--zero-fingerprint", ev.zero_fingerprint, "Replace every fingerprint with zeros");

    AugmentArgs au;
    auto* a = app.add_subcommand("augment", "Write an augmented dataset with provenance");
    a->add_option("--manifest", au.manifest, "Source manifest")->required();
    a->add_option("--out", au.out, "Output directory")->required();
    a->add_option("--seed", au.seed, "Augmentation seed")->capture_default_str();
    a->add_option("--alpha", au.alpha, "one or uniform")->capture_default_str();
    a->add_option("--count", au.count, "Samples (default: one per source image)");
    a->add_option("--jitter", au.jitter, "Illuminant jitter sigma")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::CallForAllHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        return fail(1, ex.what());
    }

    try {
        if (*s) return run_synth(synth);
        if (*f) return run_fingerprint(fp);
        if (*t) return run_train(tr);
        if (*i) return run_infer(inf);
        if (*h) return run_heatmap(hm);
        if (*e) return run_eval(ev);
        if (*a) return run_augment(au);
    } catch (const UsageError& ex) {
        return fail(1, ex.what());
    } catch (const ConfigError& ex) {
        return fail(1, ex.what());
    } catch (const LoadError& ex) {
        return fail(2, ex.what());
    } catch (const FormatError& ex) {
        return fail(2, ex.what());
    } catch (const ShapeError& ex) {
        return fail(2, ex.what());
    } catch (const Error& ex) {
        return fail(3, ex.what());
    } catch (const fs::filesystem_error& ex) {
        return fail(2, ex.what());
    } catch (const std::exception& ex) {
        return fail(3, ex.what());
    }
    return 1;
}
