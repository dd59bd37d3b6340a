#pragma once

// CCMNet estimator: a U-Net that reads the query histograms plus the tiled
// camera fingerprint and emits CCC filters and bias; the filtered histograms
// become a uv heatmap whose centroid is the illuminant estimate.

#include <ccmnet/autodiff.hpp>
#include <ccmnet/cfe.hpp>
#include <ccmnet/colorimetry.hpp>
#include <ccmnet/histogram.hpp>
#include <ccmnet/params.hpp>
#include <ccmnet/random.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

namespace ccmnet {

struct BackboneConfig {
    std::array<int, 4> widths{16, 32, 64, 128};
    int in_channels = 10;
    int out_channels = 3;
    int bins = 64;

    void validate() const {
        if (bins <= 0 || bins % 16 != 0) {
            throw ConfigError("backbone: bins must be a positive multiple of 16, got " + std::to_string(bins));
        }
        for (int w : widths) {
            if (w <= 0) throw ConfigError("backbone: channel widths must be positive");
        }
        if (out_channels != 3) throw ConfigError("backbone: output channels must be 3 (two filters and a bias)");
        if (in_channels <= 2) throw ConfigError("backbone: input channels must exceed the two histograms");
    }
    friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

struct ModelConfig {
    BackboneConfig backbone;
    CfeEncoderConfig cfe;
    HistogramSpec query = HistogramSpec::query(64);

    void validate() const {
        backbone.validate();
        cfe.validate();
        query.validate();
        if (query.bins != backbone.bins) {
            throw ConfigError("query histogram has " + std::to_string(query.bins) + " bins, backbone expects " +
                              std::to_string(backbone.bins));
        }
        if (backbone.in_channels != 2 + cfe.output) {
            throw ConfigError("backbone input channels (" + std::to_string(backbone.in_channels) +
                              ") must equal 2 + fingerprint size (" + std::to_string(cfe.output) + ")");
        }
    }
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Filters and bias emitted by the backbone.
struct CccKernel {
    Tensor<double> f0;
    Tensor<double> f1;
    Tensor<double> bias;
};

struct IlluminantEstimate {
    UvChroma uv;
    RgbColor rgb;
    Tensor<double> heatmap;
};

template <typename T>
struct Model {
    ModelConfig config;
    ParameterStore<T> params;
};

template <typename T>
void init_backbone_params(ParameterStore<T>& store, const BackboneConfig& cfg, Rng& rng) {
    cfg.validate();
    int cin = cfg.in_channels;
    for (int k = 0; k < 4; ++k) {
        const std::string name = "net.enc" + std::to_string(k);
        detail::add_conv(store, name + ".conv1", cin, cfg.widths[k], rng);
        detail::add_conv(store, name + ".conv2", cfg.widths[k], cfg.widths[k], rng);
        cin = cfg.widths[k];
    }
    for (int k = 3; k >= 0; --k) {
        const std::string name = "net.dec" + std::to_string(k);
        detail::add_conv(store, name + ".conv1", cin + cfg.widths[k], cfg.widths[k], rng);
        detail::add_conv(store, name + ".conv2", cfg.widths[k], cfg.widths[k], rng);
        cin = cfg.widths[k];
    }
    detail::add_conv(store, "net.head", cin, cfg.out_channels, rng);
}

template <typename T>
Model<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model<T> m{cfg, {}};
    Rng rng(seed);
    init_cfe_params(m.params, cfg.cfe, rng);
    init_backbone_params(m.params, cfg.backbone, rng);
    return m;
}

/// U-Net on a [in_channels, bins, bins] input; returns [3, bins, bins].
template <typename T>
Var backbone_forward(Tape<T>& tape, ParameterStore<T>& store, const BackboneConfig& cfg, Var input) {
    const Shape& s = tape.shape(input);
    if (s.size() != 3 || s[0] != cfg.in_channels || s[1] != cfg.bins || s[2] != cfg.bins) {
        throw ShapeError("backbone expects input [" + std::to_string(cfg.in_channels) + "," + std::to_string(cfg.bins) +
                         "," + std::to_string(cfg.bins) + "], got " + shape_str(s));
    }
    std::array<Var, 4> skips;
    Var x = input;
    for (int k = 0; k < 4; ++k) {
        skips[static_cast<std::size_t>(k)] = detail::double_conv(tape, store, "net.enc" + std::to_string(k), x);
        x = ops::maxpool2x2(tape, skips[static_cast<std::size_t>(k)]);
    }
    for (int k = 3; k >= 0; --k) {
        x = ops::concat_channels(tape, {ops::upsample2x(tape, x), skips[static_cast<std::size_t>(k)]});
        x = detail::double_conv(tape, store, "net.dec" + std::to_string(k), x);
    }
    return detail::conv(tape, store, "net.head", x);
}

/// softmax(B + N0 * F0 + N1 * F1) with * the circular convolution.
template <typename T>
Var apply_ccc(Tape<T>& tape, Var n0, Var n1, Var kernel) {
    const Var a = ops::circular_conv_fft(tape, n0, ops::channel(tape, kernel, 0));
    const Var b = ops::circular_conv_fft(tape, n1, ops::channel(tape, kernel, 1));
    return ops::softmax2d(tape, ops::add(tape, ops::add(tape, a, b), ops::channel(tape, kernel, 2)));
}

inline std::vector<double> u_centers(const HistogramSpec& s) {
    std::vector<double> c(static_cast<std::size_t>(s.bins));
    for (int i = 0; i < s.bins; ++i) c[static_cast<std::size_t>(i)] = s.u_center(i);
    return c;
}
inline std::vector<double> v_centers(const HistogramSpec& s) {
    std::vector<double> c(static_cast<std::size_t>(s.bins));
    for (int i = 0; i < s.bins; ++i) c[static_cast<std::size_t>(i)] = s.v_center(i);
    return c;
}

/// Full per-sample graph up to the heatmap. fingerprint: [cfe.output] node.
template <typename T>
Var heatmap_forward(Tape<T>& tape, Model<T>& model, Var n0, Var n1, Var fingerprint) {
    const int b = model.config.backbone.bins;
    const Var n0c = ops::reshape(tape, n0, Shape{1, b, b});
    const Var n1c = ops::reshape(tape, n1, Shape{1, b, b});
    const Var input = ops::concat_channels(tape, {n0c, n1c, ops::tile(tape, fingerprint, b, b)});
    const Var kernel = backbone_forward(tape, model.params, model.config.backbone, input);
    return apply_ccc(tape, n0, n1, kernel);
}

/// Angular error (degrees) of one sample against its ground truth.
template <typename T>
Var sample_loss(Tape<T>& tape, Model<T>& model, Var n0, Var n1, Var fingerprint, const RgbColor& gt) {
    const Var p = heatmap_forward(tape, model, n0, n1, fingerprint);
    const Var uv = ops::weighted_centroid(tape, p, u_centers(model.config.query), v_centers(model.config.query));
    return ops::angular_error_uv(tape, uv, gt.vec());
}

// ---------------------------------------------------------------------------
// Plain inference API

template <typename T>
CameraFingerprint camera_fingerprint(const CameraCalibration& cal, Model<T>& model) {
    return encode_fingerprint(cfe_histogram(cal, model.config.cfe.bins), model.params, model.config.cfe);
}

template <typename T>
CccKernel backbone_forward(const UvHistogram& n0, const UvHistogram& n1, const CameraFingerprint& f, Model<T>& model) {
    const BackboneConfig& cfg = model.config.backbone;
    if (n0.spec.bins != cfg.bins || n1.spec.bins != cfg.bins) {
        throw ShapeError("backbone_forward: histograms must have " + std::to_string(cfg.bins) + " bins");
    }
    if (static_cast<int>(f.size()) + 2 != cfg.in_channels) {
        throw ShapeError("backbone_forward: fingerprint has " + std::to_string(f.size()) + " values, expected " +
                         std::to_string(cfg.in_channels - 2));
    }
    Tape<T> tape;
    const int b = cfg.bins;
    const Var in = ops::concat_channels(
        tape, {tape.constant(histogram_tensor<T>(n0).reshaped({1, b, b})),
               tape.constant(histogram_tensor<T>(n1).reshaped({1, b, b})),
               tape.constant(tile_fingerprint(f, b).template cast<T>())});
    const Tensor<T>& k = tape.value(backbone_forward(tape, model.params, cfg, in));
    const std::size_t n = static_cast<std::size_t>(b) * static_cast<std::size_t>(b);
    CccKernel out{Tensor<double>({b, b}), Tensor<double>({b, b}), Tensor<double>({b, b})};
    for (std::size_t i = 0; i < n; ++i) {
        out.f0[i] = static_cast<double>(k[i]);
        out.f1[i] = static_cast<double>(k[n + i]);
        out.bias[i] = static_cast<double>(k[2 * n + i]);
    }
    return out;
}

inline Tensor<double> apply_ccc(const UvHistogram& n0, const UvHistogram& n1, const CccKernel& k) {
    const int b = n0.spec.bins;
    const Shape s{b, b};
    if (n1.spec.bins != b || k.f0.shape() != s || k.f1.shape() != s || k.bias.shape() != s) {
        throw ShapeError("apply_ccc: histogram and kernel shapes disagree");
    }
    Tape<double> tape;
    Tensor<double> packed({3, b, b});
    std::copy(k.f0.values().begin(), k.f0.values().end(), packed.values().begin());
    std::copy(k.f1.values().begin(), k.f1.values().end(), packed.values().begin() + b * b);
    std::copy(k.bias.values().begin(), k.bias.values().end(), packed.values().begin() + 2 * b * b);
    const Var p = apply_ccc(tape, tape.constant(histogram_tensor<double>(n0)), tape.constant(histogram_tensor<double>(n1)),
                            tape.constant(std::move(packed)));
    return tape.value(p);
}

inline UvChroma heatmap_centroid(const Tensor<double>& p, const HistogramSpec& spec) {
    if (p.shape() != Shape{spec.bins, spec.bins}) {
        throw ShapeError("heatmap_centroid: heatmap " + shape_str(p.shape()) + " does not match " +
                         std::to_string(spec.bins) + " bins");
    }
    double total = 0.0, u = 0.0, v = 0.0;
    for (int i = 0; i < spec.bins; ++i) {
        for (int j = 0; j < spec.bins; ++j) {
            const double q = p[static_cast<std::size_t>(i * spec.bins + j)];
            if (!(q >= 0.0)) throw DomainError("heatmap_centroid: heatmap has a negative or NaN entry");
            total += q;
            u += q * spec.u_center(i);
            v += q * spec.v_center(j);
        }
    }
    if (std::abs(total - 1.0) > 1e-6) {
        throw DomainError("heatmap_centroid: heatmap sums to " + std::to_string(total) + ", not 1");
    }
    return {u, v};
}

/// Degrees between two colors.
inline double angular_error(const RgbColor& a, const RgbColor& b) {
    const double na = a.norm(), nb = b.norm();
    if (!(na > 0.0) || !(nb > 0.0)) throw DomainError("angular_error: zero-length color");
    const double c = std::clamp((a.r * b.r + a.g * b.g + a.b * b.b) / (na * nb), -1.0, 1.0);
    return std::acos(c) * 180.0 / std::numbers::pi;
}

/// Query histograms of an image and of its edge image.
struct QueryHistograms {
    UvHistogram n0;
    UvHistogram n1;
};

inline QueryHistograms query_histograms(const RawImage& image, const HistogramSpec& spec) {
    QueryHistograms q{build_histogram(image, spec), build_histogram(edge_image(image), spec)};
    if (q.n0.empty) throw EstimationError("no valid pixels: every pixel is non-positive or clipped");
    return q;
}

template <typename T>
IlluminantEstimate estimate_from_histograms(const QueryHistograms& q, const CameraFingerprint& f, Model<T>& model) {
    IlluminantEstimate e;
    e.heatmap = apply_ccc(q.n0, q.n1, backbone_forward(q.n0, q.n1, f, model));
    e.uv = heatmap_centroid(e.heatmap, model.config.query);
    e.rgb = unit_normalized(uv_to_rgb(e.uv));
    return e;
}

template <typename T>
IlluminantEstimate estimate_illuminant(const RawImage& image, const CameraCalibration& cal, Model<T>& model) {
    return estimate_from_histograms(query_histograms(image, model.config.query), camera_fingerprint(cal, model), model);
}

// ---------------------------------------------------------------------------
// Training

/// One training example. locus indexes TrainingSet::loci so that samples of
/// the same camera share a single fingerprint computation per batch.
struct TrainSample {
    UvHistogram n0;
    UvHistogram n1;
    RgbColor gt;
    std::size_t locus = 0;
};

struct TrainingSet {
    std::vector<TrainSample> samples;
    std::vector<UvHistogram> loci;
};

/// Registers a camera's locus histogram; returns its index.
inline std::size_t add_camera(TrainingSet& set, const CameraCalibration& cal, int cfe_bins) {
    set.loci.push_back(cfe_histogram(cal, cfe_bins));
    return set.loci.size() - 1;
}

/// Adds an image; returns false (and adds nothing) when no pixel is valid.
inline bool add_sample(TrainingSet& set, const RawImage& image, const RgbColor& gt, std::size_t locus,
                       const HistogramSpec& spec) {
    if (locus >= set.loci.size()) throw ConfigError("add_sample: unknown camera locus");
    TrainSample s{build_histogram(image, spec), build_histogram(edge_image(image), spec), gt, locus};
    if (s.n0.empty) return false;
    set.samples.push_back(std::move(s));
    return true;
}

struct TrainConfig {
    int batch_size = 16;
    int epochs = 50;
    double lr = 5e-4;
    int decay_epoch = 25;
    double decay_factor = 0.5;
    std::uint64_t seed = 0;

    void validate() const {
        if (batch_size <= 0 || epochs <= 0 || !(lr > 0.0) || decay_epoch <= 0 || !(decay_factor > 0.0)) {
            throw ConfigError("training configuration values must be positive");
        }
    }
};

struct TrainResult {
    std::vector<double> epoch_loss;
    long steps = 0;
};

/// Mean angular error over a batch, on one tape.
template <typename T>
Var batch_loss(Tape<T>& tape, Model<T>& model, const TrainingSet& data, const std::vector<std::size_t>& batch) {
    std::map<std::size_t, Var> fingerprints;
    std::vector<Var> losses;
    losses.reserve(batch.size());
    for (std::size_t idx : batch) {
        const TrainSample& s = data.samples[idx];
        auto it = fingerprints.find(s.locus);
        if (it == fingerprints.end()) {
            const Var h = tape.constant(histogram_tensor<T>(data.loci.at(s.locus)));
            it = fingerprints.emplace(s.locus, cfe_forward(tape, model.params, model.config.cfe, h)).first;
        }
        losses.push_back(sample_loss(tape, model, tape.constant(histogram_tensor<T>(s.n0)),
                                     tape.constant(histogram_tensor<T>(s.n1)), it->second, s.gt));
    }
    return ops::mean_of(tape, losses);
}

/// Adam on the mean angular error with a one-time learning-rate decay.
/// `on_epoch(epoch, loss)` is called after every epoch when set.
template <typename T>
TrainResult train(Model<T>& model, const TrainingSet& data, const TrainConfig& cfg,
                  const std::function<void(int, double)>& on_epoch = {}) {
    cfg.validate();
    if (data.samples.empty()) throw ConfigError("train: training set is empty");
    for (const auto& s : data.samples) {
        if (s.locus >= data.loci.size()) throw ConfigError("train: sample refers to a missing camera locus");
    }
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(data.samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    TrainResult result;
    AdamOptions opt{.lr = cfg.lr};
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (epoch == cfg.decay_epoch) opt.lr *= cfg.decay_factor;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
        double epoch_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                 order.begin() + static_cast<std::ptrdiff_t>(stop));
            Tape<T> tape;
            const Var loss = batch_loss(tape, model, data, batch);
            const double value = static_cast<double>(tape.value(loss)[0]);
            if (!std::isfinite(value)) {
                throw NumericError("training aborted: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                   ", step " + std::to_string(result.steps + 1));
            }
            tape.backward(loss);
            adam_step(model.params, opt);
            ++result.steps;
            epoch_sum += value * static_cast<double>(batch.size());
        }
        result.epoch_loss.push_back(epoch_sum / static_cast<double>(order.size()));
        if (on_epoch) on_epoch(epoch + 1, result.epoch_loss.back());
    }
    return result;
}

}  // namespace ccmnet
