#pragma once

// Camera fingerprint embedding: the camera's view of the Planckian locus,
// histogrammed in uv and compressed by a small convolutional encoder.

#include <ccmnet/autodiff.hpp>
#include <ccmnet/colorimetry.hpp>
#include <ccmnet/histogram.hpp>
#include <ccmnet/random.hpp>

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace ccmnet {

/// Camera-native colors of the locus samples, in sample order.
using GuidanceIlluminants = std::vector<RgbColor>;

struct CameraFingerprint {
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
    friend bool operator==(const CameraFingerprint&, const CameraFingerprint&) = default;
};

struct CfeEncoderConfig {
    int bins = 64;
    std::array<int, 4> widths{8, 16, 32, 64};
    int hidden = 64;
    int output = 8;

    void validate() const {
        if (bins < 32 || bins % 16 != 0) {
            throw ConfigError("fingerprint encoder: bins must be a multiple of 16 and at least 32, got " +
                              std::to_string(bins));
        }
        for (int w : widths) {
            if (w <= 0) throw ConfigError("fingerprint encoder: channel widths must be positive");
        }
        if (hidden <= 0 || output <= 0) throw ConfigError("fingerprint encoder: hidden and output sizes must be positive");
    }
    int flat_size() const { return widths[3] * (bins / 16) * (bins / 16); }
    friend bool operator==(const CfeEncoderConfig&, const CfeEncoderConfig&) = default;
};

inline GuidanceIlluminants guidance_illuminants(const CameraCalibration& cal,
                                                const PlanckianSampleSet& samples = planckian_xyz_samples()) {
    GuidanceIlluminants out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(raw_from_xyz(s.xyz, s.cct, cal));
    return out;
}

/// Unit-weight locus histogram over [-0.5, 1.5]^2, normalized.
inline UvHistogram cfe_histogram(const GuidanceIlluminants& g, int bins = 64) {
    const HistogramSpec spec = HistogramSpec::locus(bins);
    spec.validate();
    UvHistogram h(spec);
    for (const auto& c : g) {
        if (!c.all_positive() || !c.all_finite()) {
            throw DomainError("cfe_histogram: guidance illuminant has a non-positive channel");
        }
        const UvChroma p = rgb_to_uv(c);
        h.at(spec.u_bin(p.u), spec.v_bin(p.v)) += 1.0;
        h.empty = false;
    }
    h.normalize();
    return h;
}

inline UvHistogram cfe_histogram(const CameraCalibration& cal, int bins = 64) {
    return cfe_histogram(guidance_illuminants(cal), bins);
}

template <typename T>
Tensor<T> histogram_tensor(const UvHistogram& h) {
    Tensor<T> t({h.spec.bins, h.spec.bins});
    for (std::size_t i = 0; i < h.data.size(); ++i) t[i] = static_cast<T>(h.data[i]);
    return t;
}

namespace detail {

template <typename T>
void add_conv(ParameterStore<T>& store, const std::string& name, int cin, int cout, Rng& rng) {
    Tensor<T> w({cout, cin, 3, 3});
    const double sd = std::sqrt(2.0 / (cin * 9));
    for (auto& v : w.values()) v = static_cast<T>(rng.normal(0.0, sd));
    store.add(name + ".w", std::move(w));
    store.add(name + ".b", Tensor<T>({cout}));
}

template <typename T>
void add_linear(ParameterStore<T>& store, const std::string& name, int in, int out, Rng& rng) {
    Tensor<T> w({out, in});
    const double sd = std::sqrt(2.0 / in);
    for (auto& v : w.values()) v = static_cast<T>(rng.normal(0.0, sd));
    store.add(name + ".w", std::move(w));
    store.add(name + ".b", Tensor<T>({out}));
}

template <typename T>
Var conv(Tape<T>& tape, ParameterStore<T>& store, const std::string& name, Var x) {
    return ops::conv2d_3x3(tape, x, tape.param(store, name + ".w"), tape.param(store, name + ".b"));
}

template <typename T>
Var double_conv(Tape<T>& tape, ParameterStore<T>& store, const std::string& name, Var x) {
    x = ops::leaky_relu(tape, conv(tape, store, name + ".conv1", x));
    return ops::leaky_relu(tape, conv(tape, store, name + ".conv2", x));
}

}  // namespace detail

/// Kaiming fan-in normal weights, zero biases, unit norm gains.
template <typename T>
void init_cfe_params(ParameterStore<T>& store, const CfeEncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    int cin = 1;
    for (int k = 0; k < 4; ++k) {
        const std::string name = "cfe.block" + std::to_string(k);
        detail::add_conv(store, name + ".conv1", cin, cfg.widths[k], rng);
        detail::add_conv(store, name + ".conv2", cfg.widths[k], cfg.widths[k], rng);
        store.add(name + ".norm.gamma", Tensor<T>({cfg.widths[k]}, T(1)));
        store.add(name + ".norm.beta", Tensor<T>({cfg.widths[k]}));
        cin = cfg.widths[k];
    }
    detail::add_linear(store, "cfe.fc1", cfg.flat_size(), cfg.hidden, rng);
    detail::add_linear(store, "cfe.fc2", cfg.hidden, cfg.output, rng);
}

/// Encoder on a [bins, bins] locus histogram; returns an [output] node.
template <typename T>
Var cfe_forward(Tape<T>& tape, ParameterStore<T>& store, const CfeEncoderConfig& cfg, Var hist) {
    const Shape& hs = tape.shape(hist);
    if (hs.size() != 2 || hs[0] != cfg.bins || hs[1] != cfg.bins) {
        throw ShapeError("fingerprint encoder expects a [" + std::to_string(cfg.bins) + "," +
                         std::to_string(cfg.bins) + "] histogram, got " + shape_str(hs));
    }
    Var x = ops::reshape(tape, hist, Shape{1, cfg.bins, cfg.bins});
    for (int k = 0; k < 4; ++k) {
        const std::string name = "cfe.block" + std::to_string(k);
        x = ops::maxpool2x2(tape, detail::double_conv(tape, store, name, x));
        x = ops::channel_norm(tape, x, tape.param(store, name + ".norm.gamma"), tape.param(store, name + ".norm.beta"));
    }
    x = ops::leaky_relu(tape, ops::linear(tape, x, tape.param(store, "cfe.fc1.w"), tape.param(store, "cfe.fc1.b")));
    return ops::linear(tape, x, tape.param(store, "cfe.fc2.w"), tape.param(store, "cfe.fc2.b"));
}

template <typename T>
CameraFingerprint encode_fingerprint(const UvHistogram& h, ParameterStore<T>& store, const CfeEncoderConfig& cfg) {
    if (h.spec.bins != cfg.bins) {
        throw ShapeError("encode_fingerprint: histogram has " + std::to_string(h.spec.bins) + " bins, encoder expects " +
                         std::to_string(cfg.bins));
    }
    Tape<T> tape;
    const Var f = cfe_forward(tape, store, cfg, tape.constant(histogram_tensor<T>(h)));
    CameraFingerprint out;
    for (T v : tape.value(f).values()) out.values.push_back(static_cast<double>(v));
    return out;
}

/// [C, bins, bins] tensor, channel c constant at f[c].
inline Tensor<double> tile_fingerprint(const CameraFingerprint& f, int bins) {
    if (bins <= 0) throw DomainError("tile_fingerprint: bins must be positive");
    const int c = static_cast<int>(f.size());
    Tensor<double> out({c, bins, bins});
    const std::size_t n = static_cast<std::size_t>(bins) * static_cast<std::size_t>(bins);
    for (int ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < n; ++i) out[static_cast<std::size_t>(ch) * n + i] = f.values[static_cast<std::size_t>(ch)];
    }
    return out;
}

}  // namespace ccmnet
