#pragma once

// Named parameter storage, Adam, and the binary parameter file format:
//
//   "CCMN"  u32 version (=1)  u32 tensor_count
//   per tensor: u16 name_len, name bytes (UTF-8), u8 rank, rank x u32 dims,
//               prod(dims) x f32 values
//
// All integers and floats little-endian.

#include <ccmnet/errors.hpp>
#include <ccmnet/tensor.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace ccmnet {

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> first_moment;
    Tensor<T> second_moment;
    bool has_grad = false;
};

template <typename T>
class ParameterStore {
public:
    ParameterStore() = default;

    Parameter<T>& add(const std::string& name, Tensor<T> value) {
        if (index_.count(name)) throw StateError("duplicate parameter name '" + name + "'");
        index_[name] = params_.size();
        Parameter<T> p;
        p.name = name;
        p.grad = Tensor<T>(value.shape());
        p.first_moment = Tensor<T>(value.shape());
        p.second_moment = Tensor<T>(value.shape());
        p.value = std::move(value);
        params_.push_back(std::move(p));
        return params_.back();
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Parameter<T>& get(const std::string& name) {
        const auto it = index_.find(name);
        if (it == index_.end()) throw StateError("unknown parameter '" + name + "'");
        return params_[it->second];
    }
    const Parameter<T>& get(const std::string& name) const {
        const auto it = index_.find(name);
        if (it == index_.end()) throw StateError("unknown parameter '" + name + "'");
        return params_[it->second];
    }

    std::size_t size() const { return params_.size(); }
    bool empty() const { return params_.empty(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) {
            p.grad.fill(T(0));
            p.has_grad = false;
        }
    }

    /// Copy of the values in another scalar type; optimizer state is reset.
    template <typename U>
    ParameterStore<U> cast() const {
        ParameterStore<U> out;
        for (const auto& p : params_) out.add(p.name, p.value.template cast<U>());
        return out;
    }

    /// Adam steps taken so far.
    long step = 0;

private:
    std::vector<Parameter<T>> params_;
    std::map<std::string, std::size_t> index_;
};

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update; clears gradients afterwards. Every
/// parameter must carry a gradient.
template <typename T>
void adam_step(ParameterStore<T>& store, const AdamOptions& opt) {
    for (const auto& p : store) {
        if (!p.has_grad) throw StateError("adam_step: parameter '" + p.name + "' has no gradient");
    }
    store.step += 1;
    const double t = static_cast<double>(store.step);
    const double c1 = 1.0 - std::pow(opt.beta1, t);
    const double c2 = 1.0 - std::pow(opt.beta2, t);
    for (auto& p : store) {
        T* w = p.value.data();
        const T* g = p.grad.data();
        T* m = p.first_moment.data();
        T* v = p.second_moment.data();
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = opt.beta1 * static_cast<double>(m[i]) + (1.0 - opt.beta1) * gi;
            const double vi = opt.beta2 * static_cast<double>(v[i]) + (1.0 - opt.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double mhat = mi / c1;
            const double vhat = vi / c2;
            w[i] = static_cast<T>(static_cast<double>(w[i]) - opt.lr * mhat / (std::sqrt(vhat) + opt.eps));
        }
    }
    store.zero_grad();
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr char kParamMagic[4] = {'C', 'C', 'M', 'N'};
inline constexpr std::uint32_t kParamVersion = 1;

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { le(v, 2); }
    void u32(std::uint32_t v) { le(v, 4); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}
    std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) {
            throw FormatError("parameter file truncated at byte " + std::to_string(pos_) + " (need " +
                              std::to_string(n) + " more bytes)");
        }
    }
    std::uint64_t le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

}  // namespace detail

template <typename T>
std::vector<std::uint8_t> serialize_params(const ParameterStore<T>& store) {
    detail::ByteWriter w;
    w.bytes(kParamMagic, 4);
    w.u32(kParamVersion);
    w.u32(static_cast<std::uint32_t>(store.size()));
    for (const auto& p : store) {
        if (p.name.size() > 0xFFFF) throw FormatError("parameter name too long: " + p.name);
        w.u16(static_cast<std::uint16_t>(p.name.size()));
        w.bytes(p.name.data(), p.name.size());
        const Shape& s = p.value.shape();
        w.u8(static_cast<std::uint8_t>(s.size()));
        for (int d : s) w.u32(static_cast<std::uint32_t>(d));
        for (const T& v : p.value.values()) w.f32(static_cast<float>(v));
    }
    return w.take();
}

template <typename T>
ParameterStore<T> deserialize_params(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    if (r.remaining() < 4 || r.str(4) != std::string(kParamMagic, 4)) {
        throw FormatError("parameter file: bad magic at byte 0 (expected \"CCMN\")");
    }
    const std::uint32_t version = r.u32();
    if (version != kParamVersion) {
        throw FormatError("parameter file: unsupported version " + std::to_string(version) +
                          " at byte 4");
    }
    const std::uint32_t count = r.u32();
    ParameterStore<T> store;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t at = r.offset();
        const std::uint16_t len = r.u16();
        std::string name = r.str(len);
        const std::uint8_t rank = r.u8();
        Shape shape;
        for (std::uint8_t k = 0; k < rank; ++k) {
            const std::uint32_t d = r.u32();
            if (d == 0 || d > (1u << 28)) {
                throw FormatError("parameter file: invalid dimension for '" + name + "' at byte " +
                                  std::to_string(r.offset() - 4));
            }
            shape.push_back(static_cast<int>(d));
        }
        const std::size_t n = shape_numel(shape);
        if (r.remaining() / 4 < n) {
            throw FormatError("parameter file truncated in tensor '" + name + "' at byte " +
                              std::to_string(r.offset()));
        }
        std::vector<T> data(n);
        for (std::size_t k = 0; k < n; ++k) data[k] = static_cast<T>(r.f32());
        if (store.contains(name)) {
            throw FormatError("parameter file: duplicate tensor '" + name + "' at byte " +
                              std::to_string(at));
        }
        store.add(name, Tensor<T>(std::move(shape), std::move(data)));
    }
    if (r.remaining() != 0) {
        throw FormatError("parameter file: trailing data at byte " + std::to_string(r.offset()));
    }
    return store;
}

}  // namespace ccmnet
