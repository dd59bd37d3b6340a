#pragma once

// Radix-2 FFT and 2-D circular convolution / correlation on real maps.

#include <ccmnet/errors.hpp>

#include <complex>
#include <cstddef>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace ccmnet::fft {

using Complex = std::complex<double>;

inline bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

/// exp(-2 pi i k / n) for k < n / 2 (conjugated for the inverse transform).
inline std::vector<Complex> twiddles(int n, bool inverse) {
    std::vector<Complex> t(static_cast<std::size_t>(n / 2 > 0 ? n / 2 : 1));
    for (int k = 0; k < n / 2; ++k) {
        const double ang = 2.0 * std::numbers::pi * k / n * (inverse ? 1.0 : -1.0);
        t[static_cast<std::size_t>(k)] = Complex(std::cos(ang), std::sin(ang));
    }
    return t;
}

/// Per-thread cache of twiddles().
inline const std::vector<Complex>& cached_twiddles(int n, bool inverse) {
    thread_local std::map<std::pair<int, bool>, std::vector<Complex>> cache;
    auto it = cache.find({n, inverse});
    if (it == cache.end()) it = cache.emplace(std::make_pair(n, inverse), twiddles(n, inverse)).first;
    return it->second;
}

inline Complex mul(Complex a, Complex b) {
    return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

/// In-place iterative FFT over `n` elements spaced `stride` apart. The
/// inverse transform is unscaled; callers divide by n.
inline void transform(Complex* a, int n, std::ptrdiff_t stride, const std::vector<Complex>& tw) {
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i * stride], a[j * stride]);
    }
    for (int len = 2; len <= n; len <<= 1) {
        const int step = n / len;
        for (int i = 0; i < n; i += len) {
            for (int k = 0; k < len / 2; ++k) {
                Complex& lo = a[(i + k) * stride];
                Complex& hi = a[(i + k + len / 2) * stride];
                const Complex t = mul(hi, tw[static_cast<std::size_t>(k * step)]);
                hi = lo - t;
                lo += t;
            }
        }
    }
}

/// 2-D transform of a row-major h x w buffer.
inline void transform2d(std::vector<Complex>& a, int h, int w, bool inverse) {
    if (!is_power_of_two(h) || !is_power_of_two(w)) {
        throw ShapeError("fft: dimensions must be powers of two, got " + std::to_string(h) + "x" +
                         std::to_string(w));
    }
    const auto& tw_row = cached_twiddles(w, inverse);
    const auto& tw_col = cached_twiddles(h, inverse);
    for (int r = 0; r < h; ++r) transform(a.data() + static_cast<std::ptrdiff_t>(r) * w, w, 1, tw_row);
    for (int c = 0; c < w; ++c) transform(a.data() + c, h, w, tw_col);
    if (inverse) {
        const double s = 1.0 / (static_cast<double>(h) * w);
        for (auto& v : a) v *= s;
    }
}

/// Spectra of two real maps from one complex transform of x + i k.
template <typename T>
std::pair<std::vector<Complex>, std::vector<Complex>> forward_pair(const T* x, const T* k, int h, int w) {
    std::vector<Complex> z(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = Complex(static_cast<double>(x[i]), static_cast<double>(k[i]));
    transform2d(z, h, w, false);
    std::vector<Complex> fx(z.size()), fk(z.size());
    for (int r = 0; r < h; ++r) {
        const int rn = (h - r) % h;
        for (int c = 0; c < w; ++c) {
            const int cn = (w - c) % w;
            const Complex a = z[static_cast<std::size_t>(r * w + c)];
            const Complex b = std::conj(z[static_cast<std::size_t>(rn * w + cn)]);
            fx[static_cast<std::size_t>(r * w + c)] = 0.5 * (a + b);
            const Complex d = a - b;
            fk[static_cast<std::size_t>(r * w + c)] = Complex(0.5 * d.imag(), -0.5 * d.real());
        }
    }
    return {std::move(fx), std::move(fk)};
}

/// out[i,j] = sum_{a,b} x[a,b] * k[(i-a) mod h, (j-b) mod w].
template <typename T>
void circular_convolve(const T* x, const T* k, T* out, int h, int w) {
    auto [fx, fk] = forward_pair(x, k, h, w);
    for (std::size_t i = 0; i < fx.size(); ++i) fx[i] = mul(fx[i], fk[i]);
    transform2d(fx, h, w, true);
    for (std::size_t i = 0; i < fx.size(); ++i) out[i] = static_cast<T>(fx[i].real());
}

/// out[i,j] = sum_{a,b} g[a,b] * k[(a-i) mod h, (b-j) mod w]; the adjoint of
/// circular_convolve with respect to its first argument.
template <typename T>
void circular_correlate(const T* g, const T* k, T* out, int h, int w) {
    auto [fg, fk] = forward_pair(g, k, h, w);
    for (std::size_t i = 0; i < fg.size(); ++i) fg[i] = mul(fg[i], std::conj(fk[i]));
    transform2d(fg, h, w, true);
    for (std::size_t i = 0; i < fg.size(); ++i) out[i] = static_cast<T>(fg[i].real());
}

}  // namespace ccmnet::fft
