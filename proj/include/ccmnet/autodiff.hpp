#pragma once

// Reverse-mode differentiation over coarse tensor operations. A Tape records
// every op executed through the free functions below; backward() replays the
// recorded adjoints in reverse order exactly once.

#include <ccmnet/errors.hpp>
#include <ccmnet/fft.hpp>
#include <ccmnet/params.hpp>
#include <ccmnet/tensor.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace ccmnet {

struct Var {
    int id = -1;
};

template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Value that never receives a gradient.
    Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

    /// Leaf whose gradient is kept on the tape (see grad()).
    Var variable(Tensor<T> value) { return push(std::move(value), true, nullptr); }

    /// Leaf bound to a stored parameter. Repeated requests for the same name
    /// on one tape share a node; gradients flow into the store on backward().
    Var param(ParameterStore<T>& store, const std::string& name) {
        Parameter<T>& p = store.get(name);
        const auto key = std::make_pair(static_cast<const void*>(&store), name);
        if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return Var{it->second};
        const Var v = push(p.value, true, nullptr);
        nodes_[static_cast<std::size_t>(v.id)].param = &p;
        param_nodes_[key] = v.id;
        return v;
    }

    Var push(Tensor<T> value, bool requires_grad, BackwardFn fn) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.backward = std::move(fn);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    const Tensor<T>& value(Var v) const { return node(v.id).value; }
    const Shape& shape(Var v) const { return node(v.id).value.shape(); }
    bool requires_grad(Var v) const { return node(v.id).requires_grad; }

    /// Gradient accumulated for v by backward(); zeros if none reached it.
    const Tensor<T>& grad(Var v) {
        Node& n = node(v.id);
        if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
        return n.grad;
    }

    /// Mutable gradient buffer of a node, allocated on first use.
    Tensor<T>& grad_buffer(int id) {
        Node& n = node(id);
        if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
        return n.grad;
    }
    bool has_grad(int id) const { return !node(id).grad.empty(); }

    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    void backward(Var loss) {
        if (consumed_) throw StateError("backward: tape already consumed");
        if (node(loss.id).value.size() != 1) {
            throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(shape(loss)));
        }
        consumed_ = true;
        grad_buffer(loss.id)[0] = T(1);
        for (int id = loss.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
            n.backward(*this, id);
        }
        for (auto& n : nodes_) {
            if (n.param == nullptr) continue;
            Parameter<T>& p = *n.param;
            if (!n.grad.empty()) {
                for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[i];
            }
            p.has_grad = true;
        }
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        BackwardFn backward;
        Parameter<T>* param = nullptr;
    };

    Node& node(int id) {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) throw StateError("invalid tape variable");
        return nodes_[static_cast<std::size_t>(id)];
    }
    const Node& node(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) throw StateError("invalid tape variable");
        return nodes_[static_cast<std::size_t>(id)];
    }

    std::vector<Node> nodes_;
    std::map<std::pair<const void*, std::string>, int> param_nodes_;
    bool consumed_ = false;
};

namespace ops {

namespace detail {

inline void expect_rank(const Shape& s, std::size_t rank, const char* op, const char* arg) {
    if (s.size() != rank) {
        throw ShapeError(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) +
                         ", got " + shape_str(s));
    }
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<RowMatrix<T>> mat(T* p, int rows, int cols) {
    return Eigen::Map<RowMatrix<T>>(p, rows, cols);
}
template <typename T>
Eigen::Map<const RowMatrix<T>> cmat(const T* p, int rows, int cols) {
    return Eigen::Map<const RowMatrix<T>>(p, rows, cols);
}

template <typename T>
bool any_grad(const Tape<T>& tape, std::initializer_list<Var> vs) {
    for (Var v : vs) {
        if (tape.requires_grad(v)) return true;
    }
    return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

/// 3x3 cross-correlation, stride 1, zero padding 1, plus per-channel bias.
/// x: [C_in,H,W], w: [C_out,C_in,3,3], b: [C_out].
template <typename T>
Var conv2d_3x3(Tape<T>& tape, Var x, Var w, Var b) {
    const Shape& xs = tape.shape(x);
    const Shape& ws = tape.shape(w);
    const Shape& bs = tape.shape(b);
    detail::expect_rank(xs, 3, "conv2d_3x3", "input");
    detail::expect_rank(ws, 4, "conv2d_3x3", "weight");
    detail::expect_rank(bs, 1, "conv2d_3x3", "bias");
    const int cin = xs[0], h = xs[1], wd = xs[2], cout = ws[0];
    if (ws[1] != cin || ws[2] != 3 || ws[3] != 3 || bs[0] != cout) {
        throw ShapeError("conv2d_3x3: input " + shape_str(xs) + ", weight " + shape_str(ws) +
                         ", bias " + shape_str(bs) + " disagree");
    }
    const int hw = h * wd;
    const int k = cin * 9;

    // im2col: row (ci*9 + ky*3 + kx) holds the shifted input plane.
    std::vector<T> cols(static_cast<std::size_t>(k) * hw, T(0));
    const T* xv = tape.value(x).data();
    for (int ci = 0; ci < cin; ++ci) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                T* row = cols.data() + static_cast<std::size_t>(ci * 9 + ky * 3 + kx) * hw;
                const int dy = ky - 1, dx = kx - 1;
                const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                for (int yy = 0; yy < h; ++yy) {
                    const int sy = yy + dy;
                    if (sy < 0 || sy >= h) continue;
                    const T* src = xv + static_cast<std::size_t>(ci) * hw + static_cast<std::size_t>(sy) * wd + dx;
                    T* dst = row + static_cast<std::size_t>(yy) * wd;
                    for (int xx = x0; xx < x1; ++xx) dst[xx] = src[xx];
                }
            }
        }
    }

    Tensor<T> out({cout, h, wd});
    {
        const auto wm = detail::cmat<T>(tape.value(w).data(), cout, k);
        const auto cm = detail::cmat<T>(cols.data(), k, hw);
        auto om = detail::mat<T>(out.data(), cout, hw);
        om.noalias() = wm * cm;
        const T* bv = tape.value(b).data();
        for (int co = 0; co < cout; ++co) om.row(co).array() += bv[co];
    }

    const bool rg = detail::any_grad(tape, {x, w, b});
    return tape.push(std::move(out), rg, [x, w, b, cin, h, wd, cout, k, hw, cols = std::move(cols)](Tape<T>& t, int self) {
        const T* g = t.grad_buffer(self).data();
        if (t.requires_grad(b)) {
            T* gb = t.grad_buffer(b.id).data();
            for (int co = 0; co < cout; ++co) {
                T s = T(0);
                const T* gr = g + static_cast<std::size_t>(co) * hw;
                for (int p = 0; p < hw; ++p) s += gr[p];
                gb[co] += s;
            }
        }
        const auto gm = detail::cmat<T>(g, cout, hw);
        if (t.requires_grad(w)) {
            auto gwm = detail::mat<T>(t.grad_buffer(w.id).data(), cout, k);
            gwm.noalias() += gm * detail::cmat<T>(cols.data(), k, hw).transpose();
        }
        if (t.requires_grad(x)) {
            std::vector<T> gcols(static_cast<std::size_t>(k) * hw);
            detail::mat<T>(gcols.data(), k, hw).noalias() = detail::cmat<T>(t.value(w).data(), cout, k).transpose() * gm;
            T* gx = t.grad_buffer(x.id).data();
            for (int ci = 0; ci < cin; ++ci) {
                for (int ky = 0; ky < 3; ++ky) {
                    for (int kx = 0; kx < 3; ++kx) {
                        const T* row = gcols.data() + static_cast<std::size_t>(ci * 9 + ky * 3 + kx) * hw;
                        const int dy = ky - 1, dx = kx - 1;
                        const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                        for (int yy = 0; yy < h; ++yy) {
                            const int sy = yy + dy;
                            if (sy < 0 || sy >= h) continue;
                            T* dst = gx + static_cast<std::size_t>(ci) * hw + static_cast<std::size_t>(sy) * wd + dx;
                            const T* src = row + static_cast<std::size_t>(yy) * wd;
                            for (int xx = x0; xx < x1; ++xx) dst[xx] += src[xx];
                        }
                    }
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Pointwise and pooling

template <typename T>
Var leaky_relu(Tape<T>& tape, Var x, T slope = T(0.01)) {
    const Tensor<T>& xv = tape.value(x);
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : slope * xv[i];
    return tape.push(std::move(out), tape.requires_grad(x), [x, slope](Tape<T>& t, int self) {
        const Tensor<T>& xv2 = t.value(x);
        const Tensor<T>& g = t.grad_buffer(self);
        Tensor<T>& gx = t.grad_buffer(x.id);
        for (std::size_t i = 0; i < xv2.size(); ++i) gx[i] += xv2[i] > T(0) ? g[i] : slope * g[i];
    });
}

/// 2x2 max pooling, stride 2. Ties route to the first maximum in row-major order.
template <typename T>
Var maxpool2x2(Tape<T>& tape, Var x) {
    const Shape& xs = tape.shape(x);
    detail::expect_rank(xs, 3, "maxpool2x2", "input");
    const int c = xs[0], h = xs[1], w = xs[2];
    if (h % 2 != 0 || w % 2 != 0) {
        throw ShapeError("maxpool2x2: spatial dims must be even, got " + shape_str(xs));
    }
    const int oh = h / 2, ow = w / 2;
    Tensor<T> out({c, oh, ow});
    std::vector<int> arg(out.size());
    const T* xv = tape.value(x).data();
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < oh; ++y) {
            for (int xx = 0; xx < ow; ++xx) {
                int best = (ch * h + 2 * y) * w + 2 * xx;
                const int cand[3] = {best + 1, best + w, best + w + 1};
                for (int q : cand) {
                    if (xv[q] > xv[best]) best = q;
                }
                const std::size_t o = static_cast<std::size_t>((ch * oh + y) * ow + xx);
                out[o] = xv[best];
                arg[o] = best;
            }
        }
    }
    return tape.push(std::move(out), tape.requires_grad(x), [x, arg = std::move(arg)](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad_buffer(self);
        Tensor<T>& gx = t.grad_buffer(x.id);
        for (std::size_t i = 0; i < arg.size(); ++i) gx[static_cast<std::size_t>(arg[i])] += g[i];
    });
}

/// Per-channel normalization over spatial positions with learned affine:
/// y = gamma * (x - mean) / sqrt(var + eps) + beta.
template <typename T>
Var channel_norm(Tape<T>& tape, Var x, Var gamma, Var beta, double eps = 1e-5) {
    const Shape& xs = tape.shape(x);
    detail::expect_rank(xs, 3, "channel_norm", "input");
    const int c = xs[0];
    const std::size_t n = static_cast<std::size_t>(xs[1]) * static_cast<std::size_t>(xs[2]);
    if (tape.shape(gamma) != Shape{c} || tape.shape(beta) != Shape{c}) {
        throw ShapeError("channel_norm: affine parameters must have shape [" + std::to_string(c) + "]");
    }
    const T* xv = tape.value(x).data();
    const T* gv = tape.value(gamma).data();
    const T* bv = tape.value(beta).data();
    Tensor<T> out(xs);
    std::vector<T> xhat(tape.value(x).size());
    std::vector<T> inv_std(static_cast<std::size_t>(c));
    for (int ch = 0; ch < c; ++ch) {
        const T* xc = xv + ch * n;
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += static_cast<double>(xc[i]);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = static_cast<double>(xc[i]) - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(ch)] = static_cast<T>(is);
        for (std::size_t i = 0; i < n; ++i) {
            const T xh = static_cast<T>((static_cast<double>(xc[i]) - mean) * is);
            xhat[ch * n + i] = xh;
            out[ch * n + i] = gv[ch] * xh + bv[ch];
        }
    }
    const bool rg = detail::any_grad(tape, {x, gamma, beta});
    return tape.push(std::move(out), rg,
                     [x, gamma, beta, c, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, int self) {
                         const T* g = t.grad_buffer(self).data();
                         for (int ch = 0; ch < c; ++ch) {
                             const T* gc = g + ch * n;
                             const T* xh = xhat.data() + ch * n;
                             double sg = 0.0, sgx = 0.0;
                             for (std::size_t i = 0; i < n; ++i) {
                                 sg += static_cast<double>(gc[i]);
                                 sgx += static_cast<double>(gc[i]) * static_cast<double>(xh[i]);
                             }
                             if (t.requires_grad(gamma)) t.grad_buffer(gamma.id)[static_cast<std::size_t>(ch)] += static_cast<T>(sgx);
                             if (t.requires_grad(beta)) t.grad_buffer(beta.id)[static_cast<std::size_t>(ch)] += static_cast<T>(sg);
                             if (t.requires_grad(x)) {
                                 const double gam = static_cast<double>(t.value(gamma)[static_cast<std::size_t>(ch)]);
                                 const double is = static_cast<double>(inv_std[static_cast<std::size_t>(ch)]);
                                 const double nn = static_cast<double>(n);
                                 T* gx = t.grad_buffer(x.id).data() + ch * n;
                                 for (std::size_t i = 0; i < n; ++i) {
                                     const double d = gam * is / nn *
                                                      (nn * static_cast<double>(gc[i]) - sg - static_cast<double>(xh[i]) * sgx);
                                     gx[i] += static_cast<T>(d);
                                 }
                             }
                         }
                     });
}

/// y = W x + b with x flattened. W: [out, in], b: [out].
template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b) {
    const Shape& ws = tape.shape(w);
    detail::expect_rank(ws, 2, "linear", "weight");
    const int out_dim = ws[0], in_dim = ws[1];
    if (tape.value(x).size() != static_cast<std::size_t>(in_dim) || tape.shape(b) != Shape{out_dim}) {
        throw ShapeError("linear: input " + shape_str(tape.shape(x)) + ", weight " + shape_str(ws) +
                         ", bias " + shape_str(tape.shape(b)) + " disagree");
    }
    const T* xv = tape.value(x).data();
    const T* wv = tape.value(w).data();
    const T* bv = tape.value(b).data();
    Tensor<T> out({out_dim});
    for (int o = 0; o < out_dim; ++o) {
        T s = bv[o];
        const T* wr = wv + static_cast<std::size_t>(o) * in_dim;
        for (int i = 0; i < in_dim; ++i) s += wr[i] * xv[i];
        out[static_cast<std::size_t>(o)] = s;
    }
    const bool rg = detail::any_grad(tape, {x, w, b});
    return tape.push(std::move(out), rg, [x, w, b, out_dim, in_dim](Tape<T>& t, int self) {
        const T* g = t.grad_buffer(self).data();
        if (t.requires_grad(b)) {
            T* gb = t.grad_buffer(b.id).data();
            for (int o = 0; o < out_dim; ++o) gb[o] += g[o];
        }
        if (t.requires_grad(w)) {
            const T* xv2 = t.value(x).data();
            T* gw = t.grad_buffer(w.id).data();
            for (int o = 0; o < out_dim; ++o) {
                T* gr = gw + static_cast<std::size_t>(o) * in_dim;
                for (int i = 0; i < in_dim; ++i) gr[i] += g[o] * xv2[i];
            }
        }
        if (t.requires_grad(x)) {
            const T* wv2 = t.value(w).data();
            T* gx = t.grad_buffer(x.id).data();
            for (int o = 0; o < out_dim; ++o) {
                const T* wr = wv2 + static_cast<std::size_t>(o) * in_dim;
                for (int i = 0; i < in_dim; ++i) gx[i] += g[o] * wr[i];
            }
        }
    });
}

/// Nearest-neighbour x2 upsampling of [C,H,W].
template <typename T>
Var upsample2x(Tape<T>& tape, Var x) {
    const Shape& xs = tape.shape(x);
    detail::expect_rank(xs, 3, "upsample2x", "input");
    const int c = xs[0], h = xs[1], w = xs[2];
    Tensor<T> out({c, 2 * h, 2 * w});
    const T* xv = tape.value(x).data();
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < 2 * h; ++y) {
            for (int xx = 0; xx < 2 * w; ++xx) {
                out[static_cast<std::size_t>((ch * 2 * h + y) * 2 * w + xx)] = xv[(ch * h + y / 2) * w + xx / 2];
            }
        }
    }
    return tape.push(std::move(out), tape.requires_grad(x), [x, c, h, w](Tape<T>& t, int self) {
        const T* g = t.grad_buffer(self).data();
        T* gx = t.grad_buffer(x.id).data();
        for (int ch = 0; ch < c; ++ch) {
            for (int y = 0; y < 2 * h; ++y) {
                for (int xx = 0; xx < 2 * w; ++xx) {
                    gx[(ch * h + y / 2) * w + xx / 2] += g[(ch * 2 * h + y) * 2 * w + xx];
                }
            }
        }
    });
}

/// Concatenates [C_i,H,W] tensors along channels.
template <typename T>
Var concat_channels(Tape<T>& tape, const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: no inputs");
    const Shape& s0 = tape.shape(xs[0]);
    detail::expect_rank(s0, 3, "concat_channels", "input");
    int total = 0;
    bool rg = false;
    for (Var v : xs) {
        const Shape& s = tape.shape(v);
        detail::expect_rank(s, 3, "concat_channels", "input");
        if (s[1] != s0[1] || s[2] != s0[2]) {
            throw ShapeError("concat_channels: spatial dims differ: " + shape_str(s0) + " vs " + shape_str(s));
        }
        total += s[0];
        rg = rg || tape.requires_grad(v);
    }
    Tensor<T> out({total, s0[1], s0[2]});
    std::size_t off = 0;
    for (Var v : xs) {
        const Tensor<T>& xv = tape.value(v);
        std::copy(xv.values().begin(), xv.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(off));
        off += xv.size();
    }
    return tape.push(std::move(out), rg, [xs](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad_buffer(self);
        std::size_t o = 0;
        for (Var v : xs) {
            const std::size_t n = t.value(v).size();
            if (t.requires_grad(v)) {
                Tensor<T>& gx = t.grad_buffer(v.id);
                for (std::size_t i = 0; i < n; ++i) gx[i] += g[o + i];
            }
            o += n;
        }
    });
}

/// Softmax over every element jointly (the whole uv plane).
template <typename T>
Var softmax2d(Tape<T>& tape, Var x) {
    const Tensor<T>& xv = tape.value(x);
    double mx = -std::numeric_limits<double>::infinity();
    for (const T& v : xv.values()) mx = std::max(mx, static_cast<double>(v));
    double z = 0.0;
    std::vector<double> e(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        e[i] = std::exp(static_cast<double>(xv[i]) - mx);
        z += e[i];
    }
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = static_cast<T>(e[i] / z);
    return tape.push(std::move(out), tape.requires_grad(x), [x](Tape<T>& t, int self) {
        const Tensor<T>& p = t.value(Var{self});
        const Tensor<T>& g = t.grad_buffer(self);
        double dot = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) dot += static_cast<double>(g[i]) * static_cast<double>(p[i]);
        Tensor<T>& gx = t.grad_buffer(x.id);
        for (std::size_t i = 0; i < p.size(); ++i) {
            gx[i] += static_cast<T>(static_cast<double>(p[i]) * (static_cast<double>(g[i]) - dot));
        }
    });
}

/// Wrap-around 2-D convolution of two [H,W] maps through the FFT.
template <typename T>
Var circular_conv_fft(Tape<T>& tape, Var n, Var f) {
    const Shape& ns = tape.shape(n);
    const Shape& fs = tape.shape(f);
    detail::expect_rank(ns, 2, "circular_conv_fft", "histogram");
    if (ns != fs) {
        throw ShapeError("circular_conv_fft: shapes differ: " + shape_str(ns) + " vs " + shape_str(fs));
    }
    const int h = ns[0], w = ns[1];
    Tensor<T> out(ns);
    fft::circular_convolve(tape.value(n).data(), tape.value(f).data(), out.data(), h, w);
    const bool rg = detail::any_grad(tape, {n, f});
    return tape.push(std::move(out), rg, [n, f, h, w](Tape<T>& t, int self) {
        const T* g = t.grad_buffer(self).data();
        std::vector<T> tmp(static_cast<std::size_t>(h) * w);
        if (t.requires_grad(n)) {
            fft::circular_correlate(g, t.value(f).data(), tmp.data(), h, w);
            T* gn = t.grad_buffer(n.id).data();
            for (std::size_t i = 0; i < tmp.size(); ++i) gn[i] += tmp[i];
        }
        if (t.requires_grad(f)) {
            fft::circular_correlate(g, t.value(n).data(), tmp.data(), h, w);
            T* gf = t.grad_buffer(f.id).data();
            for (std::size_t i = 0; i < tmp.size(); ++i) gf[i] += tmp[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Structural and reduction ops

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
    if (tape.shape(a) != tape.shape(b)) {
        throw ShapeError("add: shapes differ: " + shape_str(tape.shape(a)) + " vs " + shape_str(tape.shape(b)));
    }
    Tensor<T> out = tape.value(a);
    const Tensor<T>& bv = tape.value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return tape.push(std::move(out), detail::any_grad(tape, {a, b}), [a, b](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad_buffer(self);
        for (Var v : {a, b}) {
            if (!t.requires_grad(v)) continue;
            Tensor<T>& gv = t.grad_buffer(v.id);
            for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
        }
    });
}

template <typename T>
Var scale(Tape<T>& tape, Var x, T s) {
    Tensor<T> out = tape.value(x);
    for (auto& v : out.values()) v *= s;
    return tape.push(std::move(out), tape.requires_grad(x), [x, s](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad_buffer(self);
        Tensor<T>& gx = t.grad_buffer(x.id);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
    });
}

template <typename T>
Var sum(Tape<T>& tape, Var x) {
    double s = 0.0;
    for (const T& v : tape.value(x).values()) s += static_cast<double>(v);
    return tape.push(Tensor<T>({1}, static_cast<T>(s)), tape.requires_grad(x), [x](Tape<T>& t, int self) {
        const T g = t.grad_buffer(self)[0];
        for (auto& v : t.grad_buffer(x.id).values()) v += g;
    });
}

/// Arithmetic mean of scalar variables.
template <typename T>
Var mean_of(Tape<T>& tape, const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("mean_of: no inputs");
    double s = 0.0;
    bool rg = false;
    for (Var v : xs) {
        if (tape.value(v).size() != 1) throw ShapeError("mean_of: inputs must be scalars");
        s += static_cast<double>(tape.value(v)[0]);
        rg = rg || tape.requires_grad(v);
    }
    const double inv = 1.0 / static_cast<double>(xs.size());
    return tape.push(Tensor<T>({1}, static_cast<T>(s * inv)), rg, [xs, inv](Tape<T>& t, int self) {
        const T g = static_cast<T>(static_cast<double>(t.grad_buffer(self)[0]) * inv);
        for (Var v : xs) {
            if (t.requires_grad(v)) t.grad_buffer(v.id)[0] += g;
        }
    });
}

template <typename T>
Var reshape(Tape<T>& tape, Var x, Shape s) {
    Tensor<T> out = tape.value(x).reshaped(std::move(s));
    return tape.push(std::move(out), tape.requires_grad(x), [x](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad_buffer(self);
        Tensor<T>& gx = t.grad_buffer(x.id);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

/// Channel c of a [C,H,W] tensor as an [H,W] map.
template <typename T>
Var channel(Tape<T>& tape, Var x, int c) {
    const Shape& xs = tape.shape(x);
    detail::expect_rank(xs, 3, "channel", "input");
    if (c < 0 || c >= xs[0]) throw ShapeError("channel: index " + std::to_string(c) + " out of range for " + shape_str(xs));
    const std::size_t n = static_cast<std::size_t>(xs[1]) * static_cast<std::size_t>(xs[2]);
    const auto& xv = tape.value(x).values();
    std::vector<T> data(xv.begin() + static_cast<std::ptrdiff_t>(c * n), xv.begin() + static_cast<std::ptrdiff_t>((c + 1) * n));
    return tape.push(Tensor<T>({xs[1], xs[2]}, std::move(data)), tape.requires_grad(x), [x, c, n](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad_buffer(self);
        Tensor<T>& gx = t.grad_buffer(x.id);
        for (std::size_t i = 0; i < n; ++i) gx[c * n + i] += g[i];
    });
}

/// Repeats a [C] vector over an h x w grid: [C,h,w].
template <typename T>
Var tile(Tape<T>& tape, Var v, int h, int w) {
    const Shape& vs = tape.shape(v);
    detail::expect_rank(vs, 1, "tile", "input");
    if (h <= 0 || w <= 0) throw ShapeError("tile: grid must be positive");
    const int c = vs[0];
    const std::size_t n = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    Tensor<T> out({c, h, w});
    for (int ch = 0; ch < c; ++ch) {
        std::fill(out.data() + ch * n, out.data() + (ch + 1) * n, tape.value(v)[static_cast<std::size_t>(ch)]);
    }
    return tape.push(std::move(out), tape.requires_grad(v), [v, c, n](Tape<T>& t, int self) {
        const T* g = t.grad_buffer(self).data();
        Tensor<T>& gv = t.grad_buffer(v.id);
        for (int ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(g[ch * n + i]);
            gv[static_cast<std::size_t>(ch)] += static_cast<T>(s);
        }
    });
}

/// Expected coordinate under a normalized [H,W] map: (sum_ij p*row_coord[i],
/// sum_ij p*col_coord[j]) as a [2] tensor.
template <typename T>
Var weighted_centroid(Tape<T>& tape, Var p, std::vector<double> row_coord, std::vector<double> col_coord) {
    const Shape& ps = tape.shape(p);
    detail::expect_rank(ps, 2, "weighted_centroid", "map");
    if (row_coord.size() != static_cast<std::size_t>(ps[0]) || col_coord.size() != static_cast<std::size_t>(ps[1])) {
        throw ShapeError("weighted_centroid: coordinate vectors do not match " + shape_str(ps));
    }
    const int h = ps[0], w = ps[1];
    const T* pv = tape.value(p).data();
    double a = 0.0, b = 0.0;
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            const double q = static_cast<double>(pv[i * w + j]);
            a += q * row_coord[static_cast<std::size_t>(i)];
            b += q * col_coord[static_cast<std::size_t>(j)];
        }
    }
    Tensor<T> out({2});
    out[0] = static_cast<T>(a);
    out[1] = static_cast<T>(b);
    return tape.push(std::move(out), tape.requires_grad(p),
                     [p, h, w, rc = std::move(row_coord), cc = std::move(col_coord)](Tape<T>& t, int self) {
                         const double ga = static_cast<double>(t.grad_buffer(self)[0]);
                         const double gb = static_cast<double>(t.grad_buffer(self)[1]);
                         T* gp = t.grad_buffer(p.id).data();
                         for (int i = 0; i < h; ++i) {
                             for (int j = 0; j < w; ++j) {
                                 gp[i * w + j] += static_cast<T>(ga * rc[static_cast<std::size_t>(i)] +
                                                                 gb * cc[static_cast<std::size_t>(j)]);
                             }
                         }
                     });
}

/// Angular error in degrees between (exp(-u), 1, exp(-v)) and a fixed
/// reference color. uv: [2] tensor.
template <typename T>
Var angular_error_uv(Tape<T>& tape, Var uv, const std::array<double, 3>& reference) {
    if (tape.value(uv).size() != 2) throw ShapeError("angular_error_uv: uv must have 2 elements");
    const double rn = std::sqrt(reference[0] * reference[0] + reference[1] * reference[1] + reference[2] * reference[2]);
    if (!(rn > 0.0)) throw DomainError("angular_error_uv: zero reference color");
    const double u = static_cast<double>(tape.value(uv)[0]);
    const double v = static_cast<double>(tape.value(uv)[1]);
    const double a[3] = {std::exp(-u), 1.0, std::exp(-v)};
    const double an = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
    const double dot = a[0] * reference[0] + a[1] * reference[1] + a[2] * reference[2];
    const double c = std::clamp(dot / (an * rn), -1.0, 1.0);
    const double deg = std::acos(c) * 180.0 / std::numbers::pi;
    return tape.push(Tensor<T>({1}, static_cast<T>(deg)), tape.requires_grad(uv),
                     [uv, reference, rn, a0 = a[0], a2 = a[2], an, c](Tape<T>& t, int self) {
                         const double g = static_cast<double>(t.grad_buffer(self)[0]);
                         // d deg / d c, with the singularity at c = +-1 capped.
                         const double s = std::sqrt(std::max(1.0 - c * c, 1e-12));
                         const double ddeg_dc = -180.0 / std::numbers::pi / s;
                         const double dc_da0 = reference[0] / (an * rn) - c * a0 / (an * an);
                         const double dc_da2 = reference[2] / (an * rn) - c * a2 / (an * an);
                         T* gu = t.grad_buffer(uv.id).data();
                         gu[0] += static_cast<T>(g * ddeg_dc * dc_da0 * (-a0));
                         gu[1] += static_cast<T>(g * ddeg_dc * dc_da2 * (-a2));
                     });
}

}  // namespace ops
}  // namespace ccmnet
