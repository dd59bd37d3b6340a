#pragma once

// Central finite-difference checking of tape gradients (test-only).

#include <ccmnet/autodiff.hpp>

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace ccmnet::testing {

using Builder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

inline Tensor<double> random_tensor(std::mt19937_64& rng, Shape s, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor<double> t(std::move(s));
    for (auto& v : t.values()) v = d(rng);
    return t;
}

/// Scalar sum(x * weights) for a fixed random weight pattern; turns any
/// tensor-valued op into a loss with a dense, generic upstream gradient.
inline Var project(Tape<double>& tape, Var x, std::uint64_t seed = 99) {
    std::mt19937_64 rng(seed);
    const std::size_t n = tape.value(x).size();
    const Var flat = ops::reshape(tape, x, Shape{static_cast<int>(n)});
    const Var w = tape.constant(random_tensor(rng, {1, static_cast<int>(n)}));
    const Var b = tape.constant(Tensor<double>({1}));
    return ops::linear(tape, flat, w, b);
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst;
};

/// Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-12)
/// per input; returns the worst over all inputs.
inline GradCheckResult grad_check(const Builder& build, const std::vector<Tensor<double>>& inputs,
                                  double step = 1e-5) {
    std::vector<Tensor<double>> analytic;
    {
        Tape<double> tape;
        std::vector<Var> vs;
        for (const auto& t : inputs) vs.push_back(tape.variable(t));
        const Var loss = build(tape, vs);
        tape.backward(loss);
        for (Var v : vs) analytic.push_back(tape.grad(v));
    }
    auto eval = [&](const std::vector<Tensor<double>>& in) {
        Tape<double> tape;
        std::vector<Var> vs;
        for (const auto& t : in) vs.push_back(tape.constant(t));
        return tape.value(build(tape, vs))[0];
    };
    GradCheckResult res;
    std::vector<Tensor<double>> work = inputs;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double orig = work[k][i];
            work[k][i] = orig + step;
            const double fp = eval(work);
            work[k][i] = orig - step;
            const double fm = eval(work);
            work[k][i] = orig;
            const double num = (fp - fm) / (2 * step);
            const double an = analytic[k][i];
            diff2 += (an - num) * (an - num);
            a2 += an * an;
            n2 += num * num;
        }
        const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
        const double rel = std::sqrt(diff2) / denom;
        if (rel > res.max_rel_error) {
            res.max_rel_error = rel;
            res.worst = "input " + std::to_string(k);
        }
    }
    return res;
}

/// Finite-difference check of parameter gradients in a store.
template <typename Forward>
GradCheckResult param_grad_check(ParameterStore<double>& store, Forward forward, double step = 1e-5,
                                 std::size_t max_entries_per_param = 0, double norm_floor = 1e-12) {
    store.zero_grad();
    {
        Tape<double> tape;
        const Var loss = forward(tape, store);
        tape.backward(loss);
    }
    auto eval = [&]() {
        Tape<double> tape;
        return tape.value(forward(tape, store))[0];
    };
    GradCheckResult res;
    for (auto& p : store) {
        const std::size_t n = p.value.size();
        const std::size_t stride = max_entries_per_param && n > max_entries_per_param ? n / max_entries_per_param : 1;
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (std::size_t i = 0; i < n; i += stride) {
            const double orig = p.value[i];
            p.value[i] = orig + step;
            const double fp = eval();
            p.value[i] = orig - step;
            const double fm = eval();
            p.value[i] = orig;
            const double num = (fp - fm) / (2 * step);
            const double an = p.grad[i];
            diff2 += (an - num) * (an - num);
            a2 += an * an;
            n2 += num * num;
        }
        const double denom = std::max({std::sqrt(a2), std::sqrt(n2), norm_floor});
        const double rel = std::sqrt(diff2) / denom;
        if (rel > res.max_rel_error) {
            res.max_rel_error = rel;
            res.worst = p.name;
        }
    }
    store.zero_grad();
    return res;
}

}  // namespace ccmnet::testing
