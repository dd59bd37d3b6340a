#include <ccmnet/autodiff.hpp>

#include "gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace ccmnet {
namespace {

using testing::grad_check;
using testing::project;
using testing::random_tensor;

// Direct O(H^2 W^2) wrap-around convolution.
Tensor<double> direct_circular(const Tensor<double>& n, const Tensor<double>& f) {
    const int h = n.dim(0), w = n.dim(1);
    Tensor<double> out({h, w});
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            double s = 0.0;
            for (int a = 0; a < h; ++a) {
                for (int b = 0; b < w; ++b) {
                    s += n[static_cast<std::size_t>(a * w + b)] *
                         f[static_cast<std::size_t>(((i - a + h) % h) * w + (j - b + w) % w)];
                }
            }
            out[static_cast<std::size_t>(i * w + j)] = s;
        }
    }
    return out;
}

double rel_error(const Tensor<double>& a, const Tensor<double>& b) {
    double d = 0.0, n = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d += (a[i] - b[i]) * (a[i] - b[i]);
        n += b[i] * b[i];
    }
    return std::sqrt(d) / std::max(std::sqrt(n), 1e-300);
}

TEST(Conv2d, IdentityKernel) {
    std::mt19937_64 rng(1);
    Tape<double> tape;
    const auto xin = random_tensor(rng, {2, 5, 4});
    Tensor<double> w({2, 2, 3, 3});
    w[(0 * 2 + 0) * 9 + 4] = 1.0;
    w[(1 * 2 + 1) * 9 + 4] = 1.0;
    const Var y = ops::conv2d_3x3(tape, tape.constant(xin), tape.constant(w), tape.constant(Tensor<double>({2})));
    EXPECT_EQ(tape.value(y), xin);
}

TEST(Conv2d, OnesKernelOnConstantInput) {
    Tape<double> tape;
    const Var y = ops::conv2d_3x3(tape, tape.constant(Tensor<double>({1, 5, 5}, 1.0)),
                                  tape.constant(Tensor<double>({1, 1, 3, 3}, 1.0)),
                                  tape.constant(Tensor<double>({1})));
    const auto& v = tape.value(y);
    EXPECT_EQ(v[2 * 5 + 2], 9.0);
    EXPECT_EQ(v[0], 4.0);
    EXPECT_EQ(v[4], 4.0);
    EXPECT_EQ(v[24], 4.0);
    EXPECT_EQ(v[2], 6.0);
}

TEST(Conv2d, ShapeMismatchNamesDimensions) {
    Tape<double> tape;
    try {
        ops::conv2d_3x3(tape, tape.constant(Tensor<double>({2, 4, 4})),
                        tape.constant(Tensor<double>({1, 3, 3, 3})), tape.constant(Tensor<double>({1})));
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("[2,4,4]"), std::string::npos);
    }
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(2);
    const auto r = grad_check(
        [](Tape<double>& t, const std::vector<Var>& v) { return project(t, ops::conv2d_3x3(t, v[0], v[1], v[2])); },
        {random_tensor(rng, {3, 6, 5}), random_tensor(rng, {4, 3, 3, 3}), random_tensor(rng, {4})});
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;

    // Weight gradient of sum(output).
    const auto s = grad_check(
        [](Tape<double>& t, const std::vector<Var>& v) {
            return ops::sum(t, ops::conv2d_3x3(t, t.constant(Tensor<double>({2, 4, 4}, 0.5)), v[0], v[1]));
        },
        {random_tensor(rng, {3, 2, 3, 3}), random_tensor(rng, {3})});
    EXPECT_LT(s.max_rel_error, 1e-4) << s.worst;
}

TEST(PointwiseOps, LeakyReluDefinition) {
    Tape<double> tape;
    const Var y = ops::leaky_relu(tape, tape.constant(Tensor<double>({2}, std::vector<double>{-1.0, 2.0})));
    EXPECT_DOUBLE_EQ(tape.value(y)[0], -0.01);
    EXPECT_DOUBLE_EQ(tape.value(y)[1], 2.0);
}

TEST(PointwiseOps, MaxPoolRoutesGradientToArgmax) {
    Tape<double> tape;
    const Var x = tape.variable(Tensor<double>({1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
    const Var y = ops::maxpool2x2(tape, x);
    EXPECT_EQ(tape.value(y)[0], 4.0);
    tape.backward(ops::sum(tape, y));
    EXPECT_EQ(tape.grad(x), (Tensor<double>({1, 2, 2}, std::vector<double>{0, 0, 0, 1})));
}

TEST(PointwiseOps, SoftmaxUniformAndShiftInvariant) {
    Tape<double> tape;
    const Var p = ops::softmax2d(tape, tape.constant(Tensor<double>({4, 4}, 3.0)));
    for (double v : tape.value(p).values()) EXPECT_NEAR(v, 1.0 / 16, 1e-15);

    std::mt19937_64 rng(3);
    auto logits = random_tensor(rng, {8, 8}, -5, 5);
    auto shifted = logits;
    for (auto& v : shifted.values()) v += 7.25;
    const Var a = ops::softmax2d(tape, tape.constant(logits));
    const Var b = ops::softmax2d(tape, tape.constant(shifted));
    double total = 0.0;
    for (std::size_t i = 0; i < 64; ++i) {
        EXPECT_NEAR(tape.value(a)[i], tape.value(b)[i], 1e-15);
        total += tape.value(a)[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST(PointwiseOps, AllDifferentiableOpsPassFiniteDifferences) {
    std::mt19937_64 rng(4);
    struct Case {
        const char* name;
        testing::Builder build;
        std::vector<Tensor<double>> inputs;
    };
    std::vector<Case> cases;
    cases.push_back({"leaky_relu", [](Tape<double>& t, const std::vector<Var>& v) { return project(t, ops::leaky_relu(t, v[0])); },
                     {random_tensor(rng, {2, 3, 4})}});
    cases.push_back({"maxpool2x2", [](Tape<double>& t, const std::vector<Var>& v) { return project(t, ops::maxpool2x2(t, v[0])); },
                     {random_tensor(rng, {3, 4, 6})}});
    cases.push_back({"channel_norm",
                     [](Tape<double>& t, const std::vector<Var>& v) { return project(t, ops::channel_norm(t, v[0], v[1], v[2])); },
                     {random_tensor(rng, {3, 4, 4}), random_tensor(rng, {3}), random_tensor(rng, {3})}});
    cases.push_back({"linear", [](Tape<double>& t, const std::vector<Var>& v) { return project(t, ops::linear(t, v[0], v[1], v[2])); },
                     {random_tensor(rng, {2, 3}), random_tensor(rng, {4, 6}), random_tensor(rng, {4})}});
    cases.push_back({"upsample2x", [](Tape<double>& t, const std::vector<Var>& v) { return project(t, ops::upsample2x(t, v[0])); },
                     {random_tensor(rng, {2, 3, 2})}});
    cases.push_back({"concat_channels",
                     [](Tape<double>& t, const std::vector<Var>& v) { return project(t, ops::concat_channels(t, {v[0], v[1]})); },
                     {random_tensor(rng, {1, 3, 3}), random_tensor(rng, {2, 3, 3})}});
    cases.push_back({"softmax2d", [](Tape<double>& t, const std::vector<Var>& v) { return project(t, ops::softmax2d(t, v[0])); },
                     {random_tensor(rng, {4, 4}, -2, 2)}});
    cases.push_back({"circular_conv_fft",
                     [](Tape<double>& t, const std::vector<Var>& v) { return project(t, ops::circular_conv_fft(t, v[0], v[1])); },
                     {random_tensor(rng, {4, 8}), random_tensor(rng, {4, 8})}});
    cases.push_back({"tile", [](Tape<double>& t, const std::vector<Var>& v) { return project(t, ops::tile(t, v[0], 3, 2)); },
                     {random_tensor(rng, {4})}});
    cases.push_back({"channel", [](Tape<double>& t, const std::vector<Var>& v) { return project(t, ops::channel(t, v[0], 1)); },
                     {random_tensor(rng, {3, 2, 2})}});
    cases.push_back({"add_scale",
                     [](Tape<double>& t, const std::vector<Var>& v) { return project(t, ops::scale(t, ops::add(t, v[0], v[1]), 1.7)); },
                     {random_tensor(rng, {5}), random_tensor(rng, {5})}});
    cases.push_back({"weighted_centroid",
                     [](Tape<double>& t, const std::vector<Var>& v) {
                         return project(t, ops::weighted_centroid(t, v[0], {-1.0, 0.0, 0.5, 2.0}, {0.3, -0.7, 1.1}));
                     },
                     {random_tensor(rng, {4, 3})}});
    cases.push_back({"angular_error_uv",
                     [](Tape<double>& t, const std::vector<Var>& v) {
                         return ops::angular_error_uv(t, v[0], std::array<double, 3>{0.5, 1.0, 0.8});
                     },
                     {Tensor<double>({2}, std::vector<double>{0.1, -0.4})}});
    cases.push_back({"mean_of",
                     [](Tape<double>& t, const std::vector<Var>& v) {
                         return ops::mean_of(t, {ops::sum(t, v[0]), ops::sum(t, ops::leaky_relu(t, v[0]))});
                     },
                     {random_tensor(rng, {6})}});
    for (const auto& c : cases) {
        const auto r = grad_check(c.build, c.inputs);
        EXPECT_LT(r.max_rel_error, 1e-4) << c.name << " " << r.worst;
    }
}

TEST(CircularConvFft, DeltaIsIdentity) {
    std::mt19937_64 rng(5);
    const auto n = random_tensor(rng, {8, 8});
    Tensor<double> delta({8, 8});
    delta[0] = 1.0;
    Tape<double> tape;
    const Var y = ops::circular_conv_fft(tape, tape.constant(n), tape.constant(delta));
    for (std::size_t i = 0; i < n.size(); ++i) EXPECT_NEAR(tape.value(y)[i], n[i], 1e-10);
}

TEST(CircularConvFft, ShiftedDeltaShifts) {
    std::mt19937_64 rng(6);
    const auto n = random_tensor(rng, {8, 4});
    Tensor<double> delta({8, 4});
    delta[2 * 4 + 3] = 1.0;
    Tape<double> tape;
    const Var y = ops::circular_conv_fft(tape, tape.constant(n), tape.constant(delta));
    for (int i = 0; i < 8; ++i) {
        for (int j = 0; j < 4; ++j) {
            const double expect = n[static_cast<std::size_t>(((i - 2 + 8) % 8) * 4 + (j - 3 + 4) % 4)];
            EXPECT_NEAR(tape.value(y)[static_cast<std::size_t>(i * 4 + j)], expect, 1e-12);
        }
    }
}

TEST(CircularConvFft, MatchesDirectConvolution) {
    std::mt19937_64 rng(7);
    for (int h : {1, 2, 4, 8, 16}) {
        for (int w : {1, 2, 4, 8, 16}) {
            const auto n = random_tensor(rng, {h, w});
            const auto f = random_tensor(rng, {h, w});
            Tape<double> tape;
            const Var y = ops::circular_conv_fft(tape, tape.constant(n), tape.constant(f));
            EXPECT_LT(rel_error(tape.value(y), direct_circular(n, f)), 1e-10) << h << "x" << w;
        }
    }
}

TEST(CircularConvFft, RejectsMismatchAndNonPowerOfTwo) {
    Tape<double> tape;
    EXPECT_THROW(ops::circular_conv_fft(tape, tape.constant(Tensor<double>({4, 4})), tape.constant(Tensor<double>({4, 8}))),
                 ShapeError);
    EXPECT_THROW(ops::circular_conv_fft(tape, tape.constant(Tensor<double>({3, 4})), tape.constant(Tensor<double>({3, 4}))),
                 ShapeError);
}

TEST(Backward, SumGivesOnes) {
    Tape<double> tape;
    const Var x = tape.variable(Tensor<double>({3, 2}, 0.25));
    tape.backward(ops::sum(tape, x));
    for (double g : tape.grad(x).values()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SecondBackwardIsStateError) {
    Tape<double> tape;
    const Var x = tape.variable(Tensor<double>({2}, 1.0));
    const Var l = ops::sum(tape, x);
    tape.backward(l);
    EXPECT_THROW(tape.backward(l), StateError);
}

TEST(Backward, ConstantGraphGivesZeroGradients) {
    ParameterStore<double> store;
    store.add("w", Tensor<double>({2}, 3.0));
    Tape<double> tape;
    const Var w = tape.param(store, "w");
    (void)w;
    const Var l = ops::sum(tape, tape.constant(Tensor<double>({1})));
    tape.backward(l);
    EXPECT_TRUE(store.get("w").has_grad);
    for (double g : store.get("w").grad.values()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, NonScalarLossRejected) {
    Tape<double> tape;
    const Var x = tape.variable(Tensor<double>({2}, 1.0));
    EXPECT_THROW(tape.backward(x), ShapeError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    ParameterStore<double> store;
    store.add("p", Tensor<double>({1}, 1.0));
    store.get("p").grad[0] = 1.0;
    store.get("p").has_grad = true;
    adam_step(store, {.lr = 0.1});
    EXPECT_NEAR(store.get("p").value[0], 0.9, 1e-7);
    EXPECT_FALSE(store.get("p").has_grad);
    EXPECT_EQ(store.get("p").grad[0], 0.0);
}

TEST(Adam, ZeroGradientLeavesParameter) {
    ParameterStore<double> store;
    store.add("p", Tensor<double>({2}, 0.5));
    store.get("p").has_grad = true;
    adam_step(store, {.lr = 0.1});
    EXPECT_EQ(store.get("p").value[0], 0.5);
}

TEST(Adam, MissingGradientIsStateError) {
    ParameterStore<double> store;
    store.add("p", Tensor<double>({1}, 0.5));
    EXPECT_THROW(adam_step(store, {.lr = 0.1}), StateError);
}

TEST(Adam, TwoStepsMatchReferenceTrace) {
    std::mt19937_64 rng(11);
    const auto init = random_tensor(rng, {5});
    const auto g1 = random_tensor(rng, {5});
    const auto g2 = random_tensor(rng, {5});
    ParameterStore<double> store;
    store.add("p", init);
    for (const auto* g : {&g1, &g2}) {
        store.get("p").grad = *g;
        store.get("p").has_grad = true;
        adam_step(store, {.lr = 0.01, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8});
    }
    // Reference: textbook Adam written out step by step.
    for (std::size_t i = 0; i < 5; ++i) {
        double w = init[i], m = 0, v = 0;
        const double gs[2] = {g1[i], g2[i]};
        for (int t = 1; t <= 2; ++t) {
            m = 0.9 * m + 0.1 * gs[t - 1];
            v = 0.999 * v + 0.001 * gs[t - 1] * gs[t - 1];
            const double mh = m / (1 - std::pow(0.9, t));
            const double vh = v / (1 - std::pow(0.999, t));
            w -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
        }
        EXPECT_NEAR(store.get("p").value[i], w, 1e-15);
    }
}

TEST(Serialization, SaveLoadSaveIsByteIdentical) {
    std::mt19937_64 rng(12);
    ParameterStore<float> store;
    store.add("enc.w", random_tensor(rng, {2, 3, 3, 3}).cast<float>());
    store.add("enc.b", random_tensor(rng, {2}).cast<float>());
    const auto bytes = serialize_params(store);
    const auto loaded = deserialize_params<float>(bytes);
    EXPECT_EQ(serialize_params(loaded), bytes);
    EXPECT_EQ(loaded.get("enc.w").value, store.get("enc.w").value);
}

TEST(Serialization, ByteLayout) {
    ParameterStore<float> store;
    store.add("ab", Tensor<float>({2}, std::vector<float>{1.0f, -2.0f}));
    const auto b = serialize_params(store);
    const std::vector<std::uint8_t> expect = {'C', 'C', 'M', 'N', 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 'a', 'b', 1, 2, 0, 0, 0,
                                              0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
    EXPECT_EQ(b, expect);
}

TEST(Serialization, EmptyStoreIsMinimalFile) {
    const auto b = serialize_params(ParameterStore<float>{});
    EXPECT_EQ(b.size(), 12u);
    EXPECT_EQ(deserialize_params<float>(b).size(), 0u);
}

TEST(Serialization, CorruptionIsFormatError) {
    ParameterStore<float> store;
    store.add("x", Tensor<float>({3}, 1.0f));
    auto b = serialize_params(store);
    auto bad_magic = b;
    bad_magic[0] = 'X';
    EXPECT_THROW(deserialize_params<float>(bad_magic), FormatError);
    auto bad_version = b;
    bad_version[4] = 2;
    EXPECT_THROW(deserialize_params<float>(bad_version), FormatError);
    auto truncated = b;
    truncated.resize(b.size() - 2);
    EXPECT_THROW(deserialize_params<float>(truncated), FormatError);
}

TEST(Tensor, ForwardIsDeterministic) {
    std::mt19937_64 rng(13);
    const auto x = random_tensor(rng, {2, 8, 8});
    const auto w = random_tensor(rng, {3, 2, 3, 3});
    auto run = [&] {
        Tape<double> t;
        return t.value(ops::softmax2d(t, ops::channel(t, ops::conv2d_3x3(t, t.constant(x), t.constant(w), t.constant(Tensor<double>({3}))), 1)));
    };
    EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace ccmnet
