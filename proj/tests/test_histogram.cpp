#include <ccmnet/histogram.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace ccmnet {
namespace {

RawImage random_image(std::mt19937_64& rng, int w, int h) {
    RawImage img(w, h, 1.0);
    std::uniform_real_distribution<double> d(0.01, 0.9);
    for (double& v : img.pixels) v = d(rng);
    return img;
}

// Direct per-pixel evaluation of the weighted histogram, written without the
// spec helpers.
std::vector<double> naive_histogram(const RawImage& img, const HistogramSpec& s, double* total) {
    std::vector<double> h(static_cast<std::size_t>(s.bins * s.bins), 0.0);
    const double wu = (s.u_max - s.u_min) / s.bins;
    const double wv = (s.v_max - s.v_min) / s.bins;
    double sum = 0.0;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double r = img.at(x, y, 0), g = img.at(x, y, 1), b = img.at(x, y, 2);
            const double lim = 0.98 * img.saturation_level;
            if (r <= 0 || g <= 0 || b <= 0 || r >= lim || g >= lim || b >= lim) continue;
            int iu = static_cast<int>(std::floor((std::log(g / r) - s.u_min) / wu));
            int iv = static_cast<int>(std::floor((std::log(g / b) - s.v_min) / wv));
            iu = std::clamp(iu, 0, s.bins - 1);
            iv = std::clamp(iv, 0, s.bins - 1);
            const double wgt = std::sqrt(r * r + g * g + b * b);
            h[static_cast<std::size_t>(iu * s.bins + iv)] += wgt;
            sum += wgt;
        }
    }
    *total = sum;
    if (sum > 0) {
        for (double& v : h) v /= sum;
    }
    return h;
}

TEST(RgbToUv, AnalyticValues) {
    const UvChroma a = rgb_to_uv({1, 1, 1});
    EXPECT_EQ(a.u, 0.0);
    EXPECT_EQ(a.v, 0.0);
    const UvChroma b = rgb_to_uv({0.5, 1, 2});
    EXPECT_NEAR(b.u, std::log(2.0), 1e-15);
    EXPECT_NEAR(b.v, -std::log(2.0), 1e-15);
    const UvChroma c = rgb_to_uv({2, 1, 1});
    EXPECT_NEAR(c.u, -std::log(2.0), 1e-15);
    EXPECT_EQ(c.v, 0.0);
}

TEST(RgbToUv, NonPositiveChannelIsDomainError) {
    EXPECT_THROW(rgb_to_uv({0, 1, 1}), DomainError);
    EXPECT_THROW(rgb_to_uv({1, -1, 1}), DomainError);
}

TEST(UvToRgb, InverseOfRgbToUv) {
    const RgbColor n = uv_to_rgb({0, 0});
    EXPECT_EQ(n, (RgbColor{1, 1, 1}));
    const RgbColor c = uv_to_rgb({std::log(2.0), -std::log(2.0)});
    EXPECT_NEAR(c.r, 0.5, 1e-15);
    EXPECT_EQ(c.g, 1.0);
    EXPECT_NEAR(c.b, 2.0, 1e-15);

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> d(-3, 3);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const UvChroma p{d(rng), d(rng)};
        const UvChroma q = rgb_to_uv(uv_to_rgb(p));
        worst = std::max({worst, std::abs(q.u - p.u), std::abs(q.v - p.v)});
    }
    EXPECT_LT(worst, 1e-12);
}

TEST(BuildHistogram, SingleNeutralPixel) {
    RawImage img(1, 1, 10.0);
    img.set_pixel(0, {1, 1, 1});
    const HistogramSpec spec = HistogramSpec::query(64);
    const UvHistogram h = build_histogram(img, spec);
    EXPECT_FALSE(h.empty);
    const int iu = spec.u_bin(0.0), iv = spec.v_bin(0.0);
    EXPECT_EQ(iu, 32);
    EXPECT_EQ(iv, 32);
    EXPECT_DOUBLE_EQ(h.at(iu, iv), 1.0);
    EXPECT_NEAR(h.total(), 1.0, 1e-15);
}

TEST(BuildHistogram, NormWeightsRatio) {
    // (1,1,1) and (2,2,2) share the neutral bin; pre-normalization mass is
    // sqrt(3) + 2 sqrt(3).
    RawImage same(2, 1, 10.0);
    same.set_pixel(0, {1, 1, 1});
    same.set_pixel(1, {2, 2, 2});
    const HistogramSpec spec = HistogramSpec::query(64);
    double total = 0.0;
    naive_histogram(same, spec, &total);
    EXPECT_NEAR(total, 3.0 * std::sqrt(3.0), 1e-14);
    EXPECT_DOUBLE_EQ(build_histogram(same, spec).at(32, 32), 1.0);

    // Weights sqrt(3) and 2 sqrt(3) in separate bins keep the 1:2 ratio.
    RawImage pair(2, 1, 10.0);
    pair.set_pixel(0, {1, 1, 1});
    pair.set_pixel(1, {std::sqrt(2.0), std::sqrt(2.0), std::sqrt(8.0)});
    const RgbColor second = pair.pixel(1);
    ASSERT_NEAR(second.norm(), 2 * std::sqrt(3.0), 1e-14);
    const UvHistogram h = build_histogram(pair, spec);
    const UvChroma p = rgb_to_uv(second);
    const double a = h.at(spec.u_bin(0), spec.v_bin(0));
    const double b = h.at(spec.u_bin(p.u), spec.v_bin(p.v));
    EXPECT_NEAR(b / a, 2.0, 1e-14);
}

TEST(BuildHistogram, AllSaturatedIsFlaggedEmpty) {
    RawImage img(3, 3, 1.0);
    for (double& v : img.pixels) v = 0.99;
    const UvHistogram h = build_histogram(img, HistogramSpec::query(16));
    EXPECT_TRUE(h.empty);
    EXPECT_EQ(h.total(), 0.0);
}

TEST(BuildHistogram, MatchesNaiveReference) {
    std::mt19937_64 rng(2);
    const HistogramSpec spec = HistogramSpec::query(32);
    for (int trial = 0; trial < 20; ++trial) {
        RawImage img = random_image(rng, 16, 16);
        img.at(3, 4, 1) = 0.0;    // excluded: non-positive
        img.at(5, 5, 2) = 0.985;  // excluded: clipped
        double total = 0.0;
        const auto ref = naive_histogram(img, spec, &total);
        const UvHistogram h = build_histogram(img, spec);
        ASSERT_EQ(h.data.size(), ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) {
            EXPECT_EQ(h.data[i] > 0.0, ref[i] > 0.0);
            EXPECT_NEAR(h.data[i], ref[i], 1e-15);
        }
    }
}

TEST(BuildHistogram, MassConservation) {
    std::mt19937_64 rng(3);
    const RawImage img = random_image(rng, 16, 16);
    double expect = 0.0;
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        const RgbColor c = img.pixel(i);
        if (is_valid_pixel(c, img.saturation_level)) expect += c.norm();
    }
    double total = 0.0;
    naive_histogram(img, HistogramSpec::query(64), &total);
    EXPECT_NEAR(total, expect, 1e-12);
    EXPECT_NEAR(build_histogram(img, HistogramSpec::query(64)).total(), 1.0, 1e-12);
}

TEST(BuildHistogram, ExposureInvariance) {
    std::mt19937_64 rng(4);
    RawImage img = random_image(rng, 16, 16);
    img.saturation_level = 100.0;
    RawImage scaled = img;
    for (double& v : scaled.pixels) v *= 3.0;
    const HistogramSpec spec = HistogramSpec::query(64);
    const UvHistogram a = build_histogram(img, spec);
    const UvHistogram b = build_histogram(scaled, spec);
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        EXPECT_EQ(a.data[i] > 0.0, b.data[i] > 0.0);
        EXPECT_NEAR(a.data[i], b.data[i], 1e-12);
    }
}

TEST(HistogramSpec, BinBoundariesUseFloor) {
    const HistogramSpec spec{8, -2.0, 2.0, -1.0, 1.0};
    for (int i = 0; i <= 8; ++i) {
        const double edge = -2.0 + 0.5 * i;
        EXPECT_EQ(spec.u_bin(edge), std::min(i, 7)) << edge;
        EXPECT_EQ(spec.u_bin(edge - 1e-9), std::clamp(i - 1, 0, 7)) << edge;
        const double vedge = -1.0 + 0.25 * i;
        EXPECT_EQ(spec.v_bin(vedge), std::min(i, 7)) << vedge;
    }
    EXPECT_EQ(spec.u_bin(-100.0), 0);
    EXPECT_EQ(spec.u_bin(100.0), 7);
    EXPECT_EQ(spec.u_bin(std::nan("")), 0);
}

TEST(EdgeImage, ConstantImageHasNoEdges) {
    RawImage img(4, 3, 1.0);
    for (double& v : img.pixels) v = 0.4;
    const RawImage e = edge_image(img);
    for (double v : e.pixels) EXPECT_EQ(v, 0.0);
}

TEST(EdgeImage, VerticalStepGivesOneColumn) {
    const double h = 0.3;
    RawImage img(6, 4, 1.0);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 6; ++x) {
            img.at(x, y, 0) = 0.1 + (x >= 3 ? h : 0.0);
            img.at(x, y, 1) = 0.2;
            img.at(x, y, 2) = 0.2;
        }
    }
    const RawImage e = edge_image(img);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 6; ++x) {
            EXPECT_NEAR(e.at(x, y, 0), x == 2 ? h : 0.0, 1e-15);
            EXPECT_EQ(e.at(x, y, 1), 0.0);
        }
    }
}

TEST(EdgeImage, NonNegativeAndSizeCheck) {
    std::mt19937_64 rng(5);
    const RawImage img = random_image(rng, 9, 7);
    for (double v : edge_image(img).pixels) EXPECT_GE(v, 0.0);
    EXPECT_THROW(edge_image(RawImage(1, 5)), DomainError);
}

}  // namespace
}  // namespace ccmnet
