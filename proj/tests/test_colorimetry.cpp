#include <ccmnet/colorimetry.hpp>

#include <gtest/gtest.h>

#include <random>

namespace ccmnet {
namespace {

ColorMatrix3 random_matrix(std::mt19937_64& rng, double jitter = 0.3) {
    std::uniform_real_distribution<double> d(-jitter, jitter);
    ColorMatrix3 m = ColorMatrix3::identity();
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) m(i, j) += d(rng);
    }
    return m;
}

CameraCalibration random_calibration(std::mt19937_64& rng) {
    CameraCalibration cal;
    cal.camera_id = "rand";
    cal.cm_low = random_matrix(rng);
    cal.cm_high = random_matrix(rng);
    cal.fm_low = random_matrix(rng);
    cal.fm_high = random_matrix(rng);
    return cal;
}

// Endpoint matrices that differ modestly, as in real two-illuminant profiles.
CameraCalibration coherent_calibration(std::mt19937_64& rng) {
    CameraCalibration cal;
    cal.camera_id = "coherent";
    cal.cm_high = random_matrix(rng);
    cal.cm_low = cal.cm_high + (random_matrix(rng, 0.05) + (-1.0) * ColorMatrix3::identity());
    return cal;
}

TEST(CctToXy, D65SeedWithinTolerance) {
    const Chromaticity c = cct_to_xy(Cct(6504.0));
    EXPECT_NEAR(c.x, 0.3127, 0.005);
    EXPECT_NEAR(c.y, 0.3290, 0.005);
}

TEST(CctToXy, MovesBluewardWithTemperature) {
    EXPECT_GT(cct_to_xy(Cct(2500.0)).x, cct_to_xy(Cct(7500.0)).x);
}

TEST(CctToXy, FrozenRegressionAt4000K) {
    // Evaluated independently from the published daylight-locus coefficients.
    const Chromaticity c = cct_to_xy(Cct(4000.0));
    EXPECT_NEAR(c.x, 0.382343625, 1e-12);
    EXPECT_NEAR(c.y, 0.383766261015578, 1e-12);
}

TEST(CctToXy, OutOfRangeIsDomainError) {
    EXPECT_THROW(Cct(1000.0), DomainError);
    EXPECT_THROW(Cct(30000.0), DomainError);
    try {
        Cct bad(100.0);
        FAIL();
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("2300"), std::string::npos);
    }
}

TEST(XyToCct, RoundTripExamples) {
    const Chromaticity a = cct_to_xy(Cct(5000.0));
    EXPECT_NEAR(xy_to_cct(a.x, a.y).kelvin(), 5000.0, 50.0);
    const Chromaticity b = cct_to_xy(Cct(2500.0));
    EXPECT_NEAR(xy_to_cct(b.x, b.y).kelvin(), 2500.0, 25.0);
}

TEST(XyToCct, D65WhitePoint) {
    // Dense brute-force search over the locus gives 6505.7 K.
    EXPECT_NEAR(xy_to_cct(0.3127, 0.3290).kelvin(), 6505.72, 0.5);
}

TEST(XyToCct, RoundTripEvery100K) {
    for (int t = 2500; t <= 7500; t += 100) {
        const Chromaticity c = cct_to_xy(Cct(t));
        const double back = xy_to_cct(c.x, c.y).kelvin();
        EXPECT_LT(std::abs(back - t) / t, 0.01) << t;
    }
}

TEST(XyToCct, FarFromLocusIsDomainError) {
    EXPECT_THROW(xy_to_cct(0.2, 0.6), DomainError);
    EXPECT_THROW(xy_to_cct(0.6, 0.2), DomainError);
}

TEST(InterpolationWeight, EndpointsAndMidValue) {
    EXPECT_EQ(interpolation_weight(2856.0, 2856.0, 6504.0), 1.0);
    EXPECT_EQ(interpolation_weight(6504.0, 2856.0, 6504.0), 0.0);
    EXPECT_NEAR(interpolation_weight(4000.0, 2856.0, 6504.0), 0.4900921052631579, 1e-12);
}

TEST(InterpolationWeight, ClampedAndMonotone) {
    EXPECT_EQ(interpolation_weight(2000.0, 2856.0, 6504.0), 1.0);
    EXPECT_EQ(interpolation_weight(9000.0, 2856.0, 6504.0), 0.0);
    double prev = 2.0;
    for (double t = 2856.0; t <= 6504.0; t += 17.0) {
        const double g = interpolation_weight(t, 2856.0, 6504.0);
        EXPECT_LE(g, prev);
        prev = g;
    }
}

TEST(InterpolationWeight, NonPositiveIsDomainError) {
    EXPECT_THROW(interpolation_weight(0.0, 2856.0, 6504.0), DomainError);
    EXPECT_THROW(interpolation_weight(4000.0, -1.0, 6504.0), DomainError);
}

TEST(InterpolateCcm, EndpointsAreBitIdentical) {
    std::mt19937_64 rng(3);
    const CameraCalibration cal = random_calibration(rng);
    EXPECT_EQ(interpolate_ccm(cal.cct_low, cal, MatrixKind::color_matrix), cal.cm_low);
    EXPECT_EQ(interpolate_ccm(cal.cct_high, cal, MatrixKind::color_matrix), cal.cm_high);
    EXPECT_EQ(interpolate_ccm(cal.cct_low, cal, MatrixKind::forward_matrix), cal.fm_low);
    EXPECT_EQ(interpolate_ccm(cal.cct_high, cal, MatrixKind::forward_matrix), cal.fm_high);
}

TEST(InterpolateCcm, EqualMatricesAreConstant) {
    std::mt19937_64 rng(4);
    CameraCalibration cal;
    cal.cm_low = cal.cm_high = random_matrix(rng);
    for (double t : {2500.0, 4000.0, 5500.0, 7500.0}) {
        const ColorMatrix3 m = interpolate_ccm(Cct(t), cal, MatrixKind::color_matrix);
        for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(m.entries()[i], cal.cm_low.entries()[i], 1e-15);
    }
}

TEST(InterpolateCcm, EntrywiseBlendAt4000K) {
    std::mt19937_64 rng(5);
    const CameraCalibration cal = random_calibration(rng);
    const ColorMatrix3 m = interpolate_ccm(Cct(4000.0), cal, MatrixKind::color_matrix);
    const double g = 0.4900921052631579;
    for (std::size_t i = 0; i < 9; ++i) {
        EXPECT_NEAR(m.entries()[i], g * cal.cm_low.entries()[i] + (1 - g) * cal.cm_high.entries()[i], 1e-14);
    }
}

TEST(PlanckianSamples, DefaultGrid) {
    const auto s = planckian_xyz_samples();
    ASSERT_EQ(s.size(), 51u);
    EXPECT_EQ(s.front().cct.kelvin(), 2500.0);
    EXPECT_EQ(s.back().cct.kelvin(), 7500.0);
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_EQ(s[i].xyz.y, 1.0);
        if (i > 0) EXPECT_GT(s[i].cct, s[i - 1].cct);
    }
}

TEST(PlanckianSamples, InvalidArguments) {
    EXPECT_THROW(planckian_xyz_samples(5000, 4000, 100), DomainError);
    EXPECT_THROW(planckian_xyz_samples(2500, 7500, 0), DomainError);
}

TEST(RawFromXyz, IdentityAndLinearity) {
    CameraCalibration cal;
    const XyzColor x{0.7, 1.0, 1.2};
    const RgbColor r = raw_from_xyz(x, Cct(5000.0), cal);
    EXPECT_DOUBLE_EQ(r.r, 0.7);
    EXPECT_DOUBLE_EQ(r.g, 1.0);
    EXPECT_DOUBLE_EQ(r.b, 1.2);

    std::mt19937_64 rng(6);
    CameraCalibration a = random_calibration(rng);
    CameraCalibration b = a;
    b.cm_low = 2.0 * a.cm_low;
    b.cm_high = 2.0 * a.cm_high;
    const RgbColor ra = raw_from_xyz(x, Cct(5000.0), a);
    const RgbColor rb = raw_from_xyz(x, Cct(5000.0), b);
    EXPECT_NEAR(rb.r, 2 * ra.r, 1e-14);
    EXPECT_NEAR(rb.g, 2 * ra.g, 1e-14);
    EXPECT_NEAR(rb.b, 2 * ra.b, 1e-14);
}

TEST(RawFromXyz, MatchesHandProduct) {
    std::mt19937_64 rng(7);
    const CameraCalibration cal = random_calibration(rng);
    const XyzColor x{0.9, 1.0, 0.8};
    const double g = interpolation_weight(5000.0, 2856.0, 6504.0);
    const RgbColor r = raw_from_xyz(x, Cct(5000.0), cal);
    const double xv[3] = {x.x, x.y, x.z};
    double expect[3] = {0, 0, 0};
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            expect[i] += (g * cal.cm_low(i, j) + (1 - g) * cal.cm_high(i, j)) * xv[j];
        }
    }
    EXPECT_NEAR(r.r, expect[0], 1e-14);
    EXPECT_NEAR(r.g, expect[1], 1e-14);
    EXPECT_NEAR(r.b, expect[2], 1e-14);
}

TEST(RawFromXyz, SuperpositionInMatrices) {
    std::mt19937_64 rng(8);
    const CameraCalibration a = random_calibration(rng);
    const CameraCalibration b = random_calibration(rng);
    CameraCalibration sum = a;
    sum.cm_low = a.cm_low + b.cm_low;
    sum.cm_high = a.cm_high + b.cm_high;
    const XyzColor x{0.5, 1.0, 0.3};
    const RgbColor ra = raw_from_xyz(x, Cct(4500.0), a);
    const RgbColor rb = raw_from_xyz(x, Cct(4500.0), b);
    const RgbColor rs = raw_from_xyz(x, Cct(4500.0), sum);
    EXPECT_NEAR(rs.r, ra.r + rb.r, 1e-13);
    EXPECT_NEAR(rs.g, ra.g + rb.g, 1e-13);
    EXPECT_NEAR(rs.b, ra.b + rb.b, 1e-13);
}

TEST(IlluminantRawToXyzCct, IdentityCalibrationD65) {
    CameraCalibration cal;
    const auto samples = planckian_xyz_samples(6504.0, 6504.0 + 1.0, 100.0);
    const XyzColor x = samples.front().xyz;
    const auto res = illuminant_raw_to_xyz_cct(RgbColor{x.x, x.y, x.z}, cal);
    EXPECT_NEAR(res.cct.kelvin(), 6504.0, 100.0);
    EXPECT_NEAR(res.xyz.x, x.x, 1e-12);
    EXPECT_NEAR(res.xyz.z, x.z, 1e-12);
}

TEST(IlluminantRawToXyzCct, RecoversCctAndIsFixedPoint) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> tdist(2500.0, 7500.0);
    for (int trial = 0; trial < 25; ++trial) {
        const CameraCalibration cal = coherent_calibration(rng);
        const Cct t(tdist(rng));
        const XyzColor x = xyz_from_xy(cct_to_xy(t));
        const RgbColor raw = raw_from_xyz(x, t, cal);
        if (!raw.all_positive()) continue;
        const auto res = illuminant_raw_to_xyz_cct(raw, cal);
        EXPECT_LT(std::abs(res.cct.kelvin() - t.kelvin()) / t.kelvin(), 0.01);

        // One more iteration moves the chromaticity by less than the tolerance.
        const Chromaticity xy = xy_from_xyz(res.xyz);
        const Cct again = xy_to_cct(xy.x, xy.y);
        const XyzColor next =
            XyzColor::from(interpolate_ccm(again, cal, MatrixKind::color_matrix).inverse().apply(raw.vec()));
        const Chromaticity xy2 = xy_from_xyz(next);
        EXPECT_LT(std::abs(xy2.x - xy.x), 1e-6);
        EXPECT_LT(std::abs(xy2.y - xy.y), 1e-6);
    }
}

TEST(IlluminantRawToXyzCct, NearSingularRaises) {
    CameraCalibration cal;
    cal.cm_high = ColorMatrix3({1, 1, 0, 1, 1 + 1e-13, 0, 0, 0, 1});
    EXPECT_THROW(illuminant_raw_to_xyz_cct(RgbColor{0.9, 1.0, 1.1}, cal), NumericError);
}

TEST(IlluminantRawToXyzCct, NonPositiveIlluminantRejected) {
    CameraCalibration cal;
    EXPECT_THROW(illuminant_raw_to_xyz_cct(RgbColor{0.0, 1.0, 1.0}, cal), DomainError);
}

TEST(CameraCalibration, ValidateRejectsSingular) {
    CameraCalibration cal;
    cal.fm_low = ColorMatrix3({1, 2, 3, 2, 4, 6, 0, 0, 1});
    EXPECT_THROW(cal.validate(), NumericError);
    CameraCalibration swapped;
    swapped.cct_low = Cct(6504.0);
    swapped.cct_high = Cct(2856.0);
    EXPECT_THROW(swapped.validate(), DomainError);
}

}  // namespace
}  // namespace ccmnet
