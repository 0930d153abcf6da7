#include "bscat/error.hpp"
#include "bscat/scattering.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

using namespace bscat;
using bscat::testing::circular_shift;
using bscat::testing::l2;
using bscat::testing::l2_diff;

namespace {

std::size_t binom(std::size_t n, std::size_t k) {
    if (k > n) return 0;
    std::size_t r = 1;
    for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

std::size_t ipow(std::size_t b, std::size_t e) {
    std::size_t r = 1;
    while (e-- > 0) r *= b;
    return r;
}

ScatteringConfig config(std::size_t n, std::size_t J, std::size_t L, Variant v, std::size_t M = 2) {
    ScatteringConfig cfg;
    cfg.bank = FilterBankConfig{n, J, L};
    cfg.max_order = M;
    cfg.variant = v;
    return cfg;
}

}  // namespace

TEST(Paths, CountsForReferenceConfig) {
    const auto p = enumerate_paths(3, 8, 2, false);
    std::size_t o1 = 0;
    std::size_t o2 = 0;
    for (const auto& path : p) (path.order() == 1 ? o1 : o2)++;
    EXPECT_EQ(o1, 24u);
    EXPECT_EQ(o2, 192u);
    EXPECT_EQ(enumerate_paths(3, 8, 2, true).size(), 6u);
    EXPECT_EQ(enumerate_paths(1, 1, 2, false).size(), 1u);
}

TEST(Paths, OrderIsLexicographicWithIncreasingScales) {
    const auto p = enumerate_paths(4, 3, 2, false);
    for (std::size_t i = 1; i < p.size(); ++i) {
        const auto key = [](const Path& q) {
            std::vector<std::size_t> k{q.order()};
            for (const auto& s : q.steps) k.push_back(s.scale);
            for (const auto& s : q.steps) k.push_back(s.angle);
            return k;
        };
        EXPECT_LT(key(p[i - 1]), key(p[i]));
    }
    for (const auto& q : p) {
        if (q.order() == 2) EXPECT_LT(q.steps[0].scale, q.steps[1].scale);
    }
}

TEST(Paths, MatchClosedFormOverGrid) {
    for (std::size_t J = 1; J <= 6; ++J) {
        for (std::size_t L : {4u, 8u}) {
            for (std::size_t M = 0; M <= 2; ++M) {
                std::size_t expect = 0;
                std::size_t expect_rot = 0;
                for (std::size_t m = 1; m <= M; ++m) {
                    expect += ipow(L, m) * binom(J, m);
                    expect_rot += binom(J, m);
                }
                EXPECT_EQ(enumerate_paths(J, L, M, false).size(), expect);
                EXPECT_EQ(enumerate_paths(J, L, M, true).size(), expect_rot);
            }
        }
    }
}

TEST(Features, CountMatchesReferenceExamples) {
    EXPECT_EQ(count_features(config(32, 3, 8, Variant::windowed), 32, 1), 3472u);
    EXPECT_EQ(count_features(config(32, 3, 8, Variant::global), 32, 3), 651u);
    EXPECT_EQ(count_features(config(32, 3, 8, Variant::global_rotation_invariant), 32, 1), 7u);
    EXPECT_THROW(count_features(config(32, 3, 8, Variant::global, 3), 32, 1), Error);
    EXPECT_THROW(count_features(config(32, 3, 8, Variant::global), 64, 1), Error);
}

TEST(Features, LayoutMatchesValues) {
    for (Variant v : {Variant::windowed, Variant::global, Variant::global_rotation_invariant}) {
        const auto cfg = config(16, 2, 4, v);
        const FilterBank bank(cfg.bank);
        std::mt19937_64 rng(3);
        const auto fv = scatter(bscat::testing::random_image(rng, 16, 2), bank, cfg);
        ASSERT_EQ(fv.values.size(), count_features(cfg, 16, 2));
        ASSERT_EQ(fv.layout->entries.size(), fv.values.size());
        EXPECT_EQ(fv.channel_count, 2u);
        for (std::size_t i = 0; i < fv.values.size(); ++i) {
            EXPECT_TRUE(std::isfinite(fv.values[i]));
            if (fv.layout->order_of(i) >= 1) EXPECT_GE(fv.values[i], 0.0);
        }
        EXPECT_EQ(fv.layout->entries.back().channel, 1u);
    }
}

TEST(Scatter, ConstantImageHasOnlyOrderZero) {
    for (Variant v : {Variant::windowed, Variant::global, Variant::global_rotation_invariant}) {
        const auto cfg = config(32, 3, 8, v);
        const FilterBank bank(cfg.bank);
        const double c = 2.75;
        Image img(1, 32);
        for (double& x : img.data()) x = c;
        const auto fv = scatter(img, bank, cfg);
        for (std::size_t i = 0; i < fv.values.size(); ++i) {
            if (fv.layout->order_of(i) == 0) {
                EXPECT_NEAR(fv.values[i], c, 1e-12);
            } else {
                EXPECT_LE(std::abs(fv.values[i]), 1e-10 * c);
            }
        }
    }
}

TEST(Scatter, GlobalIsInvariantToCircularShift) {
    for (Variant v : {Variant::global, Variant::global_rotation_invariant}) {
        const auto cfg = config(32, 3, 8, v);
        const FilterBank bank(cfg.bank);
        std::mt19937_64 rng(11);
        for (int t = 0; t < 3; ++t) {
            const Image f = bscat::testing::random_image(rng, 32);
            const auto a = scatter(f, bank, cfg).values;
            const auto b = scatter(circular_shift(f, 5, 9), bank, cfg).values;
            EXPECT_LE(l2_diff(a, b), 1e-8 * l2(a));
        }
    }
}

TEST(Scatter, RotationInvariantVariantIgnoresQuarterTurns) {
    for (std::size_t L : {2u, 4u, 8u}) {
        const auto cfg = config(32, 3, L, Variant::global_rotation_invariant);
        const FilterBank bank(cfg.bank);
        std::mt19937_64 rng(5 + L);
        const Image f = bscat::testing::random_image(rng, 32);
        const auto a = scatter(f, bank, cfg).values;
        const auto b = scatter(bscat::testing::rotate90(f), bank, cfg).values;
        EXPECT_LE(l2_diff(a, b), 1e-6 * l2(a)) << "L=" << L;
    }
}

TEST(Scatter, PlainGlobalVariantSeesRotation) {
    // Control: without angle averaging the coefficients are permuted, not equal.
    const auto cfg = config(32, 3, 8, Variant::global);
    const FilterBank bank(cfg.bank);
    std::mt19937_64 rng(2);
    const Image f = bscat::testing::smooth_image(rng, 32);
    const auto a = scatter(f, bank, cfg).values;
    const auto b = scatter(bscat::testing::rotate90(f), bank, cfg).values;
    EXPECT_GT(l2_diff(a, b), 1e-3 * l2(a));
}

TEST(Scatter, WindowedIsLocallyStableToSmallShifts) {
    const std::size_t n = 32;
    const auto cfg = config(n, 4, 8, Variant::windowed);  // J = log2(N) - 1
    const FilterBank bank(cfg.bank);
    std::mt19937_64 rng(8);
    for (int t = 0; t < 5; ++t) {
        const Image f = bscat::testing::smooth_image(rng, n);
        const auto a = scatter(f, bank, cfg).values;
        for (auto [dr, dc] : {std::pair{1L, 0L}, {0L, 2L}, {1L, 1L}, {-2L, 0L}}) {
            const auto b = scatter(circular_shift(f, dr, dc), bank, cfg).values;
            EXPECT_LE(l2_diff(a, b) / l2(a), 0.15) << "shift " << dr << "," << dc;
        }
    }
}

TEST(Scatter, NoiseStabilityIsLipschitz) {
    const std::size_t n = 32;
    const auto cfg = config(n, 3, 8, Variant::global);
    const FilterBank bank(cfg.bank);
    const double k = std::sqrt(bank.lp_max());
    ASSERT_LE(k, 1.01);
    std::mt19937_64 rng(21);
    std::normal_distribution<double> g;
    for (int t = 0; t < 5; ++t) {
        const Image f = bscat::testing::random_image(rng, n);
        Image h = f;
        double e2 = 0.0;
        const double sigma = 0.05 + 0.5 * t;
        for (double& x : h.data()) {
            const double e = sigma * g(rng);
            x += e;
            e2 += e * e;
        }
        const double eps_rms = std::sqrt(e2 / static_cast<double>(n * n));
        const double d = l2_diff(scatter(f, bank, cfg).values, scatter(h, bank, cfg).values);
        EXPECT_LE(d, k * eps_rms * (1.0 + 1e-12));
    }
}

TEST(Scatter, HigherOrdersCarryLessEnergy) {
    const auto cfg = config(32, 3, 8, Variant::global);
    const FilterBank bank(cfg.bank);
    std::mt19937_64 rng(13);
    for (int t = 0; t < 5; ++t) {
        const auto fv = scatter(bscat::testing::smooth_image(rng, 32), bank, cfg);
        double s1 = 0.0, s2 = 0.0;
        std::size_t c1 = 0, c2 = 0;
        for (std::size_t i = 0; i < fv.values.size(); ++i) {
            const std::size_t o = fv.layout->order_of(i);
            if (o == 1) s1 += std::abs(fv.values[i]), ++c1;
            if (o == 2) s2 += std::abs(fv.values[i]), ++c2;
        }
        EXPECT_LT(s2 / c2, s1 / c1);
    }
}

TEST(Scatter, WindowedOrderZeroOfConstantIsExactPerCell) {
    const auto cfg = config(32, 2, 4, Variant::windowed);
    const FilterBank bank(cfg.bank);
    Image img(1, 32);
    for (double& x : img.data()) x = -1.5;
    const auto fv = scatter(img, bank, cfg);
    for (std::size_t i = 0; i < cfg.spatial_cells(); ++i) EXPECT_NEAR(fv.values[i], -1.5, 1e-12);
}

TEST(Scatter, WindowedShiftByStrideShiftsCells) {
    // A circular shift by exactly 2^J pixels permutes the coarse grid.
    const std::size_t n = 32;
    const auto cfg = config(n, 2, 4, Variant::windowed);
    const FilterBank bank(cfg.bank);
    std::mt19937_64 rng(4);
    const Image f = bscat::testing::random_image(rng, n);
    const auto a = scatter(f, bank, cfg);
    const auto b = scatter(circular_shift(f, 4, 0), bank, cfg);
    const std::size_t side = 8;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const auto& e = a.layout->entries[i];
        const std::size_t block = i / (side * side);
        const std::size_t j = block * side * side + ((e.cell_row + 1) % side) * side + e.cell_col;
        ASSERT_NEAR(b.values[j], a.values[i], 1e-10 * (1.0 + std::abs(a.values[i])));
    }
}

TEST(Scatter, RejectsBadInput) {
    const auto cfg = config(32, 3, 8, Variant::global);
    const FilterBank bank(cfg.bank);
    try {
        scatter(Image(1, 16), bank, cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::size_mismatch);
    }
    Image bad(1, 32);
    bad(0, 3, 3) = std::numeric_limits<double>::quiet_NaN();
    try {
        scatter(bad, bank, cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::non_finite_input);
    }
}

TEST(Batch, EmptyAndSingleton) {
    const auto cfg = config(16, 2, 4, Variant::global);
    const FilterBank bank(cfg.bank);
    EXPECT_TRUE(scatter_batch({}, bank, cfg).empty());
    std::mt19937_64 rng(1);
    const std::vector<Image> one{bscat::testing::random_image(rng, 16)};
    const auto out = scatter_batch(one, bank, cfg);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].values, scatter(one[0], bank, cfg).values);
}

TEST(Batch, ThreadedMatchesSequentialBitwise) {
    const auto cfg = config(32, 3, 8, Variant::windowed);
    const FilterBank bank(cfg.bank);
    std::mt19937_64 rng(99);
    std::vector<Image> imgs;
    for (int i = 0; i < 16; ++i) imgs.push_back(bscat::testing::random_image(rng, 32));
    const auto par = scatter_batch(imgs, bank, cfg, 4);
    for (std::size_t i = 0; i < imgs.size(); ++i) {
        EXPECT_EQ(par[i].values, scatter(imgs[i], bank, cfg).values) << i;
    }
}

TEST(Batch, ErrorNamesOffendingIndex) {
    const auto cfg = config(16, 2, 4, Variant::global);
    const FilterBank bank(cfg.bank);
    std::vector<Image> imgs(3, Image(1, 16));
    imgs[2] = Image(1, 32);
    try {
        scatter_batch(imgs, bank, cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::size_mismatch);
        EXPECT_NE(std::string(e.what()).find("image 2"), std::string::npos);
    }
}

TEST(Config, DigestTracksEveryParameter) {
    const auto base = config(32, 3, 8, Variant::global);
    auto other = base;
    EXPECT_EQ(base.digest(), other.digest());
    other.variant = Variant::windowed;
    EXPECT_NE(base.digest(), other.digest());
    other = base;
    other.bank.num_angles = 6;
    EXPECT_NE(base.digest(), other.digest());
    other = base;
    other.max_order = 1;
    EXPECT_NE(base.digest(), other.digest());
    other = base;
    other.bank.sigma0 = 0.85;
    EXPECT_NE(base.digest(), other.digest());
    EXPECT_EQ(parse_variant("rotinv"), Variant::global_rotation_invariant);
    EXPECT_THROW(parse_variant("bogus"), Error);
}

TEST(Stability, DeformationRatioStaysBounded) {
    const std::size_t n = 32;
    const auto cfg = config(n, 3, 8, Variant::global);
    const FilterBank bank(cfg.bank);
    std::mt19937_64 rng(17);
    constexpr double kStrength = 0.1;  // |grad tau| at t = 1
    for (int trial = 0; trial < 3; ++trial) {
        const auto g = bscat::testing::SmoothField::random(rng, n);
        const Image f = bscat::testing::render_dilated(g, n, 0.0);
        const auto s0 = scatter(f, bank, cfg).values;
        std::vector<double> num;
        std::vector<double> ratio;
        for (double t : {0.5, 0.25, 0.125}) {
            const Image d = bscat::testing::render_dilated(g, n, kStrength * t);
            num.push_back(l2_diff(scatter(d, bank, cfg).values, s0));
            ratio.push_back(num.back() / (bscat::testing::rms(f) * t));
        }
        for (std::size_t k = 1; k < num.size(); ++k) {
            EXPECT_LE(num[k] / num[k - 1], 0.5 * 1.3);
            EXPECT_LE(ratio[k], 2.0 * ratio[0]);
        }
    }
}

TEST(Stability, FourierModulusIsNotDeformationStable) {
    const std::size_t n = 32;
    const auto cfg = config(n, 3, 8, Variant::global);
    const FilterBank bank(cfg.bank);
    const bscat::testing::GaborField g{0.9 * std::numbers::pi, 6.0};
    const Image f = bscat::testing::render_dilated(g, n, 0.0);
    const Image d = bscat::testing::render_dilated(g, n, 0.1 * 0.25);
    const double ds = l2_diff(scatter(d, bank, cfg).values, scatter(f, bank, cfg).values);
    const double df = l2_diff(bscat::testing::fourier_modulus(d), bscat::testing::fourier_modulus(f));
    EXPECT_GE(df / ds, 5.0);
}
