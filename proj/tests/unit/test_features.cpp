#include "bscat/error.hpp"
#include "bscat/features.hpp"
#include "bscat/kernels.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace bscat;

namespace {

Eigen::MatrixXd gaussian_matrix(std::mt19937_64& rng, Eigen::Index n, Eigen::Index d) {
    std::normal_distribution<double> g;
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    return x;
}

}  // namespace

TEST(Standardizer, TwoRowExample) {
    Eigen::MatrixXd x(2, 1);
    x << 0.0, 2.0;
    const auto s = FeatureStandardizer::fit(x);
    EXPECT_DOUBLE_EQ(s.mean()(0), 1.0);
    EXPECT_DOUBLE_EQ(s.scale()(0), 1.0);
}

TEST(Standardizer, ConstantColumnIsClampedAndZeroed) {
    Eigen::MatrixXd x(4, 2);
    x << 1, 5, 2, 5, 3, 5, 4, 5;
    const auto s = FeatureStandardizer::fit(x);
    EXPECT_EQ(s.scale()(1), kScaleFloor);
    const Eigen::MatrixXd z = s.transform(x);
    EXPECT_TRUE((z.col(1).array() == 0.0).all());
}

TEST(Standardizer, MomentsOfTransformedColumns) {
    std::mt19937_64 rng(1);
    Eigen::MatrixXd x = gaussian_matrix(rng, 100, 50);
    x = (x.array() * 3.0 + 7.0).matrix();
    const auto s = FeatureStandardizer::fit(x);
    const Eigen::MatrixXd z = s.transform(x);
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        const double mean = z.col(j).mean();
        const double sd = std::sqrt((z.col(j).array() - mean).square().mean());
        EXPECT_LE(std::abs(mean), 1e-10);
        EXPECT_NEAR(sd, 1.0, 1e-10);
    }
}

TEST(Standardizer, RoundTripIsIdentity) {
    std::mt19937_64 rng(2);
    const Eigen::MatrixXd x = gaussian_matrix(rng, 30, 8) * 1e3;
    const auto s = FeatureStandardizer::fit(x);
    const Eigen::MatrixXd back = s.inverse_transform(s.transform(x));
    EXPECT_LE((back - x).norm(), 1e-12 * x.norm());
}

TEST(Standardizer, RejectsSingleRowAndWrongWidth) {
    EXPECT_THROW(FeatureStandardizer::fit(Eigen::MatrixXd::Ones(1, 3)), Error);
    const auto s = FeatureStandardizer::fit(Eigen::MatrixXd::Random(5, 3));
    EXPECT_THROW(s.transform(Eigen::MatrixXd::Ones(2, 4)), Error);
}

TEST(Pca, FullRetentionReconstructs) {
    std::mt19937_64 rng(3);
    const Eigen::MatrixXd x = gaussian_matrix(rng, 40, 12);
    const auto p = PCAProjector::fit(x, 1.0);
    EXPECT_EQ(p.components(), 12u);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Eigen::MatrixXd row = x.row(i);
        const Eigen::MatrixXd back = p.reconstruct(p.project(row));
        EXPECT_LE((back - row).norm(), 1e-8 * row.norm());
    }
}

TEST(Pca, PlanarDataNeedsTwoComponents) {
    std::mt19937_64 rng(4);
    const Eigen::MatrixXd coeffs = gaussian_matrix(rng, 200, 2);
    const Eigen::MatrixXd basis = gaussian_matrix(rng, 2, 10);
    const Eigen::MatrixXd x = (coeffs * basis).rowwise() + Eigen::RowVectorXd::LinSpaced(10, -1, 1);
    const auto p = PCAProjector::fit(x, 0.99);
    EXPECT_EQ(p.components(), 2u);
}

TEST(Pca, BasisOrthonormalAndExplainedSorted) {
    std::mt19937_64 rng(5);
    Eigen::MatrixXd x = gaussian_matrix(rng, 60, 9);
    x.col(0) *= 5.0;
    x.col(3) *= 2.0;
    const auto p = PCAProjector::fit(x, 0.9);
    const Eigen::MatrixXd g = p.basis() * p.basis().transpose();
    EXPECT_LE((g - Eigen::MatrixXd::Identity(g.rows(), g.cols())).norm(), 1e-8);
    double total = 0.0;
    for (std::size_t i = 0; i < p.explained().size(); ++i) {
        total += p.explained()[i];
        if (i > 0) EXPECT_LE(p.explained()[i], p.explained()[i - 1]);
    }
    EXPECT_LE(total, 1.0 + 1e-8);
    EXPECT_GE(total, 0.9);
}

TEST(Pca, FullRetentionIsAnIsometryForIsotropicKernels) {
    std::mt19937_64 rng(6);
    const Eigen::MatrixXd x = gaussian_matrix(rng, 50, 20);
    const auto p = PCAProjector::fit(x, 1.0);
    const Eigen::MatrixXd z = p.project(x);
    const Eigen::MatrixXd centred = x.rowwise() - p.center();
    for (const char* name : {"rbf", "matern52"}) {
        KernelSpec spec = KernelSpec::parse(name);
        spec.init_lengthscales(4.0, 1);
        const Eigen::MatrixXd ka = kernel_matrix(spec, centred, centred);
        const Eigen::MatrixXd kb = kernel_matrix(spec, z, z);
        EXPECT_LE((ka - kb).cwiseAbs().maxCoeff(), 1e-8) << name;
    }
    for (Eigen::Index i = 0; i < 10; ++i) {
        for (Eigen::Index j = i + 1; j < 10; ++j) {
            const double a = (x.row(i) - x.row(j)).norm();
            const double b = (z.row(i) - z.row(j)).norm();
            EXPECT_NEAR(a, b, 1e-8 * a);
        }
    }
}

TEST(Pca, RejectsBadArguments) {
    EXPECT_THROW(PCAProjector::fit(Eigen::MatrixXd::Random(1, 3), 1.0), Error);
    EXPECT_THROW(PCAProjector::fit(Eigen::MatrixXd::Random(5, 3), 0.0), Error);
    EXPECT_THROW(PCAProjector::fit(Eigen::MatrixXd::Random(5, 3), 1.5), Error);
}
