#include "bscat/error.hpp"
#include "bscat/kernels.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace bscat;
using bscat::testing::brute_kernel;
using bscat::testing::finite_difference;

namespace {

Eigen::MatrixXd gaussian_matrix(std::mt19937_64& rng, Eigen::Index n, Eigen::Index d) {
    std::normal_distribution<double> g;
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    return x;
}

KernelSpec make_spec(const std::string& name, Eigen::Index dim, std::mt19937_64& rng) {
    KernelSpec s = KernelSpec::parse(name);
    std::uniform_real_distribution<double> u(-0.5, 0.8);
    s.init_lengthscales(1.0, static_cast<std::size_t>(dim));
    for (Eigen::Index i = 0; i < s.log_lengthscales.size(); ++i) s.log_lengthscales(i) = u(rng);
    s.log_signal_variance = u(rng);
    return s;
}

const char* kAllKernels[] = {"rbf", "rbf,ard", "matern52", "matern52,ard", "linear", "linear,ard"};

}  // namespace

TEST(Kernels, ParseAndName) {
    EXPECT_EQ(KernelSpec::parse("rbf").name(), "rbf");
    EXPECT_EQ(KernelSpec::parse("matern52,ard").name(), "matern52,ard");
    EXPECT_TRUE(KernelSpec::parse("linear,ard").ard);
    EXPECT_THROW(KernelSpec::parse("cosine"), Error);
    EXPECT_THROW(KernelSpec::parse("rbf,iso"), Error);
}

TEST(Kernels, MatrixMatchesExplicitLoops) {
    std::mt19937_64 rng(1);
    for (const char* name : kAllKernels) {
        const auto spec = make_spec(name, 4, rng);
        const Eigen::MatrixXd a = gaussian_matrix(rng, 7, 4);
        const Eigen::MatrixXd b = gaussian_matrix(rng, 5, 4);
        EXPECT_LE((kernel_matrix(spec, a, b) - brute_kernel(spec, a, b)).cwiseAbs().maxCoeff(), 1e-12)
            << name;
        const Eigen::MatrixXd kaa = kernel_matrix(spec, a, a);
        EXPECT_LE((kaa - kaa.transpose()).cwiseAbs().maxCoeff(), 0.0) << name;
        EXPECT_LE((kernel_diagonal(spec, a) - kaa.diagonal()).cwiseAbs().maxCoeff(), 1e-12) << name;
    }
}

TEST(Kernels, StationaryDiagonalIsSignalVariance) {
    std::mt19937_64 rng(2);
    for (const char* name : {"rbf", "matern52,ard"}) {
        const auto spec = make_spec(name, 3, rng);
        const Eigen::MatrixXd a = gaussian_matrix(rng, 6, 3) * 100.0;
        const Eigen::MatrixXd k = kernel_matrix(spec, a, a);
        for (Eigen::Index i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(k(i, i), std::exp(spec.log_signal_variance));
    }
}

TEST(Kernels, GradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(3);
    for (const char* name : kAllKernels) {
        const auto spec = make_spec(name, 3, rng);
        const Eigen::MatrixXd a = gaussian_matrix(rng, 5, 3);
        const Eigen::MatrixXd b = gaussian_matrix(rng, 4, 3);
        const auto grads = kernel_gradients(spec, a, b);
        ASSERT_EQ(grads.size(), spec.num_params());
        for (std::size_t p = 0; p < spec.num_params(); ++p) {
            for (Eigen::Index i = 0; i < a.rows(); ++i) {
                for (Eigen::Index j = 0; j < b.rows(); ++j) {
                    auto f = [&](const Eigen::VectorXd& th) {
                        KernelSpec s = spec;
                        s.set_params(th);
                        return kernel_matrix(s, a, b)(i, j);
                    };
                    const double fd = finite_difference(f, spec.params())(static_cast<Eigen::Index>(p));
                    EXPECT_NEAR(grads[p](i, j), fd, 1e-6 * (1.0 + std::abs(fd))) << name << " p=" << p;
                }
            }
        }
    }
}

TEST(Kernels, VectorJacobianProductsMatchDenseContraction) {
    std::mt19937_64 rng(4);
    for (const char* name : kAllKernels) {
        const auto spec = make_spec(name, 3, rng);
        const Eigen::MatrixXd a = gaussian_matrix(rng, 6, 3);
        const Eigen::MatrixXd b = gaussian_matrix(rng, 4, 3);
        const Eigen::MatrixXd up = gaussian_matrix(rng, 6, 4);
        const auto vjp = kernel_vjp(spec, a, b, up, true);
        const auto grads = kernel_gradients(spec, a, b);
        for (std::size_t p = 0; p < grads.size(); ++p) {
            EXPECT_NEAR(vjp.params(static_cast<Eigen::Index>(p)), up.cwiseProduct(grads[p]).sum(), 1e-10)
                << name;
        }
        // Input gradients against central differences of <up, K(a, b)>.
        auto contract_a = [&](const Eigen::VectorXd& flat) {
            const Eigen::MatrixXd aa = Eigen::Map<const Eigen::MatrixXd>(flat.data(), a.rows(), a.cols());
            return up.cwiseProduct(kernel_matrix(spec, aa, b)).sum();
        };
        auto contract_b = [&](const Eigen::VectorXd& flat) {
            const Eigen::MatrixXd bb = Eigen::Map<const Eigen::MatrixXd>(flat.data(), b.rows(), b.cols());
            return up.cwiseProduct(kernel_matrix(spec, a, bb)).sum();
        };
        const Eigen::VectorXd fa =
            finite_difference(contract_a, Eigen::Map<const Eigen::VectorXd>(a.data(), a.size()));
        const Eigen::VectorXd fb =
            finite_difference(contract_b, Eigen::Map<const Eigen::VectorXd>(b.data(), b.size()));
        EXPECT_LE((Eigen::Map<const Eigen::VectorXd>(vjp.da.data(), vjp.da.size()) - fa).norm(),
                  1e-6 * (1.0 + fa.norm()))
            << name;
        EXPECT_LE((Eigen::Map<const Eigen::VectorXd>(vjp.db.data(), vjp.db.size()) - fb).norm(),
                  1e-6 * (1.0 + fb.norm()))
            << name;
    }
}

TEST(Kernels, GramCacheMatchesBruteForceAndDenseContraction) {
    std::mt19937_64 rng(8);
    for (const char* name : kAllKernels) {
        const auto spec = make_spec(name, 4, rng);
        const Eigen::MatrixXd x = gaussian_matrix(rng, 7, 4);
        const Eigen::MatrixXd up = gaussian_matrix(rng, 7, 7);  // deliberately not symmetric
        const GramCache gram(spec, x);
        EXPECT_LE((gram.matrix() - brute_kernel(spec, x, x)).cwiseAbs().maxCoeff(), 1e-12) << name;
        const Eigen::VectorXd g = gram.vjp(up);
        const auto grads = kernel_gradients(spec, x, x);
        ASSERT_EQ(static_cast<std::size_t>(g.size()), grads.size());
        for (std::size_t p = 0; p < grads.size(); ++p) {
            EXPECT_NEAR(g(static_cast<Eigen::Index>(p)), up.cwiseProduct(grads[p]).sum(), 1e-10) << name;
        }
    }
}

TEST(Kernels, DiagonalVjpMatchesFiniteDifferences) {
    std::mt19937_64 rng(5);
    for (const char* name : kAllKernels) {
        const auto spec = make_spec(name, 2, rng);
        const Eigen::MatrixXd a = gaussian_matrix(rng, 5, 2);
        const Eigen::VectorXd up = gaussian_matrix(rng, 5, 1);
        const auto vjp = kernel_diagonal_vjp(spec, a, up, true);
        auto f = [&](const Eigen::VectorXd& th) {
            KernelSpec s = spec;
            s.set_params(th);
            return up.dot(kernel_diagonal(s, a));
        };
        const Eigen::VectorXd fd = finite_difference(f, spec.params());
        EXPECT_LE((vjp.params - fd).norm(), 1e-6 * (1.0 + fd.norm())) << name;
        auto g = [&](const Eigen::VectorXd& flat) {
            const Eigen::MatrixXd aa = Eigen::Map<const Eigen::MatrixXd>(flat.data(), a.rows(), a.cols());
            return up.dot(kernel_diagonal(spec, aa));
        };
        const Eigen::VectorXd fa = finite_difference(g, Eigen::Map<const Eigen::VectorXd>(a.data(), a.size()));
        EXPECT_LE((Eigen::Map<const Eigen::VectorXd>(vjp.da.data(), vjp.da.size()) - fa).norm(),
                  1e-6 * (1.0 + fa.norm()))
            << name;
    }
}

TEST(Kernels, ValidateCatchesShapeErrors) {
    KernelSpec s = KernelSpec::parse("rbf,ard");
    s.init_lengthscales(1.0, 3);
    EXPECT_NO_THROW(s.validate(3));
    EXPECT_THROW(s.validate(4), Error);
    EXPECT_THROW(kernel_matrix(s, Eigen::MatrixXd::Ones(2, 3), Eigen::MatrixXd::Ones(2, 2)), Error);
}
