#pragma once

// Oracles and fixtures shared by the unit and acceptance suites. Everything
// here is deliberately naive: dense inverses, explicit loops, central
// differences. It should not share code paths with the library.

#include "bscat/image.hpp"
#include "bscat/kernels.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

namespace bscat::testing {

inline Image random_image(std::mt19937_64& rng, std::size_t n, std::size_t channels = 1) {
    std::normal_distribution<double> g;
    Image img(channels, n);
    for (double& v : img.data()) v = g(rng);
    return img;
}

/// Closed-form smooth test function: a few low-frequency cosines plus a
/// Gaussian bump. Rendering under a dilation evaluates the formula at the
/// displaced points, so no resampling error enters deformation tests.
struct SmoothField {
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<Wave> waves;
    double bump_r = 0.0, bump_c = 0.0, bump_s = 1.0;

    static SmoothField random(std::mt19937_64& rng, std::size_t n) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        SmoothField f;
        for (int w = 0; w < 4; ++w) {
            f.waves.push_back({std::floor(1 + 3 * u(rng)), std::floor(-3 + 7 * u(rng)),
                               2.0 * std::numbers::pi * u(rng), 0.5 + u(rng)});
        }
        f.bump_r = static_cast<double>(n) * u(rng);
        f.bump_c = static_cast<double>(n) * u(rng);
        f.bump_s = 2.0 + 3.0 * u(rng);
        return f;
    }

    [[nodiscard]] double operator()(double r, double c, double n) const {
        double v = 0.0;
        for (const auto& w : waves) {
            v += w.amp * std::cos(2.0 * std::numbers::pi * (w.fx * r + w.fy * c) / n + w.phase);
        }
        const double dr = r - bump_r;
        const double dc = c - bump_c;
        return v + 2.0 * std::exp(-(dr * dr + dc * dc) / (2 * bump_s * bump_s));
    }
};

/// Samples g(centre + (1 - s)(x - centre)), i.e. g(x - tau(x)) for the
/// dilation field tau(x) = s (x - centre).
template <typename Field>
Image render_dilated(const Field& g, std::size_t n, double s) {
    const double centre = 0.5 * static_cast<double>(n);
    Image img(1, n);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
            img(0, r, c) = g(centre + (1.0 - s) * (static_cast<double>(r) - centre),
                             centre + (1.0 - s) * (static_cast<double>(c) - centre),
                             static_cast<double>(n));
        }
    }
    return img;
}

inline Image smooth_image(std::mt19937_64& rng, std::size_t n) {
    return render_dilated(SmoothField::random(rng, n), n, 0.0);
}

/// Oscillation of frequency xi (rad/pixel) along columns under a Gaussian
/// envelope of width `envelope` pixels centred in the image.
struct GaborField {
    double xi = 0.0;
    double envelope = 1.0;
    [[nodiscard]] double operator()(double r, double c, double n) const {
        const double dr = r - 0.5 * n;
        const double dc = c - 0.5 * n;
        return std::cos(xi * dc) * std::exp(-(dr * dr + dc * dc) / (2 * envelope * envelope));
    }
};

inline Image circular_shift(const Image& f, long dr, long dc) {
    const auto n = static_cast<long>(f.size());
    Image out(f.channels(), f.size());
    for (std::size_t ch = 0; ch < f.channels(); ++ch) {
        for (long r = 0; r < n; ++r) {
            for (long c = 0; c < n; ++c) {
                out(ch, static_cast<std::size_t>(((r + dr) % n + n) % n),
                    static_cast<std::size_t>(((c + dc) % n + n) % n)) = f(ch, r, c);
            }
        }
    }
    return out;
}

/// Exact 90-degree rotation about the grid (index map, no resampling).
inline Image rotate90(const Image& f) {
    const std::size_t n = f.size();
    Image out(f.channels(), n);
    for (std::size_t ch = 0; ch < f.channels(); ++ch) {
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < n; ++c) out(ch, c, n - 1 - r) = f(ch, r, c);
        }
    }
    return out;
}

/// |DFT(f)| / N^2 by direct summation (channel 0), the Fourier-modulus
/// representation used as a negative control. Same norm scale as rms().
inline std::vector<double> fourier_modulus(const Image& f) {
    const std::size_t n = f.size();
    const double tau = 2.0 * std::numbers::pi / static_cast<double>(n);
    std::vector<double> out(n * n);
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = 0; v < n; ++v) {
            double re = 0.0;
            double im = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < n; ++c) {
                    const double ph = -tau * static_cast<double>((u * r + v * c) % n);
                    re += f(0, r, c) * std::cos(ph);
                    im += f(0, r, c) * std::sin(ph);
                }
            }
            out[u * n + v] = std::hypot(re, im) / static_cast<double>(n * n);
        }
    }
    return out;
}

/// Root-mean-square pixel value over all channels.
inline double rms(const Image& f) {
    double s = 0.0;
    for (double v : f.data()) s += v * v;
    return std::sqrt(s / static_cast<double>(f.data().size()));
}

inline double l2(const std::vector<double>& a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return std::sqrt(s);
}

inline double l2_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

/// Central differences of a scalar function.
inline Eigen::VectorXd finite_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                         const Eigen::VectorXd& x, double h = 1e-5) {
    Eigen::VectorXd g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Eigen::VectorXd p = x;
        Eigen::VectorXd m = x;
        p(i) += h;
        m(i) -= h;
        g(i) = (f(p) - f(m)) / (2.0 * h);
    }
    return g;
}

/// Kernel by explicit double loop; independent of the GEMM path.
inline double kernel_entry(const KernelSpec& spec, const Eigen::RowVectorXd& a,
                           const Eigen::RowVectorXd& b) {
    const double sf2 = std::exp(spec.log_signal_variance);
    auto ell = [&](Eigen::Index d) {
        return std::exp(spec.ard ? spec.log_lengthscales(d) : spec.log_lengthscales(0));
    };
    if (spec.family == KernelFamily::linear) {
        double s = 0.0;
        for (Eigen::Index d = 0; d < a.size(); ++d) s += a(d) * b(d) / (ell(d) * ell(d));
        return sf2 * s;
    }
    double r2 = 0.0;
    for (Eigen::Index d = 0; d < a.size(); ++d) {
        const double z = (a(d) - b(d)) / ell(d);
        r2 += z * z;
    }
    if (spec.family == KernelFamily::rbf) return sf2 * std::exp(-0.5 * r2);
    const double r = std::sqrt(r2);
    const double s5 = std::sqrt(5.0) * r;
    return sf2 * (1.0 + s5 + 5.0 * r2 / 3.0) * std::exp(-s5);
}

inline Eigen::MatrixXd brute_kernel(const KernelSpec& spec, const Eigen::MatrixXd& a,
                                    const Eigen::MatrixXd& b) {
    Eigen::MatrixXd k(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < b.rows(); ++j) k(i, j) = kernel_entry(spec, a.row(i), b.row(j));
    }
    return k;
}

/// log N(y; 0, K + noise I) through an explicit inverse and determinant.
inline double brute_lml(const KernelSpec& spec, double noise, const Eigen::MatrixXd& x,
                        const Eigen::VectorXd& y) {
    Eigen::MatrixXd k = brute_kernel(spec, x, x);
    k.diagonal().array() += noise;
    const Eigen::MatrixXd inv = k.inverse();
    const double logdet = std::log(k.determinant());
    return -0.5 * y.dot(inv * y) - 0.5 * logdet - 0.5 * y.size() * std::log(2.0 * std::numbers::pi);
}

struct BrutePredictive {
    Eigen::VectorXd mean;
    Eigen::VectorXd variance;  // includes noise
};

inline BrutePredictive brute_predict(const KernelSpec& spec, double noise, const Eigen::MatrixXd& x,
                                     const Eigen::VectorXd& y, const Eigen::MatrixXd& xs) {
    Eigen::MatrixXd k = brute_kernel(spec, x, x);
    k.diagonal().array() += noise;
    const Eigen::MatrixXd inv = k.inverse();
    const Eigen::MatrixXd ks = brute_kernel(spec, x, xs);
    BrutePredictive p;
    p.mean = ks.transpose() * inv * y;
    p.variance.resize(xs.rows());
    for (Eigen::Index i = 0; i < xs.rows(); ++i) {
        p.variance(i) = kernel_entry(spec, xs.row(i), xs.row(i)) -
                        ks.col(i).dot(inv * ks.col(i)) + noise;
    }
    return p;
}

inline double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace bscat::testing
