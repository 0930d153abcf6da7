#pragma once

#include <Eigen/Dense>

#include <cmath>

namespace bscat {

struct AdamConfig {
    double learning_rate = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam minimizer state over a flat parameter vector.
class Adam {
public:
    Adam(Eigen::Index size, AdamConfig cfg)
        : cfg_(cfg), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

    /// One descent step on `params` given the gradient of the loss.
    void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
        ++t_;
        m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
        v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        params.array() -= cfg_.learning_rate * (m_.array() / c1) /
                          ((v_.array() / c2).sqrt() + cfg_.epsilon);
    }

    [[nodiscard]] long steps() const noexcept { return t_; }

private:
    AdamConfig cfg_;
    Eigen::VectorXd m_;
    Eigen::VectorXd v_;
    long t_ = 0;
};

}  // namespace bscat
