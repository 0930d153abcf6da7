#include "bscat/filterbank.hpp"

#include "bscat/error.hpp"
#include "bscat/log.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace bscat {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Kymatio's angular elongation: the envelope is 1/slant times wider across the
// orientation than along it in space, i.e. slant times narrower in frequency.
double slant_for(std::size_t num_angles) { return 4.0 / static_cast<double>(num_angles); }

// Anisotropic Gaussian exp(-sigma^2/2 (u^2 + v^2/slant^2)) centred at
// (c1, c2), where (u, v) are coordinates along / across theta.
double envelope(double w1, double w2, double c1, double c2, double sigma, double theta,
                double slant) {
    const double d1 = w1 - c1;
    const double d2 = w2 - c2;
    const double u = std::cos(theta) * d1 + std::sin(theta) * d2;
    const double v = -std::sin(theta) * d1 + std::cos(theta) * d2;
    return std::exp(-0.5 * sigma * sigma * (u * u + (v * v) / (slant * slant)));
}

// Number of 2*pi images needed on each side so the dropped terms are < 1e-30.
int periodization_extent(double sigma, double slant, double centre) {
    const double widest = std::max(1.0, slant) / sigma;
    return 1 + static_cast<int>(std::ceil((centre + 12.0 * widest) / kTwoPi));
}

double periodized(double w1, double w2, double c1, double c2, double sigma, double theta,
                  double slant, int extent) {
    double total = 0.0;
    for (int a = -extent; a <= extent; ++a) {
        for (int b = -extent; b <= extent; ++b) {
            total += envelope(w1 + kTwoPi * a, w2 + kTwoPi * b, c1, c2, sigma, theta, slant);
        }
    }
    return total;
}

// Signed DFT frequency of index k on an n-point grid, in rad/sample.
double grid_frequency(std::size_t k, std::size_t n) {
    const auto ki = static_cast<long>(k);
    const auto ni = static_cast<long>(n);
    const long signed_k = ki < (ni + 1) / 2 ? ki : ki - ni;
    return kTwoPi * static_cast<double>(signed_k) / static_cast<double>(n);
}

std::size_t negate_index(std::size_t k, std::size_t n) { return (n - k) % n; }

}  // namespace

void FilterBankConfig::validate() const {
    if (!is_power_of_two(image_size) || image_size < 2) {
        fail(ErrorCode::invalid_config,
             "image size " + std::to_string(image_size) + " is not a power of two >= 2");
    }
    if (num_scales < 1 || (std::size_t{1} << num_scales) > image_size) {
        fail(ErrorCode::invalid_config, "number of scales J=" + std::to_string(num_scales) +
                                            " violates 2 <= 2^J <= N=" +
                                            std::to_string(image_size));
    }
    if (num_angles < 1) fail(ErrorCode::invalid_config, "number of angles L must be >= 1");
    if (!(sigma0 > 0.0) || !std::isfinite(sigma0)) {
        fail(ErrorCode::invalid_config, "wavelet bandwidth sigma0 must be positive");
    }
    if (!(xi0 > 0.0) || !(xi0 < std::numbers::pi)) {
        fail(ErrorCode::invalid_config, "centre frequency xi0 must lie in (0, pi)");
    }
}

double morlet_hat(double wx, double wy, std::size_t j, double theta, std::size_t num_angles,
                  double sigma0, double xi0) {
    const double scale = std::ldexp(1.0, static_cast<int>(j));
    const double sigma = sigma0 * scale;
    const double xi = xi0 / scale;
    const double slant = slant_for(num_angles);
    const double c1 = xi * std::cos(theta);
    const double c2 = xi * std::sin(theta);
    const double bump0 = envelope(0.0, 0.0, c1, c2, sigma, theta, slant);
    return envelope(wx, wy, c1, c2, sigma, theta, slant) -
           bump0 * envelope(wx, wy, 0.0, 0.0, sigma, theta, slant);
}

FilterBank::FilterBank(const FilterBankConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t n = cfg_.image_size;
    const std::size_t npix = n * n;
    const double slant = slant_for(cfg_.num_angles);

    psi_.reserve(cfg_.num_scales * cfg_.num_angles);
    for (std::size_t j = 0; j < cfg_.num_scales; ++j) {
        const double scale = std::ldexp(1.0, static_cast<int>(j));
        const double sigma = cfg_.sigma0 * scale;
        const double xi = cfg_.xi0 / scale;
        const int extent = periodization_extent(sigma, slant, xi);
        for (std::size_t l = 0; l < cfg_.num_angles; ++l) {
            const double theta = angle(l);
            const double c1 = xi * std::cos(theta);
            const double c2 = xi * std::sin(theta);
            Grid bump(npix);
            Grid env(npix);
            for (std::size_t u = 0; u < n; ++u) {
                const double w1 = grid_frequency(u, n);
                for (std::size_t v = 0; v < n; ++v) {
                    const double w2 = grid_frequency(v, n);
                    bump[u * n + v] = periodized(w1, w2, c1, c2, sigma, theta, slant, extent);
                    env[u * n + v] = periodized(w1, w2, 0.0, 0.0, sigma, theta, slant, extent);
                }
            }
            // Zero-mean correction: psi_hat(0) = 0 on the periodized grid.
            const double kappa = bump[0] / env[0];
            Grid psi(npix);
            for (std::size_t k = 0; k < npix; ++k) psi[k] = bump[k] - kappa * env[k];
            psi[0] = 0.0;
            psi_.push_back(std::move(psi));
        }
    }

    const double sigma_phi = cfg_.sigma0 * std::ldexp(1.0, static_cast<int>(cfg_.num_scales) - 1);
    const int phi_extent = periodization_extent(sigma_phi, 1.0, 0.0);
    phi_.assign(npix, 0.0);
    for (std::size_t u = 0; u < n; ++u) {
        const double w1 = grid_frequency(u, n);
        for (std::size_t v = 0; v < n; ++v) {
            phi_[u * n + v] =
                periodized(w1, grid_frequency(v, n), 0.0, 0.0, sigma_phi, 0.0, 1.0, phi_extent);
        }
    }
    const double dc = phi_[0];
    for (double& x : phi_) x /= dc;

    // W(w) = 1/2 sum (psi(w)^2 + psi(-w)^2), symmetric under w -> -w.
    Grid band(npix, 0.0);
    for (const Grid& psi : psi_) {
        for (std::size_t u = 0; u < n; ++u) {
            for (std::size_t v = 0; v < n; ++v) {
                const double a = psi[u * n + v];
                const double b = psi[negate_index(u, n) * n + negate_index(v, n)];
                band[u * n + v] += 0.5 * (a * a + b * b);
            }
        }
    }

    if (cfg_.tight_frame) {
        for (std::size_t k = 0; k < npix; ++k) {
            const double deficit = std::max(0.0, 1.0 - phi_[k] * phi_[k]);
            const double gain = band[k] > 1e-300 ? std::sqrt(deficit / band[k]) : 0.0;
            for (Grid& psi : psi_) psi[k] *= gain;
        }
    } else {
        double ratio = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < npix; ++k) {
            if (band[k] > 1e-300) {
                ratio = std::min(ratio, std::max(0.0, 1.0 - phi_[k] * phi_[k]) / band[k]);
            }
        }
        const double gain = std::isfinite(ratio) ? std::sqrt(ratio) : 0.0;
        for (Grid& psi : psi_) {
            for (double& x : psi) x *= gain;
        }
    }

    update_bounds();
    if (lp_min_ < kFrameLowerBound) {
        std::ostringstream msg;
        msg << "filter bank (N=" << n << ", J=" << cfg_.num_scales << ", L=" << cfg_.num_angles
            << ") has Littlewood-Paley minimum " << lp_min_ << " < " << kFrameLowerBound;
        log_warn(msg.str());
    }
}

double FilterBank::angle(std::size_t l) const noexcept {
    return std::numbers::pi * static_cast<double>(l) / static_cast<double>(cfg_.num_angles);
}

FilterBank FilterBank::with_phi(Grid phi) const {
    if (phi.size() != phi_.size()) fail(ErrorCode::size_mismatch, "low-pass grid size mismatch");
    FilterBank copy = *this;
    copy.phi_ = std::move(phi);
    copy.update_bounds();
    return copy;
}

void FilterBank::update_bounds() {
    const auto report = littlewood_paley_report(*this);
    lp_min_ = report.min;
    lp_max_ = report.max;
}

std::vector<double> littlewood_paley_sum(const FilterBank& bank) {
    const std::size_t n = bank.size();
    std::vector<double> lp(n * n, 0.0);
    for (std::size_t k = 0; k < n * n; ++k) lp[k] = bank.phi()[k] * bank.phi()[k];
    for (std::size_t j = 0; j < bank.num_scales(); ++j) {
        for (std::size_t l = 0; l < bank.num_angles(); ++l) {
            const auto& psi = bank.psi(j, l);
            for (std::size_t u = 0; u < n; ++u) {
                for (std::size_t v = 0; v < n; ++v) {
                    const double a = psi[u * n + v];
                    const double b = psi[negate_index(u, n) * n + negate_index(v, n)];
                    lp[u * n + v] += 0.5 * (a * a + b * b);
                }
            }
        }
    }
    return lp;
}

LittlewoodPaleyReport littlewood_paley_report(const FilterBank& bank) {
    const std::size_t n = bank.size();
    const auto lp = littlewood_paley_sum(bank);
    const std::size_t corner = (n / 2) * n + n / 2;

    LittlewoodPaleyReport r;
    r.image_size = n;
    r.grid_points = lp.size();
    r.min = std::numeric_limits<double>::infinity();
    r.max = -std::numeric_limits<double>::infinity();
    r.min_with_corner = std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (std::size_t k = 0; k < lp.size(); ++k) {
        sum += lp[k];
        r.min_with_corner = std::min(r.min_with_corner, lp[k]);
        r.max = std::max(r.max, lp[k]);
        if (k == corner && n > 1) continue;
        if (lp[k] < r.min) {
            r.min = lp[k];
            r.argmin_row = k / n;
            r.argmin_col = k % n;
        }
    }
    r.mean = sum / static_cast<double>(lp.size());
    r.frame_ok = r.max <= 1.0 + kFrameUpperSlack && r.min >= kFrameLowerBound;
    return r;
}

std::string LittlewoodPaleyReport::to_json() const {
    nlohmann::ordered_json j;
    j["image_size"] = image_size;
    j["grid_points"] = grid_points;
    j["lp_min"] = min;
    j["lp_max"] = max;
    j["lp_mean"] = mean;
    j["argmin"] = {argmin_row, argmin_col};
    j["lp_min_including_corner"] = min_with_corner;
    j["lower_bound"] = kFrameLowerBound;
    j["upper_bound"] = 1.0 + kFrameUpperSlack;
    j["frame_ok"] = frame_ok;
    return j.dump(2);
}

std::string LittlewoodPaleyReport::to_text() const {
    std::ostringstream out;
    out.precision(10);
    out << "grid points      " << grid_points << " (" << image_size << "x" << image_size << ")\n"
        << "LP min           " << min << " at (" << argmin_row << ", " << argmin_col << ")\n"
        << "LP max           " << max << "\n"
        << "LP mean          " << mean << "\n"
        << "LP min (corner)  " << min_with_corner << "\n"
        << "frame bound      [" << kFrameLowerBound << ", 1 + " << kFrameUpperSlack << "] "
        << (frame_ok ? "OK" : "VIOLATED") << "\n";
    return out.str();
}

}  // namespace bscat
