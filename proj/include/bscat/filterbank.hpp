#pragma once

#include <complex>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

namespace bscat {

struct FilterBankConfig {
    std::size_t image_size = 32;   // N, power of two
    std::size_t num_scales = 3;    // J, 2 <= 2^J <= N
    std::size_t num_angles = 8;    // L
    double sigma0 = 0.8;           // spatial bandwidth of the finest wavelet, pixels
    double xi0 = 3.0 * std::numbers::pi / 4.0;  // finest centre frequency, rad/pixel
    // Rescale band-pass filters per frequency so the Littlewood-Paley sum is 1.
    bool tight_frame = true;

    void validate() const;
    bool operator==(const FilterBankConfig&) const = default;
};

/// Lower frame bound below which a bank is reported as mis-parameterized.
inline constexpr double kFrameLowerBound = 0.90;
inline constexpr double kFrameUpperSlack = 1e-6;

/// Fourier-domain filters on the N x N DFT grid (index (u, v) = row, column
/// frequency, FFT ordering). Immutable after construction.
class FilterBank {
public:
    using Grid = std::vector<double>;

    explicit FilterBank(const FilterBankConfig& cfg);

    [[nodiscard]] const FilterBankConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] std::size_t size() const noexcept { return cfg_.image_size; }
    [[nodiscard]] std::size_t num_scales() const noexcept { return cfg_.num_scales; }
    [[nodiscard]] std::size_t num_angles() const noexcept { return cfg_.num_angles; }
    [[nodiscard]] std::size_t num_wavelets() const noexcept { return psi_.size(); }

    /// psi_hat for scale j (0 = finest) and angle index l. The Morlet family is
    /// real in the Fourier domain, so a real grid is stored.
    [[nodiscard]] const Grid& psi(std::size_t j, std::size_t l) const {
        return psi_.at(j * cfg_.num_angles + l);
    }
    [[nodiscard]] const Grid& phi() const noexcept { return phi_; }

    [[nodiscard]] double lp_min() const noexcept { return lp_min_; }
    [[nodiscard]] double lp_max() const noexcept { return lp_max_; }

    /// Angle of orientation index l: pi * l / L.
    [[nodiscard]] double angle(std::size_t l) const noexcept;

    /// Copy with the low-pass replaced (diagnostic use).
    [[nodiscard]] FilterBank with_phi(Grid phi) const;

private:
    FilterBank() = default;
    void update_bounds();

    FilterBankConfig cfg_;
    std::vector<Grid> psi_;
    Grid phi_;
    double lp_min_ = 0.0;
    double lp_max_ = 0.0;
};

/// Unperiodized, untightened Morlet prototype evaluated at continuous
/// frequency (wx, wy): Gaussian bump at xi_j e_theta minus a multiple of the
/// centred envelope so the value at the origin is exactly zero.
double morlet_hat(double wx, double wy, std::size_t j, double theta, std::size_t num_angles,
                  double sigma0 = 0.8, double xi0 = 3.0 * std::numbers::pi / 4.0);

/// Littlewood-Paley sum |phi(w)|^2 + 1/2 sum_{j,l} (|psi(w)|^2 + |psi(-w)|^2)
/// at every grid point, row-major.
std::vector<double> littlewood_paley_sum(const FilterBank& bank);

struct LittlewoodPaleyReport {
    std::size_t image_size = 0;
    std::size_t grid_points = 0;
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
    // Grid location (row, column) of the minimum, excluding the corner Nyquist point.
    std::size_t argmin_row = 0;
    std::size_t argmin_col = 0;
    double min_with_corner = 0.0;
    bool frame_ok = false;

    [[nodiscard]] std::string to_json() const;
    [[nodiscard]] std::string to_text() const;
};

LittlewoodPaleyReport littlewood_paley_report(const FilterBank& bank);

}  // namespace bscat
