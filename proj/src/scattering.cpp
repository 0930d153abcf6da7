#include "bscat/scattering.hpp"

#include "bscat/error.hpp"
#include "fft.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <thread>

namespace bscat {

using detail::cplx;

std::string to_string(Variant v) {
    switch (v) {
        case Variant::windowed: return "windowed";
        case Variant::global: return "global";
        case Variant::global_rotation_invariant: return "rotinv";
    }
    return "unknown";
}

Variant parse_variant(const std::string& name) {
    if (name == "windowed") return Variant::windowed;
    if (name == "global") return Variant::global;
    if (name == "rotinv" || name == "global_rotation_invariant") {
        return Variant::global_rotation_invariant;
    }
    fail(ErrorCode::invalid_config, "unknown scattering variant '" + name + "'");
}

std::vector<Path> enumerate_paths(std::size_t num_scales, std::size_t num_angles,
                                  std::size_t max_order, bool rotation_invariant) {
    std::vector<Path> paths;
    const std::size_t angles = rotation_invariant ? 1 : num_angles;
    if (max_order >= 1) {
        for (std::size_t j1 = 0; j1 < num_scales; ++j1) {
            for (std::size_t l1 = 0; l1 < angles; ++l1) paths.push_back({{{j1, l1}}});
        }
    }
    if (max_order >= 2) {
        for (std::size_t j1 = 0; j1 < num_scales; ++j1) {
            for (std::size_t j2 = j1 + 1; j2 < num_scales; ++j2) {
                for (std::size_t l1 = 0; l1 < angles; ++l1) {
                    for (std::size_t l2 = 0; l2 < angles; ++l2) {
                        paths.push_back({{{j1, l1}, {j2, l2}}});
                    }
                }
            }
        }
    }
    return paths;
}

void ScatteringConfig::validate() const {
    bank.validate();
    if (max_order > 2) {
        fail(ErrorCode::invalid_config,
             "max order " + std::to_string(max_order) + " exceeds the supported maximum of 2");
    }
}

std::size_t ScatteringConfig::spatial_cells() const {
    if (variant != Variant::windowed) return 1;
    const std::size_t side = bank.image_size >> bank.num_scales;
    return side * side;
}

std::uint64_t ScatteringConfig::digest() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "N=%zu;J=%zu;L=%zu;M=%zu;variant=%s;sigma0=%a;xi0=%a;tight=%d",
                  bank.image_size, bank.num_scales, bank.num_angles, max_order,
                  to_string(variant).c_str(), bank.sigma0, bank.xi0, bank.tight_frame ? 1 : 0);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char* p = buf; *p; ++p) {
        h ^= static_cast<unsigned char>(*p);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::size_t count_features(const ScatteringConfig& cfg, std::size_t image_size,
                           std::size_t channels) {
    cfg.validate();
    if (image_size != cfg.bank.image_size) {
        fail(ErrorCode::invalid_config, "image size does not match the filter-bank size");
    }
    const auto paths = enumerate_paths(cfg.bank.num_scales, cfg.bank.num_angles, cfg.max_order,
                                       cfg.rotation_invariant());
    return channels * (1 + paths.size()) * cfg.spatial_cells();
}

FeatureLayout feature_layout(const ScatteringConfig& cfg, std::size_t channels) {
    cfg.validate();
    FeatureLayout layout;
    layout.channels = channels;
    layout.paths = enumerate_paths(cfg.bank.num_scales, cfg.bank.num_angles, cfg.max_order,
                                   cfg.rotation_invariant());
    const std::size_t side =
        cfg.variant == Variant::windowed ? (cfg.bank.image_size >> cfg.bank.num_scales) : 1;
    for (std::size_t c = 0; c < channels; ++c) {
        for (int p = -1; p < static_cast<int>(layout.paths.size()); ++p) {
            for (std::size_t r = 0; r < side; ++r) {
                for (std::size_t q = 0; q < side; ++q) layout.entries.push_back({c, p, r, q});
            }
        }
    }
    return layout;
}

namespace {

// Per-channel scattering on a fixed bank; buffers are reused across calls.
class ChannelScatterer {
public:
    ChannelScatterer(const FilterBank& bank, const ScatteringConfig& cfg)
        : bank_(bank), cfg_(cfg), n_(bank.size()), npix_(n_ * n_),
          stride_(std::size_t{1} << cfg.bank.num_scales), side_(n_ / stride_),
          spectrum_(npix_), work_(npix_), u1_spectrum_(npix_), folded_(side_ * side_) {}

    // Appends this channel's coefficients in layout order.
    void run(std::span<const double> channel, std::vector<double>& out) {
        const std::size_t J = cfg_.bank.num_scales;
        const std::size_t L = cfg_.bank.num_angles;
        const std::size_t cells = cfg_.spatial_cells();
        const bool rotinv = cfg_.rotation_invariant();
        const std::size_t angles = rotinv ? 1 : L;

        for (std::size_t k = 0; k < npix_; ++k) spectrum_[k] = cplx(channel[k], 0.0);
        detail::fft2(spectrum_, n_);

        // Coefficient blocks: order 0, then order-1 paths, then order-2 paths.
        const std::size_t n1 = cfg_.max_order >= 1 ? J * angles : 0;
        std::size_t n2 = 0;
        if (cfg_.max_order >= 2) n2 = (J * (J - 1) / 2) * angles * angles;
        const std::size_t base = out.size();
        out.resize(base + (1 + n1 + n2) * cells, 0.0);
        auto block = [&](std::size_t path_slot) { return out.data() + base + path_slot * cells; };

        average(spectrum_, block(0));
        if (cfg_.max_order == 0) return;

        // Offsets of each order-2 scale pair (j1, j2) within the order-2 block.
        auto pair_slot = [&](std::size_t j1, std::size_t j2) {
            std::size_t idx = 0;
            for (std::size_t a = 0; a < j1; ++a) idx += J - 1 - a;
            return idx + (j2 - j1 - 1);
        };
        const double inv_angles = 1.0 / static_cast<double>(L);

        for (std::size_t j1 = 0; j1 < J; ++j1) {
            for (std::size_t l1 = 0; l1 < L; ++l1) {
                modulus_of_filtered(spectrum_, bank_.psi(j1, l1));
                // work_ now holds U1 in the spatial domain (real part).
                for (std::size_t k = 0; k < npix_; ++k) u1_spectrum_[k] = work_[k];
                detail::fft2(u1_spectrum_, n_);

                const std::size_t slot1 = 1 + j1 * angles + (rotinv ? 0 : l1);
                accumulate_average(u1_spectrum_, block(slot1), rotinv ? inv_angles : 1.0);

                if (cfg_.max_order < 2) continue;
                for (std::size_t j2 = j1 + 1; j2 < J; ++j2) {
                    for (std::size_t l2 = 0; l2 < L; ++l2) {
                        modulus_of_filtered(u1_spectrum_, bank_.psi(j2, l2));
                        const std::size_t slot2 =
                            1 + n1 +
                            (rotinv ? pair_slot(j1, j2)
                                    : (pair_slot(j1, j2) * L + l1) * L + l2);
                        if (cfg_.variant == Variant::windowed) {
                            for (std::size_t k = 0; k < npix_; ++k) {
                                work_[k] = cplx(work_[k].real(), 0.0);
                            }
                            detail::fft2(work_, n_);
                            accumulate_average(work_, block(slot2), 1.0);
                        } else {
                            double sum = 0.0;
                            for (std::size_t k = 0; k < npix_; ++k) sum += work_[k].real();
                            const double weight =
                                rotinv ? inv_angles * inv_angles : 1.0;
                            *block(slot2) += weight * sum / static_cast<double>(npix_);
                        }
                    }
                }
            }
        }
    }

private:
    // work_ <- |IFFT(spec * filter)| / N^2 stored as real values.
    void modulus_of_filtered(const std::vector<cplx>& spec, const FilterBank::Grid& filter) {
        for (std::size_t k = 0; k < npix_; ++k) work_[k] = spec[k] * filter[k];
        detail::ifft2(work_, n_);
        const double norm = 1.0 / static_cast<double>(npix_);
        for (std::size_t k = 0; k < npix_; ++k) work_[k] = cplx(std::abs(work_[k]) * norm, 0.0);
    }

    void average(const std::vector<cplx>& spec, double* dst) {
        std::fill(dst, dst + cfg_.spatial_cells(), 0.0);
        accumulate_average(spec, dst, 1.0);
    }

    // dst += weight * averaged signal whose spectrum is `spec`. Global: spatial
    // mean. Windowed: (signal * phi) sampled every 2^J pixels, computed by
    // folding the filtered spectrum onto the coarse grid.
    void accumulate_average(const std::vector<cplx>& spec, double* dst, double weight) {
        if (cfg_.variant != Variant::windowed) {
            *dst += weight * spec[0].real() / static_cast<double>(npix_);
            return;
        }
        const auto& phi = bank_.phi();
        std::fill(folded_.begin(), folded_.end(), cplx(0.0, 0.0));
        for (std::size_t u = 0; u < n_; ++u) {
            for (std::size_t v = 0; v < n_; ++v) {
                const std::size_t k = u * n_ + v;
                folded_[(u % side_) * side_ + (v % side_)] += spec[k] * phi[k];
            }
        }
        detail::ifft2(folded_, side_);
        const double norm = weight / static_cast<double>(npix_);
        for (std::size_t k = 0; k < side_ * side_; ++k) dst[k] += folded_[k].real() * norm;
    }

    const FilterBank& bank_;
    const ScatteringConfig& cfg_;
    std::size_t n_;
    std::size_t npix_;
    std::size_t stride_;
    std::size_t side_;
    std::vector<cplx> spectrum_;
    std::vector<cplx> work_;
    std::vector<cplx> u1_spectrum_;
    std::vector<cplx> folded_;
};

void check_compatible(const Image& image, const FilterBank& bank, const ScatteringConfig& cfg) {
    cfg.validate();
    if (!(cfg.bank == bank.config())) {
        fail(ErrorCode::invalid_config, "scattering config does not match the filter bank");
    }
    if (image.size() != bank.size()) {
        fail(ErrorCode::size_mismatch, "image is " + std::to_string(image.size()) + "x" +
                                           std::to_string(image.size()) + ", filter bank expects " +
                                           std::to_string(bank.size()));
    }
    if (image.channels() == 0) fail(ErrorCode::size_mismatch, "image has no channels");
    if (!image.all_finite()) fail(ErrorCode::non_finite_input, "image contains non-finite values");
}

FeatureVector scatter_unchecked(const Image& image, ChannelScatterer& worker,
                                const std::shared_ptr<const FeatureLayout>& layout) {
    FeatureVector fv;
    fv.channel_count = image.channels();
    fv.layout = layout;
    fv.values.reserve(layout ? layout->entries.size() : 0);
    for (std::size_t c = 0; c < image.channels(); ++c) worker.run(image.channel(c), fv.values);
    return fv;
}

}  // namespace

FeatureVector scatter(const Image& image, const FilterBank& bank, const ScatteringConfig& cfg) {
    check_compatible(image, bank, cfg);
    ChannelScatterer worker(bank, cfg);
    auto layout = std::make_shared<const FeatureLayout>(feature_layout(cfg, image.channels()));
    return scatter_unchecked(image, worker, layout);
}

std::vector<FeatureVector> scatter_batch(std::span<const Image> images, const FilterBank& bank,
                                         const ScatteringConfig& cfg, std::size_t threads) {
    std::vector<FeatureVector> out(images.size());
    if (images.empty()) return out;
    for (std::size_t i = 0; i < images.size(); ++i) {
        try {
            check_compatible(images[i], bank, cfg);
        } catch (const Error& e) {
            fail(e.code(), "image " + std::to_string(i) + ": " + e.what());
        }
    }
    // Layouts are shared between images with the same channel count.
    std::vector<std::shared_ptr<const FeatureLayout>> layouts;
    auto layout_for = [&](std::size_t channels) {
        if (layouts.size() <= channels) layouts.resize(channels + 1);
        if (!layouts[channels]) {
            layouts[channels] = std::make_shared<const FeatureLayout>(feature_layout(cfg, channels));
        }
        return layouts[channels];
    };
    for (const auto& img : images) layout_for(img.channels());

    const std::size_t workers = std::clamp<std::size_t>(threads, 1, images.size());
    auto run_range = [&](std::size_t begin, std::size_t step) {
        ChannelScatterer worker(bank, cfg);
        for (std::size_t i = begin; i < images.size(); i += step) {
            out[i] = scatter_unchecked(images[i], worker, layouts[images[i].channels()]);
        }
    };
    if (workers == 1) {
        run_range(0, 1);
        return out;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                run_range(w, workers);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

}  // namespace bscat
