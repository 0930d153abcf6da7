#pragma once

#include "bscat/image.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bscat {

// ---------------------------------------------------------------------------
// Synthetic generators

enum class SynthTask { blob_count, charge_energy };
std::string to_string(SynthTask t);
SynthTask parse_task(const std::string& name);

enum class Split { train, test };
std::string to_string(Split s);
Split parse_split(const std::string& name);

/// Distribution parameters for one split. Blob fields drive blob_count,
/// charge fields drive charge_energy; lengths are in pixels.
struct ShiftParams {
    std::size_t blob_count_min = 1;
    std::size_t blob_count_max = 10;
    double blob_intensity_min = 0.6;
    double blob_intensity_max = 1.2;
    double blob_sigma_min = 1.2;
    double blob_sigma_max = 2.5;
    double background_amplitude = 0.1;
    /// Test hook: render exactly this many blobs.
    std::optional<std::size_t> forced_blob_count;

    std::size_t charge_count_min = 2;
    std::size_t charge_count_max = 6;
    int charge_value_max = 4;            // charges drawn from {1..max}
    double placement_radius = 8.0;
    double min_separation = 2.0;
    double valence_width = 2.0;
    double core_width = 0.8;

    void validate(SynthTask task, std::size_t image_size) const;
    bool operator==(const ShiftParams&) const = default;
};

struct SynthSpec {
    SynthTask task = SynthTask::blob_count;
    std::size_t image_size = 32;
    std::size_t channels = 1;  // 1 for blob_count, 3 for charge_energy
    ShiftParams train;
    ShiftParams test;
    std::uint64_t seed = 0;

    /// Defaults for `task` with test parameters moved by `preset`:
    /// none, intensity, texture, scale (blob_count) or none, radius,
    /// charge (charge_energy).
    static SynthSpec preset(SynthTask task, const std::string& preset, std::uint64_t seed,
                            std::size_t image_size = 32);
    static std::vector<std::string> preset_names(SynthTask task);
    void validate() const;
    [[nodiscard]] const ShiftParams& params(Split s) const { return s == Split::train ? train : test; }
};

struct Sample {
    Image image;
    double target = 0.0;
};

/// Sample `index` of `split`; a pure function of (spec, split, index).
Sample synth_sample(const SynthSpec& spec, Split split, std::size_t index);
std::vector<Sample> synth_generate(const SynthSpec& spec, Split split, std::size_t count);

/// Pixels of channel 0 strictly above 0.5.
double blob_count_target(const Image& image);

struct PointCharge {
    double row = 0.0;
    double col = 0.0;
    double charge = 0.0;
};
/// sum_{i<j} q_i q_j / |r_i - r_j| with distances in pixels.
double coulomb_energy(const std::vector<PointCharge>& charges);
/// Valence density, core density and a bilinear point-mass channel.
Image render_charges(const std::vector<PointCharge>& charges, std::size_t image_size,
                     double valence_width, double core_width);

// ---------------------------------------------------------------------------
// Manifest

inline constexpr const char* kManifestMagic = "# bscat manifest v1";

struct ManifestRecord {
    std::string source;  // relative/absolute path(s) joined by '+', or "synth:..."
    double target = 0.0;
    Split split = Split::train;
    bool operator==(const ManifestRecord&) const = default;
};

struct Manifest {
    std::filesystem::path base_dir;  // relative sources resolve against this
    std::vector<ManifestRecord> records;

    [[nodiscard]] std::vector<std::size_t> indices(Split s) const;
    [[nodiscard]] Eigen::VectorXd targets(Split s) const;
    [[nodiscard]] Eigen::VectorXd all_targets() const;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Loads the image a record points at.
Image load_record_image(const Manifest& manifest, const ManifestRecord& record);

/// Writes images/<split>_NNNNN.bsimg plus manifest.csv under `dir`.
std::filesystem::path write_synth_dataset(const SynthSpec& spec, std::size_t n_train,
                                          std::size_t n_test, const std::filesystem::path& dir);

/// "synth:task=blob_count;split=test;index=3;seed=1;preset=intensity;size=32"
std::string inline_synth_source(SynthTask task, const std::string& preset, std::uint64_t seed,
                                std::size_t image_size, Split split, std::size_t index);

// ---------------------------------------------------------------------------
// Image files

/// Raw container: "BSIM", u32 version, u32 channels, u32 size, f64 LE data.
void write_raw_image(const std::filesystem::path& path, const Image& image);
Image read_raw_image(const std::filesystem::path& path);

/// 8- or 16-bit PNG (gray, gray+alpha, RGB, RGBA), scaled to [0, 1].
Image read_png(const std::filesystem::path& path);
/// 16-bit PNG with 1..4 channels; values are clamped to [0, 1].
void write_png(const std::filesystem::path& path, const Image& image);

// ---------------------------------------------------------------------------
// Feature cache

inline constexpr std::uint32_t kCacheVersion = 1;

struct FeatureCache {
    Eigen::MatrixXd features;  // n x D
    std::uint64_t digest = 0;  // scattering-config digest
};

/// "BSCF", u32 version, u64 n, u64 D, u64 digest, row-major f64 LE body,
/// u32 CRC-32 of everything before it.
void write_cache(const std::filesystem::path& path, const FeatureCache& cache);
FeatureCache read_cache(const std::filesystem::path& path,
                        std::optional<std::uint64_t> expected_digest = std::nullopt);

}  // namespace bscat
