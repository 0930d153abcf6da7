#include "bscat/datasets.hpp"

#include "bscat/error.hpp"
#include "bscat/rng.hpp"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <numbers>
#include <sstream>

namespace bscat {
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Byte helpers (explicit little-endian, independent of the host)

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get_le(const std::string& in, std::size_t offset, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
    }
    return v;
}

double get_f64(const std::string& in, std::size_t offset) {
    return std::bit_cast<double>(get_le(in, offset, 8));
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io_error, "cannot open '" + path.string() + "' for reading");
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) fail(ErrorCode::io_error, "read error on '" + path.string() + "'");
    return buf.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorCode::io_error, "cannot open '" + tmp.string() + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) fail(ErrorCode::io_error, "write error on '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

std::uint32_t crc32_of(const char* data, std::size_t size) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large buffers in chunks.
    while (size > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        size -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

// ---------------------------------------------------------------------------
// Synthetic rendering

double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::size_t uniform_count(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Sum of three low-frequency plane waves, scaled so |texture| <= amplitude.
void add_texture(Image& img, Rng& rng, double amplitude) {
    const std::size_t n = img.size();
    constexpr int kWaves = 3;
    for (int w = 0; w < kWaves; ++w) {
        const double fx = uniform(rng, -3.0, 3.0);
        const double fy = uniform(rng, -3.0, 3.0);
        const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < n; ++c) {
                const double arg = 2.0 * std::numbers::pi *
                                       (fx * static_cast<double>(r) + fy * static_cast<double>(c)) /
                                       static_cast<double>(n) +
                                   phase;
                img(0, r, c) += amplitude / kWaves * std::sin(arg);
            }
        }
    }
}

Sample render_blobs(const SynthSpec& spec, const ShiftParams& p, Rng& rng) {
    const std::size_t n = spec.image_size;
    Image img(1, n);
    add_texture(img, rng, p.background_amplitude);
    const std::size_t k =
        p.forced_blob_count ? *p.forced_blob_count : uniform_count(rng, p.blob_count_min, p.blob_count_max);
    for (std::size_t b = 0; b < k; ++b) {
        const double cr = uniform(rng, 0.0, static_cast<double>(n));
        const double cc = uniform(rng, 0.0, static_cast<double>(n));
        const double s = uniform(rng, p.blob_sigma_min, p.blob_sigma_max);
        const double a = uniform(rng, p.blob_intensity_min, p.blob_intensity_max);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < n; ++c) {
                const double dr = static_cast<double>(r) - cr;
                const double dc = static_cast<double>(c) - cc;
                img(0, r, c) += a * std::exp(-(dr * dr + dc * dc) / (2.0 * s * s));
            }
        }
    }
    Sample out{std::move(img), 0.0};
    out.target = blob_count_target(out.image);
    return out;
}

std::vector<PointCharge> place_charges(const SynthSpec& spec, const ShiftParams& p, Rng& rng) {
    const double centre = 0.5 * static_cast<double>(spec.image_size);
    const std::size_t k = uniform_count(rng, p.charge_count_min, p.charge_count_max);
    std::vector<PointCharge> out;
    out.reserve(k);
    constexpr int kMaxTries = 10000;
    for (int tries = 0; out.size() < k; ++tries) {
        if (tries == kMaxTries) {
            fail(ErrorCode::invalid_config, "cannot place " + std::to_string(k) +
                                                " charges with the requested separation");
        }
        // Uniform in the disc.
        const double rad = p.placement_radius * std::sqrt(uniform(rng, 0.0, 1.0));
        const double ang = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const PointCharge q{centre + rad * std::sin(ang), centre + rad * std::cos(ang),
                            static_cast<double>(std::uniform_int_distribution<int>(
                                1, p.charge_value_max)(rng))};
        const bool clear = std::all_of(out.begin(), out.end(), [&](const PointCharge& o) {
            return std::hypot(o.row - q.row, o.col - q.col) >= p.min_separation;
        });
        if (clear) out.push_back(q);
    }
    return out;
}

// Parses "k=v;k=v" after the "synth:" prefix.
std::map<std::string, std::string> parse_inline(const std::string& body) {
    std::map<std::string, std::string> kv;
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ';')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) fail(ErrorCode::parse_error, "inline synth item '" + item + "' lacks '='");
        kv[item.substr(0, eq)] = item.substr(eq + 1);
    }
    return kv;
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        fail(ErrorCode::parse_error, "bad " + what + " '" + s + "'");
    }
    return v;
}

}  // namespace

std::string to_string(SynthTask t) { return t == SynthTask::blob_count ? "blob_count" : "charge_energy"; }

SynthTask parse_task(const std::string& name) {
    if (name == "blob_count") return SynthTask::blob_count;
    if (name == "charge_energy") return SynthTask::charge_energy;
    fail(ErrorCode::invalid_argument, "unknown synthetic task '" + name + "'");
}

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

Split parse_split(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "test") return Split::test;
    fail(ErrorCode::parse_error, "unknown split '" + name + "'");
}

void ShiftParams::validate(SynthTask task, std::size_t image_size) const {
    auto bad = [](const std::string& m) { fail(ErrorCode::invalid_config, m); };
    if (task == SynthTask::blob_count) {
        if (blob_count_min > blob_count_max) bad("blob count range is empty");
        if (!(blob_intensity_min <= blob_intensity_max)) bad("blob intensity range is empty");
        if (!(blob_sigma_min > 0.0) || !(blob_sigma_min <= blob_sigma_max)) bad("blob width range is invalid");
        if (!(background_amplitude >= 0.0)) bad("background amplitude must be >= 0");
    } else {
        if (charge_count_min < 2 || charge_count_min > charge_count_max) {
            bad("charge count range must satisfy 2 <= min <= max");
        }
        if (charge_value_max < 1) bad("maximum charge must be >= 1");
        if (!(min_separation > 0.0)) bad("charge separation must be positive");
        if (!(placement_radius > 0.0) || placement_radius >= 0.5 * static_cast<double>(image_size)) {
            bad("placement radius must lie in (0, N/2)");
        }
        if (!(valence_width > 0.0) || !(core_width > 0.0)) bad("density widths must be positive");
    }
}

SynthSpec SynthSpec::preset(SynthTask task, const std::string& preset, std::uint64_t seed,
                            std::size_t image_size) {
    SynthSpec s;
    s.task = task;
    s.image_size = image_size;
    s.channels = task == SynthTask::blob_count ? 1 : 3;
    s.seed = seed;
    const double scale = static_cast<double>(image_size) / 32.0;
    s.train.placement_radius = 8.0 * scale;
    s.test = s.train;
    if (preset == "none") {
    } else if (task == SynthTask::blob_count && preset == "intensity") {
        s.test.blob_intensity_min = 0.9;
        s.test.blob_intensity_max = 1.6;
        s.test.background_amplitude = 0.2;
    } else if (task == SynthTask::blob_count && preset == "texture") {
        s.test.background_amplitude = 0.3;
    } else if (task == SynthTask::blob_count && preset == "scale") {
        s.test.blob_sigma_min = 2.0;
        s.test.blob_sigma_max = 3.5;
    } else if (task == SynthTask::charge_energy && preset == "radius") {
        s.test.placement_radius = 11.0 * scale;
    } else if (task == SynthTask::charge_energy && preset == "charge") {
        s.test.charge_value_max = 6;
    } else {
        fail(ErrorCode::invalid_argument, "unknown shift preset '" + preset + "' for " + to_string(task));
    }
    s.validate();
    return s;
}

std::vector<std::string> SynthSpec::preset_names(SynthTask task) {
    if (task == SynthTask::blob_count) return {"none", "intensity", "texture", "scale"};
    return {"none", "radius", "charge"};
}

void SynthSpec::validate() const {
    if (image_size < 8) fail(ErrorCode::invalid_config, "synthetic images must be at least 8x8");
    const std::size_t want = task == SynthTask::blob_count ? 1 : 3;
    if (channels != want) {
        fail(ErrorCode::invalid_config, to_string(task) + " renders " + std::to_string(want) +
                                            " channel(s), got " + std::to_string(channels));
    }
    train.validate(task, image_size);
    test.validate(task, image_size);
}

Sample synth_sample(const SynthSpec& spec, Split split, std::size_t index) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, "synth." + to_string(spec.task) + "." + to_string(split), index));
    const ShiftParams& p = spec.params(split);
    if (spec.task == SynthTask::blob_count) return render_blobs(spec, p, rng);
    const auto charges = place_charges(spec, p, rng);
    return {render_charges(charges, spec.image_size, p.valence_width, p.core_width),
            coulomb_energy(charges)};
}

std::vector<Sample> synth_generate(const SynthSpec& spec, Split split, std::size_t count) {
    if (count < 1) fail(ErrorCode::invalid_argument, "sample count must be >= 1");
    std::vector<Sample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(synth_sample(spec, split, i));
    return out;
}

double blob_count_target(const Image& image) {
    const auto ch = image.channel(0);
    return static_cast<double>(std::count_if(ch.begin(), ch.end(), [](double v) { return v > 0.5; }));
}

double coulomb_energy(const std::vector<PointCharge>& charges) {
    double e = 0.0;
    for (std::size_t i = 0; i < charges.size(); ++i) {
        for (std::size_t j = i + 1; j < charges.size(); ++j) {
            const double d = std::hypot(charges[i].row - charges[j].row, charges[i].col - charges[j].col);
            if (!(d > 0.0)) fail(ErrorCode::invalid_argument, "coincident point charges");
            e += charges[i].charge * charges[j].charge / d;
        }
    }
    return e;
}

Image render_charges(const std::vector<PointCharge>& charges, std::size_t n, double valence_width,
                     double core_width) {
    Image img(3, n);
    const double widths[2] = {valence_width, core_width};
    for (const PointCharge& q : charges) {
        for (int ch = 0; ch < 2; ++ch) {
            const double s = widths[ch];
            const double norm = q.charge / (2.0 * std::numbers::pi * s * s);
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < n; ++c) {
                    const double dr = static_cast<double>(r) - q.row;
                    const double dc = static_cast<double>(c) - q.col;
                    img(static_cast<std::size_t>(ch), r, c) +=
                        norm * std::exp(-(dr * dr + dc * dc) / (2.0 * s * s));
                }
            }
        }
        // Bilinear splat keeps the point mass sub-pixel accurate.
        const double r0 = std::floor(q.row);
        const double c0 = std::floor(q.col);
        const double fr = q.row - r0;
        const double fc = q.col - c0;
        const auto wrap = [n](double v) {
            const auto m = static_cast<long>(n);
            return static_cast<std::size_t>(((static_cast<long>(v) % m) + m) % m);
        };
        img(2, wrap(r0), wrap(c0)) += q.charge * (1 - fr) * (1 - fc);
        img(2, wrap(r0 + 1), wrap(c0)) += q.charge * fr * (1 - fc);
        img(2, wrap(r0), wrap(c0 + 1)) += q.charge * (1 - fr) * fc;
        img(2, wrap(r0 + 1), wrap(c0 + 1)) += q.charge * fr * fc;
    }
    return img;
}

// ---------------------------------------------------------------------------
// Manifest

std::vector<std::size_t> Manifest::indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].split == s) out.push_back(i);
    }
    return out;
}

Eigen::VectorXd Manifest::targets(Split s) const {
    const auto idx = indices(s);
    Eigen::VectorXd y(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) y(static_cast<Eigen::Index>(k)) = records[idx[k]].target;
    return y;
}

Eigen::VectorXd Manifest::all_targets() const {
    Eigen::VectorXd y(static_cast<Eigen::Index>(records.size()));
    for (std::size_t k = 0; k < records.size(); ++k) y(static_cast<Eigen::Index>(k)) = records[k].target;
    return y;
}

Manifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io_error, "cannot open manifest '" + path.string() + "'");
    Manifest m;
    m.base_dir = path.parent_path();
    const std::string where = path.string() + ":";

    std::string line;
    std::size_t line_no = 0;
    bool seen_magic = false;
    bool seen_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string at = where + std::to_string(line_no) + ": ";
        if (!seen_magic) {
            if (line != kManifestMagic) {
                fail(ErrorCode::parse_error, at + "expected '" + std::string(kManifestMagic) + "'");
            }
            seen_magic = true;
            continue;
        }
        if (line[0] == '#') continue;
        if (!seen_header) {
            if (line != "path,target,split") fail(ErrorCode::parse_error, at + "expected header 'path,target,split'");
            seen_header = true;
            continue;
        }
        const auto c2 = line.rfind(',');
        const auto c1 = c2 == std::string::npos || c2 == 0 ? std::string::npos : line.rfind(',', c2 - 1);
        if (c1 == std::string::npos) fail(ErrorCode::parse_error, at + "expected 3 comma-separated fields");
        ManifestRecord r;
        r.source = line.substr(0, c1);
        if (r.source.empty()) fail(ErrorCode::parse_error, at + "empty path");
        const std::string target = line.substr(c1 + 1, c2 - c1 - 1);
        const auto [ptr, ec] = std::from_chars(target.data(), target.data() + target.size(), r.target);
        if (ec != std::errc{} || ptr != target.data() + target.size()) {
            fail(ErrorCode::parse_error, at + "target '" + target + "' is not a number");
        }
        if (!std::isfinite(r.target)) fail(ErrorCode::parse_error, at + "target '" + target + "' is not finite");
        const std::string split = line.substr(c2 + 1);
        if (split != "train" && split != "test") {
            fail(ErrorCode::parse_error, at + "unknown split '" + split + "' (expected train or test)");
        }
        r.split = parse_split(split);
        m.records.push_back(std::move(r));
    }
    if (!seen_magic || !seen_header) fail(ErrorCode::parse_error, where + " missing manifest header");
    return m;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
    std::ostringstream out;
    out << kManifestMagic << "\npath,target,split\n" << std::setprecision(17);
    for (const auto& r : manifest.records) {
        if (!std::isfinite(r.target)) fail(ErrorCode::non_finite_input, "manifest target is not finite");
        out << r.source << ',' << r.target << ',' << to_string(r.split) << '\n';
    }
    write_file(path, out.str());
}

std::string inline_synth_source(SynthTask task, const std::string& preset, std::uint64_t seed,
                                std::size_t image_size, Split split, std::size_t index) {
    return "synth:task=" + to_string(task) + ";split=" + to_string(split) +
           ";index=" + std::to_string(index) + ";seed=" + std::to_string(seed) +
           ";preset=" + preset + ";size=" + std::to_string(image_size);
}

Image load_record_image(const Manifest& manifest, const ManifestRecord& record) {
    const std::string& src = record.source;
    if (src.rfind("synth:", 0) == 0) {
        auto kv = parse_inline(src.substr(6));
        auto need = [&](const char* key) -> const std::string& {
            const auto it = kv.find(key);
            if (it == kv.end()) fail(ErrorCode::parse_error, "inline synth source lacks '" + std::string(key) + "'");
            return it->second;
        };
        const SynthSpec spec = SynthSpec::preset(parse_task(need("task")),
                                                 kv.count("preset") ? kv["preset"] : "none",
                                                 parse_u64(need("seed"), "seed"),
                                                 kv.count("size") ? parse_u64(kv["size"], "size") : 32);
        return synth_sample(spec, parse_split(need("split")), parse_u64(need("index"), "index")).image;
    }

    std::vector<Image> parts;
    std::stringstream ss(src);
    std::string item;
    while (std::getline(ss, item, '+')) {
        fs::path p(item);
        if (p.is_relative()) p = manifest.base_dir / p;
        const std::string ext = p.extension().string();
        if (ext == ".png" || ext == ".PNG") {
            parts.push_back(read_png(p));
        } else if (ext == ".bsimg") {
            parts.push_back(read_raw_image(p));
        } else {
            fail(ErrorCode::io_error, "unsupported image extension '" + ext + "' for '" + p.string() + "'");
        }
    }
    if (parts.size() == 1) return std::move(parts.front());
    const std::size_t n = parts.front().size();
    std::size_t channels = 0;
    for (const auto& p : parts) {
        if (p.size() != n) fail(ErrorCode::size_mismatch, "per-channel files of '" + src + "' differ in size");
        channels += p.channels();
    }
    std::vector<double> data;
    data.reserve(channels * n * n);
    for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
    return Image(channels, n, std::move(data));
}

fs::path write_synth_dataset(const SynthSpec& spec, std::size_t n_train, std::size_t n_test,
                             const fs::path& dir) {
    spec.validate();
    Manifest m;
    m.base_dir = dir;
    for (Split split : {Split::train, Split::test}) {
        const std::size_t count = split == Split::train ? n_train : n_test;
        for (std::size_t i = 0; i < count; ++i) {
            const Sample s = synth_sample(spec, split, i);
            char name[64];
            std::snprintf(name, sizeof name, "images/%s_%05zu.bsimg", to_string(split).c_str(), i);
            write_raw_image(dir / name, s.image);
            m.records.push_back({name, s.target, split});
        }
    }
    const fs::path manifest = dir / "manifest.csv";
    write_manifest(manifest, m);
    return manifest;
}

// ---------------------------------------------------------------------------
// Raw images

void write_raw_image(const fs::path& path, const Image& image) {
    if (!image.all_finite()) fail(ErrorCode::non_finite_input, "image contains non-finite values");
    std::string out = "BSIM";
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(image.channels()));
    put_u32(out, static_cast<std::uint32_t>(image.size()));
    for (double v : image.data()) put_f64(out, v);
    write_file(path, out);
}

Image read_raw_image(const fs::path& path) {
    const std::string in = read_file(path);
    if (in.size() < 16 || in.compare(0, 4, "BSIM") != 0) {
        fail(ErrorCode::parse_error, "'" + path.string() + "' is not a BSIM image");
    }
    if (get_le(in, 4, 4) != 1) fail(ErrorCode::parse_error, "unsupported BSIM version in '" + path.string() + "'");
    const std::size_t c = get_le(in, 8, 4);
    const std::size_t n = get_le(in, 12, 4);
    if (in.size() != 16 + c * n * n * 8) {
        fail(ErrorCode::parse_error, "'" + path.string() + "' has the wrong length for " +
                                         std::to_string(c) + "x" + std::to_string(n) + "x" + std::to_string(n));
    }
    std::vector<double> data(c * n * n);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = get_f64(in, 16 + 8 * i);
    return Image(c, n, std::move(data));
}

// ---------------------------------------------------------------------------
// PNG

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp, png_const_charp msg) {
    throw Error(ErrorCode::io_error, std::string("libpng: ") + msg);
}

void png_warn(png_structp, png_const_charp) {}

}  // namespace

Image read_png(const fs::path& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) fail(ErrorCode::io_error, "cannot open '" + path.string() + "'");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) fail(ErrorCode::internal, "libpng initialization failed");
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_read_struct(p, i, nullptr); }
    } guard{&png, &info};

    png_init_io(png, f.get());
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_read_update_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int depth = png_get_bit_depth(png, info);
    const std::size_t channels = png_get_channels(png, info);
    if (w != h) fail(ErrorCode::size_mismatch, "'" + path.string() + "' is not square");
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<unsigned char> buf(rowbytes * h);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 r = 0; r < h; ++r) rows[r] = buf.data() + r * rowbytes;
    png_read_image(png, rows.data());

    Image img(channels, w);
    const double scale = depth == 16 ? 65535.0 : 255.0;
    for (png_uint_32 r = 0; r < h; ++r) {
        for (png_uint_32 c = 0; c < w; ++c) {
            for (std::size_t ch = 0; ch < channels; ++ch) {
                const std::size_t k = c * channels + ch;
                const double v = depth == 16 ? (rows[r][2 * k] << 8 | rows[r][2 * k + 1]) : rows[r][k];
                img(ch, r, c) = v / scale;
            }
        }
    }
    return img;
}

void write_png(const fs::path& path, const Image& image) {
    static constexpr int kTypes[] = {PNG_COLOR_TYPE_GRAY, PNG_COLOR_TYPE_GRAY_ALPHA, PNG_COLOR_TYPE_RGB,
                                     PNG_COLOR_TYPE_RGBA};
    const std::size_t channels = image.channels();
    if (channels < 1 || channels > 4) fail(ErrorCode::invalid_argument, "PNG holds 1 to 4 channels");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) fail(ErrorCode::io_error, "cannot open '" + path.string() + "' for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) fail(ErrorCode::internal, "libpng initialization failed");
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_write_struct(p, i); }
    } guard{&png, &info};

    const auto n = static_cast<png_uint_32>(image.size());
    png_init_io(png, f.get());
    png_set_IHDR(png, info, n, n, 16, kTypes[channels - 1], PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(2 * channels * n);
    for (png_uint_32 r = 0; r < n; ++r) {
        for (png_uint_32 c = 0; c < n; ++c) {
            for (std::size_t ch = 0; ch < channels; ++ch) {
                const double v = std::clamp(image(ch, r, c), 0.0, 1.0);
                const auto q = static_cast<unsigned>(std::lround(v * 65535.0));
                row[2 * (c * channels + ch)] = static_cast<unsigned char>(q >> 8);
                row[2 * (c * channels + ch) + 1] = static_cast<unsigned char>(q & 0xFF);
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
}

// ---------------------------------------------------------------------------
// Feature cache

namespace {
constexpr std::size_t kCacheHeader = 4 + 4 + 8 + 8 + 8;
}

void write_cache(const fs::path& path, const FeatureCache& cache) {
    if (!cache.features.allFinite()) fail(ErrorCode::non_finite_input, "feature cache values must be finite");
    const auto n = static_cast<std::uint64_t>(cache.features.rows());
    const auto d = static_cast<std::uint64_t>(cache.features.cols());
    std::string out = "BSCF";
    out.reserve(kCacheHeader + n * d * 8 + 4);
    put_u32(out, kCacheVersion);
    put_u64(out, n);
    put_u64(out, d);
    put_u64(out, cache.digest);
    for (Eigen::Index i = 0; i < cache.features.rows(); ++i) {
        for (Eigen::Index j = 0; j < cache.features.cols(); ++j) put_f64(out, cache.features(i, j));
    }
    put_u32(out, crc32_of(out.data(), out.size()));
    write_file(path, out);
}

FeatureCache read_cache(const fs::path& path, std::optional<std::uint64_t> expected_digest) {
    const std::string in = read_file(path);
    const std::string name = "'" + path.string() + "'";
    if (in.size() < kCacheHeader + 4 || in.compare(0, 4, "BSCF") != 0) {
        fail(ErrorCode::parse_error, name + " is not a BSCF feature cache");
    }
    const std::uint64_t version = get_le(in, 4, 4);
    if (version != kCacheVersion) {
        fail(ErrorCode::parse_error, name + " has unsupported version " + std::to_string(version));
    }
    const std::uint64_t n = get_le(in, 8, 8);
    const std::uint64_t d = get_le(in, 16, 8);
    if (d != 0 && n > (in.size() / 8) / d) fail(ErrorCode::parse_error, name + " header is inconsistent");
    if (in.size() != kCacheHeader + n * d * 8 + 4) {
        fail(ErrorCode::parse_error, name + " length does not match its header");
    }
    const auto stored = static_cast<std::uint32_t>(get_le(in, in.size() - 4, 4));
    if (crc32_of(in.data(), in.size() - 4) != stored) {
        fail(ErrorCode::checksum_mismatch, name + " fails its CRC-32 check");
    }
    FeatureCache c;
    c.digest = get_le(in, 24, 8);
    if (expected_digest && *expected_digest != c.digest) {
        std::ostringstream msg;
        msg << name << " was built with config digest " << std::hex << c.digest << ", expected "
            << *expected_digest;
        fail(ErrorCode::config_digest_mismatch, msg.str());
    }
    c.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    std::size_t o = kCacheHeader;
    for (Eigen::Index i = 0; i < c.features.rows(); ++i) {
        for (Eigen::Index j = 0; j < c.features.cols(); ++j, o += 8) c.features(i, j) = get_f64(in, o);
    }
    return c;
}

}  // namespace bscat
