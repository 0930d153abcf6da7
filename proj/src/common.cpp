#include "bscat/error.hpp"
#include "bscat/image.hpp"
#include "bscat/log.hpp"
#include "bscat/rng.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <string>

namespace bscat {

const char* error_code_name(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::ok: return "ok";
        case ErrorCode::invalid_argument: return "invalid-argument";
        case ErrorCode::invalid_config: return "invalid-config";
        case ErrorCode::size_mismatch: return "size-mismatch";
        case ErrorCode::non_finite_input: return "non-finite-input";
        case ErrorCode::cholesky_failure: return "cholesky-failure";
        case ErrorCode::io_error: return "io-error";
        case ErrorCode::checksum_mismatch: return "checksum-mismatch";
        case ErrorCode::config_digest_mismatch: return "config-digest-mismatch";
        case ErrorCode::parse_error: return "parse-error";
        case ErrorCode::pool_exhausted: return "pool-exhausted";
        case ErrorCode::too_few_rows: return "too-few-rows";
        case ErrorCode::internal: return "internal";
    }
    return "unknown";
}

Image::Image(std::size_t channels, std::size_t size, std::vector<double> data)
    : channels_(channels), size_(size), data_(std::move(data)) {
    if (data_.size() != channels_ * size_ * size_) {
        fail(ErrorCode::size_mismatch, "image buffer has " + std::to_string(data_.size()) +
                                           " values, expected " +
                                           std::to_string(channels_ * size_ * size_));
    }
}

bool Image::all_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::atomic<int> g_level{static_cast<int>(LogLevel::warn)};
std::mutex g_log_mutex;

void emit(const char* tag, std::string_view message) {
    std::lock_guard lock(g_log_mutex);
    std::fprintf(stderr, "[bscat %s] %.*s\n", tag, static_cast<int>(message.size()), message.data());
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) noexcept {
    return splitmix64(seed ^ splitmix64(fnv1a(stream)));
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index) noexcept {
    return splitmix64(derive_seed(seed, stream) ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t k) {
    if (k > n) fail(ErrorCode::pool_exhausted, "cannot draw " + std::to_string(k) +
                                                   " distinct items from " + std::to_string(n));
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(perm[i], perm[pick(rng)]);
    }
    perm.resize(k);
    return perm;
}

void set_log_level(LogLevel level) noexcept { g_level.store(static_cast<int>(level)); }
LogLevel log_level() noexcept { return static_cast<LogLevel>(g_level.load()); }

void log_warn(std::string_view message) {
    if (g_level.load() >= static_cast<int>(LogLevel::warn)) emit("warn", message);
}

void log_info(std::string_view message) {
    if (g_level.load() >= static_cast<int>(LogLevel::info)) emit("info", message);
}

}  // namespace bscat
