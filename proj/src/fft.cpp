#include "fft.hpp"

#include "bscat/error.hpp"

#include <fftw3.h>

#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <utility>

namespace bscat::detail {
namespace {

struct PlanPair {
    fftw_plan forward = nullptr;
    fftw_plan backward = nullptr;
};

// Plans are created once with FFTW_ESTIMATE so the algorithm choice does not
// depend on timing; new-array execution is thread safe.
class PlanCache {
public:
    ~PlanCache() {
        for (auto& [n, p] : plans_) {
            fftw_destroy_plan(p.forward);
            fftw_destroy_plan(p.backward);
        }
    }

    PlanPair get(std::size_t n) {
        std::lock_guard lock(mutex_);
        auto it = plans_.find(n);
        if (it != plans_.end()) return it->second;
        auto* buf = fftw_alloc_complex(n * n);
        const int ni = static_cast<int>(n);
        PlanPair p;
        p.forward = fftw_plan_dft_2d(ni, ni, buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
        p.backward = fftw_plan_dft_2d(ni, ni, buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
        fftw_free(buf);
        if (!p.forward || !p.backward) fail(ErrorCode::internal, "fftw plan creation failed");
        plans_.emplace(n, p);
        return p;
    }

private:
    std::mutex mutex_;
    std::map<std::size_t, PlanPair> plans_;
};

PlanCache& cache() {
    static PlanCache c;
    return c;
}

void run(fftw_plan plan, std::span<cplx> data, std::size_t n) {
    if (data.size() != n * n) fail(ErrorCode::size_mismatch, "fft buffer size mismatch");
    // std::vector storage is not guaranteed to be 16-byte aligned the way the
    // plan expects, so stage through an FFTW-allocated buffer.
    struct FftwFree {
        void operator()(fftw_complex* p) const noexcept { fftw_free(p); }
    };
    thread_local std::unique_ptr<fftw_complex[], FftwFree> scratch;
    thread_local std::size_t scratch_len = 0;
    if (scratch_len < n * n) {
        scratch.reset(fftw_alloc_complex(n * n));
        scratch_len = n * n;
    }
    const std::size_t bytes = n * n * sizeof(fftw_complex);
    std::memcpy(static_cast<void*>(scratch.get()), static_cast<const void*>(data.data()), bytes);
    fftw_execute_dft(plan, scratch.get(), scratch.get());
    std::memcpy(static_cast<void*>(data.data()), static_cast<const void*>(scratch.get()), bytes);
}

}  // namespace

void fft2(std::span<cplx> data, std::size_t n) { run(cache().get(n).forward, data, n); }

void ifft2(std::span<cplx> data, std::size_t n) { run(cache().get(n).backward, data, n); }

}  // namespace bscat::detail
