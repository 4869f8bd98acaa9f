#pragma once

#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <tuple>
#include <utility>

#include <fftw3.h>

namespace gssm {

/// Multi-channel real FFT of length `n` over buffers laid out time-major with
/// channels fastest (the SignalBlock layout). Owns its plans and work
/// buffers; the forward transform writes n/2+1 bins per channel.
class RealFft {
public:
    RealFft(std::size_t n, std::size_t channels) : n_(n), channels_(channels) {
        const std::size_t bins = n / 2 + 1;
        real_ = static_cast<double*>(fftw_malloc(sizeof(double) * n * channels));
        spec_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins * channels));
        int len = static_cast<int>(n);
        int howmany = static_cast<int>(channels);
        int stride = static_cast<int>(channels);
        forward_ = fftw_plan_many_dft_r2c(1, &len, howmany, real_, nullptr, stride, 1, spec_,
                                          nullptr, stride, 1, FFTW_ESTIMATE);
        inverse_ = fftw_plan_many_dft_c2r(1, &len, howmany, spec_, nullptr, stride, 1, real_,
                                          nullptr, stride, 1, FFTW_ESTIMATE);
    }
    RealFft(const RealFft&) = delete;
    RealFft& operator=(const RealFft&) = delete;
    ~RealFft() {
        fftw_destroy_plan(forward_);
        fftw_destroy_plan(inverse_);
        fftw_free(real_);
        fftw_free(spec_);
    }

    std::size_t size() const noexcept { return n_; }
    std::size_t bins() const noexcept { return n_ / 2 + 1; }
    std::size_t channels() const noexcept { return channels_; }

    std::span<double> real() noexcept { return {real_, n_ * channels_}; }
    std::span<std::complex<double>> spectrum() noexcept {
        return {reinterpret_cast<std::complex<double>*>(spec_), bins() * channels_};
    }

    /// real() -> spectrum(), unnormalized.
    void forward() { fftw_execute(forward_); }
    /// spectrum() -> real(), unnormalized (scale by 1/n). Clobbers spectrum().
    void inverse() { fftw_execute(inverse_); }

private:
    std::size_t n_;
    std::size_t channels_;
    double* real_ = nullptr;
    fftw_complex* spec_ = nullptr;
    fftw_plan forward_ = nullptr;
    fftw_plan inverse_ = nullptr;
};

/// Per-thread plan cache. FFTW planning is not thread-safe, so each thread
/// plans its own transforms. Distinct `slot`s give distinct buffers for the
/// same size, so an input and an output transform never alias.
inline RealFft& real_fft(std::size_t n, std::size_t channels, int slot = 0) {
    thread_local std::map<std::tuple<std::size_t, std::size_t, int>, std::unique_ptr<RealFft>> cache;
    auto& entry = cache[{n, channels, slot}];
    if (!entry) entry = std::make_unique<RealFft>(n, channels);
    return *entry;
}

}  // namespace gssm
