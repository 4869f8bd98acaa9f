#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gssm/errors.hpp"

namespace gssm {

/// Real trajectory tensor laid out batch x length x channels, row-major
/// (channels fastest).
class SignalBlock {
public:
    SignalBlock() = default;
    SignalBlock(std::size_t batch, std::size_t length, std::size_t channels, double fill = 0.0)
        : batch_(batch), length_(length), channels_(channels),
          data_(batch * length * channels, fill) {}

    std::size_t batch() const noexcept { return batch_; }
    std::size_t length() const noexcept { return length_; }
    std::size_t channels() const noexcept { return channels_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t b, std::size_t t, std::size_t c) {
        return data_[(b * length_ + t) * channels_ + c];
    }
    double operator()(std::size_t b, std::size_t t, std::size_t c) const {
        return data_[(b * length_ + t) * channels_ + c];
    }

    /// Channels of sample `b` at time `t`.
    std::span<double> at(std::size_t b, std::size_t t) {
        return {data_.data() + (b * length_ + t) * channels_, channels_};
    }
    std::span<const double> at(std::size_t b, std::size_t t) const {
        return {data_.data() + (b * length_ + t) * channels_, channels_};
    }

    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double max_abs() const {
        double m = 0.0;
        for (double v : data_) m = std::max(m, std::abs(v));
        return m;
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

private:
    std::size_t batch_ = 0;
    std::size_t length_ = 0;
    std::size_t channels_ = 0;
    std::vector<double> data_;
};

inline void require_same_shape(const SignalBlock& a, const SignalBlock& b, const char* what) {
    if (a.batch() != b.batch() || a.length() != b.length() || a.channels() != b.channels())
        throw DimensionError(std::string(what) + ": signal shapes differ");
}

}  // namespace gssm
