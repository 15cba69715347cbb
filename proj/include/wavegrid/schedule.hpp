#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "wavegrid/errors.hpp"

namespace wavegrid {

/// Shifted interpolation coefficient mapping time to corruption strength:
/// sigma(t) = shift*t / (1 + (shift-1)*t). Bijection [0,1] -> [0,1] for any
/// shift > 0, with sigma(0) = 0 and sigma(1) = 1.
inline double sigma(double t, double shift) {
    if (!(shift > 0.0)) {
        throw std::invalid_argument("sigma: shift must be positive, got " + std::to_string(shift));
    }
    if (!(t >= 0.0 && t <= 1.0)) {
        throw std::invalid_argument("sigma: time must lie in [0,1], got " + std::to_string(t));
    }
    return shift * t / (1.0 + (shift - 1.0) * t);
}

/// Signal-to-noise ratio (1-sigma)^2 / sigma^2. Infinite at sigma = 0; the
/// sentinel keeps comparisons explicit instead of overflowing.
struct SnrValue {
    double value = 0.0;

    static SnrValue infinite() {
        return SnrValue{std::numeric_limits<double>::infinity()};
    }
    bool is_infinite() const { return std::isinf(value); }

    friend bool operator<(const SnrValue& a, const SnrValue& b) { return a.value < b.value; }
    friend bool operator>=(const SnrValue& a, const SnrValue& b) { return a.value >= b.value; }
};

inline SnrValue snr(double t, double shift) {
    const double s = sigma(t, shift);
    if (s == 0.0) {
        return SnrValue::infinite();
    }
    const double ratio = (1.0 - s) / s;
    return SnrValue{ratio * ratio};
}

/// Discretised denoising schedule: times t_0 = 1 > t_1 > ... > t_S = 0
/// (S steps, S+1 levels) plus the shift parameter of the sigma curve.
class NoiseSchedule {
public:
    NoiseSchedule(double shift, std::vector<double> times) : shift_(shift), times_(std::move(times)) {
        if (!(shift_ > 0.0)) {
            throw std::invalid_argument("NoiseSchedule: shift must be positive");
        }
        if (times_.size() < 2 || times_.front() != 1.0 || times_.back() != 0.0) {
            throw std::invalid_argument("NoiseSchedule: times must run from exactly 1 to exactly 0");
        }
        for (std::size_t i = 0; i + 1 < times_.size(); ++i) {
            if (!(times_[i] > times_[i + 1])) {
                throw std::invalid_argument("NoiseSchedule: times must be strictly decreasing");
            }
        }
        sigmas_.reserve(times_.size());
        for (double t : times_) {
            sigmas_.push_back(sigma(t, shift_));
        }
    }

    double shift() const { return shift_; }
    /// Number of Euler steps S.
    int steps() const { return static_cast<int>(times_.size()) - 1; }
    /// Number of levels S+1.
    int levels() const { return static_cast<int>(times_.size()); }
    const std::vector<double>& times() const { return times_; }

    double time(int level_index) const { return times_.at(static_cast<std::size_t>(level_index)); }
    double sigma_at(int level_index) const { return sigmas_.at(static_cast<std::size_t>(level_index)); }
    SnrValue snr_at(int level_index) const { return snr(time(level_index), shift_); }

    /// sigma(t_{j+1}) - sigma(t_j) for step j; always negative.
    double euler_coefficient(int step_index) const {
        if (step_index < 0 || step_index >= steps()) {
            throw std::invalid_argument("NoiseSchedule: step index out of range");
        }
        return sigmas_[static_cast<std::size_t>(step_index) + 1] - sigmas_[static_cast<std::size_t>(step_index)];
    }

private:
    double shift_;
    std::vector<double> times_;
    std::vector<double> sigmas_;
};

/// Builds a schedule from interior times only; the 1 and 0 endpoints are
/// appended here so callers cannot mis-specify them.
inline NoiseSchedule make_schedule(double shift, const std::vector<double>& interior_times) {
    std::vector<double> times;
    times.reserve(interior_times.size() + 2);
    times.push_back(1.0);
    for (double t : interior_times) {
        if (!(t > 0.0 && t < 1.0)) {
            throw std::invalid_argument("make_schedule: interior times must lie strictly inside (0,1)");
        }
        times.push_back(t);
    }
    times.push_back(0.0);
    return NoiseSchedule(shift, std::move(times));
}

/// One Euler update x + v * (sigma_to - sigma_from), elementwise.
inline Eigen::VectorXd euler_step(const Eigen::VectorXd& x, const Eigen::VectorXd& v, double sigma_from,
                                  double sigma_to) {
    if (x.size() != v.size()) {
        throw std::invalid_argument("euler_step: state and velocity lengths differ");
    }
    if (!(sigma_from >= 0.0 && sigma_from <= 1.0 && sigma_to >= 0.0 && sigma_to <= 1.0)) {
        throw std::invalid_argument("euler_step: noise levels must lie in [0,1]");
    }
    return x + v * (sigma_to - sigma_from);
}

inline NoiseSchedule default_schedule() {
    return make_schedule(3.0, {0.75, 0.5, 0.25});
}

}  // namespace wavegrid
