#pragma once

#include <stdexcept>
#include <vector>

namespace hctl {

// Sampling-order noise schedule: sigmas[0] = 1 (pure noise) down to
// sigmas[K] = 0 (clean), strictly decreasing, length K+1.
struct NoiseSchedule {
    std::vector<double> sigmas;

    int steps() const { return static_cast<int>(sigmas.size()) - 1; }
    double operator[](int k) const { return sigmas[static_cast<std::size_t>(k)]; }
};

enum class ScheduleKind { kLinear };

inline NoiseSchedule build_schedule(int steps, ScheduleKind kind = ScheduleKind::kLinear) {
    if (steps < 1) throw std::invalid_argument("build_schedule: steps must be >= 1");
    if (kind != ScheduleKind::kLinear) throw std::invalid_argument("build_schedule: unknown kind");
    NoiseSchedule out;
    out.sigmas.resize(static_cast<std::size_t>(steps) + 1);
    for (int k = 0; k <= steps; ++k)
        out.sigmas[static_cast<std::size_t>(k)] = static_cast<double>(steps - k) / steps;
    out.sigmas.front() = 1.0;
    out.sigmas.back() = 0.0;
    return out;
}

}  // namespace hctl
