#pragma once

#include <cmath>

namespace hctl {

// Per-patch online statistics for the inner chain: one Welford stream per
// patch, fed every patch value at every inner iteration. sigma_w is the
// pooled running standard deviation; its first difference delta_w is the
// mixing indicator. Stability requires two consecutive |delta_w| readings
// below kappa times the running peak, so nothing can stabilize before the
// third sigma_w reading.
struct PatchWelford {
    long long count = 0;
    double mean = 0.0;
    double m2 = 0.0;  // running sum of squared deviations

    double sigma_curr = 0.0;
    double sigma_prev = 0.0;
    double delta_curr = 0.0;
    double delta_prev = 0.0;
    double delta_peak = 0.0;  // max |delta_w| so far; nondecreasing
    int sigma_readings = 0;
    int delta_readings = 0;
    bool stable = false;

    void feed(double x) {
        ++count;
        const double d = x - mean;
        mean += d / count;
        m2 += d * (x - mean);
    }

    // Population variance of everything fed so far.
    double variance() const { return count > 0 ? m2 / count : 0.0; }

    // Close one inner iteration: take a sigma_w reading and refresh the
    // indicator state.
    void close_iteration(double kappa) { push_sigma(std::sqrt(variance()), kappa); }

    // Reading boundary, separated out so indicator semantics can be driven
    // directly with a crafted sigma_w sequence.
    void push_sigma(double sigma_w, double kappa) {
        sigma_prev = sigma_curr;
        sigma_curr = sigma_w;
        ++sigma_readings;
        if (sigma_readings >= 2) {
            delta_prev = delta_curr;
            delta_curr = sigma_curr - sigma_prev;
            ++delta_readings;
            if (std::abs(delta_curr) > delta_peak) delta_peak = std::abs(delta_curr);
        }
        stable = delta_readings >= 2 && std::abs(delta_curr) < kappa * delta_peak &&
                 std::abs(delta_prev) < kappa * delta_peak;
    }
};

}  // namespace hctl
