#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "hctl/rng.hpp"

namespace hctl {

// Partial observation of the first coordinate: y ~ N(z0[coord], sigma_y^2).
struct ObsModel {
    double y_obs = 0.5;
    double sigma_y = 0.2;
    int coord = 0;
};

// Unit square [i,i+1) x [j,j+1) of the checkerboard lattice.
struct LatticeSquare {
    int i = 0;
    int j = 0;

    double cx() const { return i + 0.5; }
    double cy() const { return j + 0.5; }
    // Closed lower / open upper membership, fixed for determinism.
    bool contains(double x, double y) const { return x >= i && x < i + 1 && y >= j && y < j + 1; }
};

// 2D 8-square checkerboard: unit squares centered at (i+0.5, j+0.5) for
// i,j in {-2,-1,0,1} with (i+j) even; density 1/8 inside, zero outside.
class Checkerboard {
  public:
    static constexpr int kMinIndex = -2;
    static constexpr int kMaxIndex = 1;

    static bool filled(int i, int j) {
        if (i < kMinIndex || i > kMaxIndex || j < kMinIndex || j > kMaxIndex) return false;
        // ((i+j) mod 2 + 2) mod 2 handles negative sums.
        return (((i + j) % 2) + 2) % 2 == 0;
    }

    static std::vector<LatticeSquare> squares() {
        std::vector<LatticeSquare> out;
        for (int i = kMinIndex; i <= kMaxIndex; ++i)
            for (int j = kMinIndex; j <= kMaxIndex; ++j)
                if (filled(i, j)) out.push_back({i, j});
        return out;
    }

    static double logdensity(double x, double y) {
        const int i = static_cast<int>(std::floor(x));
        const int j = static_cast<int>(std::floor(y));
        if (filled(i, j)) return -std::log(8.0);
        return -std::numeric_limits<double>::infinity();
    }

    static bool on_support(double x, double y) { return std::isfinite(logdensity(x, y)); }

    // Uniform square choice (1/8 each), then uniform within the unit square.
    static Eigen::Matrix2Xd sample(int n, Rng& rng) {
        if (n < 1) throw std::invalid_argument("Checkerboard::sample: n must be >= 1");
        const auto sq = squares();
        Eigen::Matrix2Xd out(2, n);
        for (int k = 0; k < n; ++k) {
            const auto& s = sq[static_cast<std::size_t>(rng.below(sq.size()))];
            out(0, k) = s.i + rng.uniform01();
            out(1, k) = s.j + rng.uniform01();
        }
        return out;
    }

    // Filled squares whose x-extent contains y_obs (the conditional modes of
    // an observation on the first coordinate).
    static std::vector<LatticeSquare> conditional_modes(const ObsModel& obs) {
        std::vector<LatticeSquare> out;
        for (const auto& s : squares())
            if (obs.y_obs >= s.i && obs.y_obs < s.i + 1) out.push_back(s);
        return out;
    }
};

}  // namespace hctl
