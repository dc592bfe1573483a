#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace hctl {

// Lattice extents (C, L, H, W). The toy 2D density lives on (1,1,1,2).
struct Shape4 {
    int c = 1;
    int l = 1;
    int h = 1;
    int w = 1;

    int sites() const { return l * h * w; }
    int size() const { return c * l * h * w; }
    bool operator==(const Shape4&) const = default;
};

// Site index convention: s = (l*H + h)*W + w. Tensor entries are indexed as
// c*sites + s, i.e. channel-major with contiguous sites per channel.
inline int site_index(const Shape4& shape, int l, int h, int w) {
    return (l * shape.h + h) * shape.w + w;
}

// Real-valued lattice state. A flat vector of dimension D is the special
// case (1,1,1,D).
struct StateTensor {
    Shape4 shape;
    Eigen::VectorXd data;

    StateTensor() = default;
    StateTensor(const Shape4& s, const Eigen::VectorXd& d) : shape(s), data(d) {
        if (d.size() != s.size()) throw std::invalid_argument("StateTensor: data/shape mismatch");
    }

    static StateTensor zeros(const Shape4& s) { return StateTensor(s, Eigen::VectorXd::Zero(s.size())); }

    static StateTensor from_flat(const Eigen::VectorXd& d) {
        return StateTensor(Shape4{1, 1, 1, static_cast<int>(d.size())}, d);
    }

    double operator()(int c, int l, int h, int w) const {
        return data[c * shape.sites() + site_index(shape, l, h, w)];
    }
    double& operator()(int c, int l, int h, int w) {
        return data[c * shape.sites() + site_index(shape, l, h, w)];
    }

    bool all_finite() const { return data.allFinite(); }
};

// Per-site binary mask over (L,H,W); channels broadcast.
struct SiteMask {
    int l = 1;
    int h = 1;
    int w = 1;
    std::vector<std::uint8_t> bits;

    SiteMask() = default;
    SiteMask(int L, int H, int W, bool value = false)
        : l(L), h(H), w(W), bits(static_cast<std::size_t>(L) * H * W, value ? 1 : 0) {
        if (L < 1 || H < 1 || W < 1) throw std::invalid_argument("SiteMask: extents must be positive");
    }

    int sites() const { return l * h * w; }

    std::uint8_t operator[](int site) const { return bits[static_cast<std::size_t>(site)]; }
    void set(int site, bool v) { bits[static_cast<std::size_t>(site)] = v ? 1 : 0; }

    SiteMask complement() const {
        SiteMask out = *this;
        for (auto& b : out.bits) b = b ? 0 : 1;
        return out;
    }

    int observed_count() const {
        int n = 0;
        for (auto b : bits) n += b;
        return n;
    }

    bool all() const { return observed_count() == sites(); }
    bool none() const { return observed_count() == 0; }
    bool operator==(const SiteMask&) const = default;

    bool shape_matches(const Shape4& s) const { return s.l == l && s.h == h && s.w == w; }
};

// Mask expanded to a 0/1 vector over the full tensor layout (channel-broadcast).
inline Eigen::ArrayXd mask_vector(const SiteMask& mask, int channels) {
    const int sites = mask.sites();
    Eigen::ArrayXd m(static_cast<Eigen::Index>(channels) * sites);
    for (int c = 0; c < channels; ++c)
        for (int s = 0; s < sites; ++s) m[c * sites + s] = mask.bits[static_cast<std::size_t>(s)];
    return m;
}

// M⊙a + (1−M)⊙b, the masked-replacement primitive.
inline StateTensor mask_compose(const StateTensor& a, const StateTensor& b, const SiteMask& mask) {
    if (!(a.shape == b.shape)) throw std::invalid_argument("mask_compose: shape mismatch");
    if (!mask.shape_matches(a.shape)) throw std::invalid_argument("mask_compose: mask/shape mismatch");
    StateTensor out = b;
    const int sites = a.shape.sites();
    for (int c = 0; c < a.shape.c; ++c)
        for (int s = 0; s < sites; ++s)
            if (mask[s]) out.data[c * sites + s] = a.data[c * sites + s];
    return out;
}

}  // namespace hctl
