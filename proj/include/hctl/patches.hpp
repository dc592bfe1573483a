#pragma once

#include <array>
#include <stdexcept>
#include <vector>

#include "hctl/tensor.hpp"

namespace hctl {

// Disjoint axis-aligned patches covering the unobserved support of a mask.
struct PatchPartition {
    std::array<int, 3> patch_sizes{1, 1, 1};  // (p_l, p_h, p_w)
    std::vector<std::vector<int>> patches;    // site indices per patch, sorted

    int count() const { return static_cast<int>(patches.size()); }
};

// Tile the lattice with boxes anchored at the origin (stride = patch size),
// intersect each box with the unobserved sites, and drop empty intersections.
inline PatchPartition partition_complement(const SiteMask& mask, std::array<int, 3> patch_sizes) {
    if (patch_sizes[0] < 1 || patch_sizes[1] < 1 || patch_sizes[2] < 1)
        throw std::invalid_argument("partition_complement: patch sizes must be >= 1");
    PatchPartition out;
    out.patch_sizes = patch_sizes;
    const int pl = patch_sizes[0], ph = patch_sizes[1], pw = patch_sizes[2];
    const Shape4 shape{1, mask.l, mask.h, mask.w};
    for (int bl = 0; bl < mask.l; bl += pl)
        for (int bh = 0; bh < mask.h; bh += ph)
            for (int bw = 0; bw < mask.w; bw += pw) {
                std::vector<int> sites;
                for (int l = bl; l < std::min(bl + pl, mask.l); ++l)
                    for (int h = bh; h < std::min(bh + ph, mask.h); ++h)
                        for (int w = bw; w < std::min(bw + pw, mask.w); ++w) {
                            const int s = site_index(shape, l, h, w);
                            if (!mask[s]) sites.push_back(s);
                        }
                if (!sites.empty()) out.patches.push_back(std::move(sites));
            }
    return out;
}

}  // namespace hctl
