#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "hctl/patches.hpp"
#include "hctl/rng.hpp"
#include "hctl/schedule.hpp"
#include "hctl/tensor.hpp"

using namespace hctl;

TEST_CASE("build_schedule linear values") {
    const NoiseSchedule s2 = build_schedule(2);
    REQUIRE(s2.sigmas.size() == 3);
    CHECK(s2[0] == 1.0);
    CHECK(s2[1] == doctest::Approx(0.5));
    CHECK(s2[2] == 0.0);

    const NoiseSchedule s50 = build_schedule(50);
    CHECK(s50.sigmas.size() == 51);
    CHECK(s50[0] == 1.0);
    CHECK(s50[50] == 0.0);

    const NoiseSchedule s1 = build_schedule(1);
    CHECK(s1.sigmas == std::vector<double>{1.0, 0.0});

    CHECK_THROWS_AS(build_schedule(0), std::invalid_argument);
}

TEST_CASE("build_schedule is strictly decreasing with exact endpoints") {
    for (int steps : {1, 2, 3, 7, 50, 113}) {
        const NoiseSchedule s = build_schedule(steps);
        REQUIRE(static_cast<int>(s.sigmas.size()) == steps + 1);
        CHECK(s.sigmas.front() == 1.0);
        CHECK(s.sigmas.back() == 0.0);
        for (std::size_t k = 1; k < s.sigmas.size(); ++k) CHECK(s.sigmas[k] < s.sigmas[k - 1]);
    }
}

TEST_CASE("mask_compose basics") {
    const Shape4 shape{1, 1, 1, 2};
    StateTensor a(shape, Eigen::Vector2d(5.0, 5.0));
    StateTensor b(shape, Eigen::Vector2d(7.0, 7.0));

    SiteMask ones(1, 1, 2, true);
    SiteMask zeros(1, 1, 2, false);
    SiteMask toy(1, 1, 2);
    toy.set(0, true);

    CHECK(mask_compose(a, b, ones).data == a.data);
    CHECK(mask_compose(a, b, zeros).data == b.data);
    const StateTensor mixed = mask_compose(a, b, toy);
    CHECK(mixed.data[0] == 5.0);
    CHECK(mixed.data[1] == 7.0);

    StateTensor wrong(Shape4{1, 1, 1, 3}, Eigen::Vector3d::Zero());
    CHECK_THROWS_AS(mask_compose(a, wrong, toy), std::invalid_argument);
}

TEST_CASE("mask_compose(a, a, M) == a for random masks") {
    Rng rng(7);
    const Shape4 shape{2, 2, 3, 4};
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXd data(shape.size());
        for (int i = 0; i < shape.size(); ++i) data[i] = rng.normal();
        StateTensor a(shape, data);
        SiteMask mask(shape.l, shape.h, shape.w);
        for (int s = 0; s < mask.sites(); ++s) mask.set(s, rng.uniform01() < 0.5);
        CHECK(mask_compose(a, a, mask).data == a.data);
    }
}

TEST_CASE("mask complement is an involution") {
    Rng rng(11);
    SiteMask mask(2, 3, 4);
    for (int s = 0; s < mask.sites(); ++s) mask.set(s, rng.uniform01() < 0.3);
    CHECK(mask.complement().complement() == mask);
    CHECK(mask.complement().observed_count() == mask.sites() - mask.observed_count());
}

TEST_CASE("partition_complement tiles a fully unobserved lattice") {
    SiteMask mask(4, 4, 4);  // nothing observed
    const PatchPartition part = partition_complement(mask, {2, 2, 2});
    REQUIRE(part.count() == 8);
    for (const auto& p : part.patches) CHECK(p.size() == 8);
}

TEST_CASE("partition_complement edge cases") {
    SiteMask all(2, 2, 2, true);
    CHECK(partition_complement(all, {1, 1, 1}).count() == 0);

    SiteMask toy(1, 1, 2);
    toy.set(0, true);
    const PatchPartition part = partition_complement(toy, {1, 1, 1});
    REQUIRE(part.count() == 1);
    CHECK(part.patches[0] == std::vector<int>{1});

    CHECK_THROWS_AS(partition_complement(toy, {0, 1, 1}), std::invalid_argument);

    // Patch size beyond the lattice extent collapses to one box per axis.
    SiteMask small(1, 2, 2);
    CHECK(partition_complement(small, {4, 4, 4}).count() == 1);
}

TEST_CASE("partition covers exactly the complement, disjointly") {
    Rng rng(3);
    for (int trial = 0; trial < 25; ++trial) {
        const int L = 1 + static_cast<int>(rng.below(3));
        const int H = 1 + static_cast<int>(rng.below(5));
        const int W = 1 + static_cast<int>(rng.below(5));
        SiteMask mask(L, H, W);
        for (int s = 0; s < mask.sites(); ++s) mask.set(s, rng.uniform01() < 0.4);
        const std::array<int, 3> sizes{1 + static_cast<int>(rng.below(3)),
                                       1 + static_cast<int>(rng.below(3)),
                                       1 + static_cast<int>(rng.below(3))};
        const PatchPartition part = partition_complement(mask, sizes);

        std::multiset<int> covered;
        for (const auto& p : part.patches) covered.insert(p.begin(), p.end());
        std::multiset<int> expected;
        for (int s = 0; s < mask.sites(); ++s)
            if (!mask[s]) expected.insert(s);
        CHECK(covered == expected);

        // Each patch fits in one axis-aligned box of the requested size.
        const Shape4 shape{1, L, H, W};
        for (const auto& p : part.patches) {
            int lmin = L, lmax = -1, hmin = H, hmax = -1, wmin = W, wmax = -1;
            for (int s : p) {
                const int w = s % W, h = (s / W) % H, l = s / (W * H);
                lmin = std::min(lmin, l); lmax = std::max(lmax, l);
                hmin = std::min(hmin, h); hmax = std::max(hmax, h);
                wmin = std::min(wmin, w); wmax = std::max(wmax, w);
            }
            CHECK(lmax - lmin < sizes[0]);
            CHECK(hmax - hmin < sizes[1]);
            CHECK(wmax - wmin < sizes[2]);
        }
    }
}

TEST_CASE("state tensor shape bookkeeping") {
    const Shape4 shape{2, 1, 3, 4};
    CHECK(shape.sites() == 12);
    CHECK(shape.size() == 24);
    StateTensor t = StateTensor::zeros(shape);
    t(1, 0, 2, 3) = 5.0;
    CHECK(t.data[12 + site_index(shape, 0, 2, 3)] == 5.0);
    CHECK(t.all_finite());
    CHECK_THROWS_AS(StateTensor(shape, Eigen::Vector2d::Zero()), std::invalid_argument);
}
