// Copyright (C) 2026 The dynlat Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "dynlat/error.hpp"
#include "dynlat/mask.hpp"

using namespace dynlat;

namespace {

CoarseMask diag2(int s) { return {BinaryGrid(2, 2, {1, 0, 0, 1}), s}; }

SoftMask single(double p0, double tau) {
    SoftMask m;
    m.rows = m.cols = 1;
    m.probs = {p0, 1.0 - p0};
    m.gumbel_noise = {0.0, 0.0};
    m.tau = tau;
    return m;
}

}  // namespace

TEST_CASE("activation rate") {
    CHECK(activation_rate(BinaryGrid(56, 56, 1)) == 1.0);
    CHECK(activation_rate(BinaryGrid(7, 7, 0)) == 0.0);
    const auto m = synth_mask(14, 14, 0.5, 42);
    CHECK(m.grid.count() == 98);
    CHECK(activation_rate(m) == 0.5);
    CHECK_THROWS_AS(activation_rate(BinaryGrid()), DomainError);
}

TEST_CASE("upsample replicates each cell") {
    const auto up = upsample(diag2(2));
    REQUIRE(up.grid.rows() == 4);
    REQUIRE(up.grid.cols() == 4);
    CHECK(activation_rate(up) == 0.5);
    CHECK(up.grid.at(1, 1) == 1);
    CHECK(up.grid.at(1, 2) == 0);
    CHECK(up.grid.at(3, 2) == 1);

    const auto m = synth_mask(14, 14, 0.5, 3, 4);
    const auto big = upsample(m);
    CHECK(big.grid.rows() == 56);
    CHECK(big.grid.count() == 1568);

    const auto same = upsample(synth_mask(5, 3, 0.4, 9, 1));
    CHECK(same.grid == synth_mask(5, 3, 0.4, 9, 1).grid);
}

TEST_CASE("patch indices are row-major active cells") {
    const auto idx = patch_indices(diag2(1));
    CHECK(idx.indices == std::vector<PatchIndex>{{0, 0}, {1, 1}});
    CHECK(idx.total_cells == 4);
    CHECK(patch_indices({BinaryGrid(3, 3, 0), 1}).indices.empty());
    CHECK(patch_indices(synth_mask(14, 14, 0.5, 11)).indices.size() == 98);
}

TEST_CASE("gumbel forward") {
    CHECK(gumbel_forward(single(0.8, 1.0))[0] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(gumbel_forward(single(0.5, 0.37))[0] == doctest::Approx(0.5).epsilon(1e-12));
    // closed form: 1 / (1 + (0.2 / 0.8)^(1 / tau))
    CHECK(gumbel_forward(single(0.8, 0.1))[0] ==
          doctest::Approx(1.0 / (1.0 + std::pow(0.25, 10.0))).epsilon(1e-12));
    CHECK(gumbel_forward(single(0.8, 0.1))[0] == doctest::Approx(0.99999905).epsilon(1e-8));

    auto bad = single(0.8, 1.0);
    bad.probs = {1.0, 0.0};
    CHECK_THROWS_AS(gumbel_forward(bad), DomainError);
    bad = single(0.8, 0.0);
    CHECK_THROWS_AS(gumbel_forward(bad), DomainError);
}

TEST_CASE("gumbel noise is seeded") {
    CHECK(sample_gumbel(4, 4, 7) == sample_gumbel(4, 4, 7));
    CHECK(sample_gumbel(4, 4, 7) != sample_gumbel(4, 4, 8));
    CHECK(sample_gumbel(3, 5, 1).size() == 30);
}

TEST_CASE("tau schedule decays geometrically") {
    CHECK(tau_schedule(0, 101) == 5.0);
    CHECK(tau_schedule(100, 101) == 0.1);
    CHECK(tau_schedule(50, 101) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
    CHECK_THROWS_AS(tau_schedule(101, 101), DomainError);
    CHECK_THROWS_AS(tau_schedule(-1, 101), DomainError);
}

TEST_CASE("synthetic masks") {
    CHECK(synth_mask(2, 2, 1.0, 5).grid.count() == 4);
    CHECK(synth_mask(14, 14, 0.5, 42) == synth_mask(14, 14, 0.5, 42));
    CHECK(synth_mask(3, 3, 0.5, 1).grid.count() == 5);  // round(4.5)
    CHECK(synth_mask(7, 7, 0.0, 1).grid.count() == 0);
}

TEST_CASE("masks round-trip through run-length text and JSON") {
    const auto m = synth_mask(9, 13, 0.37, 21, 2);
    CHECK(from_rle(to_rle(m.grid)) == m.grid);
    CHECK(nlohmann::json(m).get<CoarseMask>() == m);
    CHECK_THROWS(from_rle("2x2:1*5"));
}
