// Copyright (C) 2026 The dynlat Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "dynlat/error.hpp"
#include "dynlat/flops.hpp"

using namespace dynlat;

namespace {

// Per-layer hand count of a torchvision-style bottleneck ResNet at 224x224
// (stride on the 3x3 conv), written from the layer table only.
double resnet_oracle_macs(const std::vector<int>& blocks) {
    auto conv = [](double h, double w, double cin, double cout, double k) {
        return h * w * cin * cout * k * k;
    };
    double m = conv(112, 112, 3, 64, 7);  // stem
    double in_ch = 64;
    double side_in = 56;
    for (std::size_t st = 0; st < blocks.size(); ++st) {
        const double width = 64.0 * std::pow(2.0, static_cast<double>(st));
        const double out_ch = 4 * width;
        const double side = st == 0 ? 56 : side_in / 2;
        for (int b = 0; b < blocks[st]; ++b) {
            const double cin = b == 0 ? in_ch : out_ch;
            const double hin = b == 0 ? side_in : side;
            m += conv(hin, hin, cin, width, 1);
            m += conv(side, side, width, width, 3);
            m += conv(side, side, width, out_ch, 1);
            if (b == 0) m += conv(side, side, cin, out_ch, 1);
        }
        in_ch = out_ch;
        side_in = side;
    }
    return m + 2048.0 * 1000.0;  // classifier
}

// Brute-force loop nest: one MAC per (output element, receptive-field tap).
std::int64_t loop_nest_macs(const ConvLayerSpec& l, int oh, int ow) {
    std::int64_t n = 0;
    for (int co = 0; co < l.c_out; ++co)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x)
                for (int ci = 0; ci < l.c_in / l.groups; ++ci)
                    for (int dy = 0; dy < l.kernel; ++dy)
                        for (int dx = 0; dx < l.kernel; ++dx) ++n;
    return n;
}

double layer(const FlopsReport& r, const std::string& id) {
    for (const auto& l : r.per_layer)
        if (l.id == id) return l.macs;
    FAIL("missing layer " << id);
    return 0.0;
}

std::vector<FusionPlan> plans(const NetworkSpec& n, FusionPlan p) {
    return std::vector<FusionPlan>(n.block_count(), p);
}

const FusionPlan kUnfused{false, true, true};

}  // namespace

TEST_CASE("conv MACs") {
    CHECK(conv_macs({64, 64, 3, 1, 1, true}, 56, 56) == 115'605'504);
    CHECK(conv_macs({64, 64, 1, 1, 64, true}, 56, 56) == 200'704);

    std::mt19937 rng(5);
    for (int i = 0; i < 30; ++i) {
        const int g = std::uniform_int_distribution<int>(1, 4)(rng);
        const ConvLayerSpec l{g * std::uniform_int_distribution<int>(1, 4)(rng),
                              g * std::uniform_int_distribution<int>(1, 4)(rng),
                              (i % 2) ? 3 : 1, 1, g, true};
        const int oh = std::uniform_int_distribution<int>(1, 9)(rng);
        const int ow = std::uniform_int_distribution<int>(1, 9)(rng);
        CHECK(conv_macs(l, oh, ow) == loop_nest_macs(l, oh, ow));
    }
}

TEST_CASE("hand-count oracle matches the published backbone sizes") {
    CHECK(resnet_oracle_macs({3, 4, 6, 3}) == doctest::Approx(4.09e9).epsilon(0.005));
    CHECK(resnet_oracle_macs({3, 4, 23, 3}) == doctest::Approx(7.8e9).epsilon(0.005));
}

TEST_CASE("preset static MACs agree with the oracle") {
    for (const auto& [name, blocks] : std::vector<std::pair<std::string, std::vector<int>>>{
             {"resnet50", {3, 4, 6, 3}}, {"resnet101", {3, 4, 23, 3}}}) {
        const auto net = preset_network(name);
        const auto r = network_flops(net, std::vector<double>(net.block_count(), 1.0),
                                     plans(net, FusionPlan::none()), false);
        CHECK(r.f_stat == doctest::Approx(resnet_oracle_macs(blocks)).epsilon(0.005));
        CHECK(r.ratio == 1.0);
        CHECK(r.f_dyn == r.f_stat);
    }
}

TEST_CASE("dynamic block MACs") {
    const BlockSpec b = stage_block(preset_network("resnet101"), 0).with_granularity(4);
    const double conv1 = static_cast<double>(conv_macs(b.conv1, 56, 56));
    const double conv2 = static_cast<double>(conv_macs(b.conv2, 56, 56));
    const double conv3 = static_cast<double>(conv_macs(b.conv3, 56, 56));

    SUBCASE("full activation keeps every conv dense") {
        for (int s : {1, 2, 4, 8, 28}) {
            const auto r = block_dynamic_macs(b.with_granularity(s), 1.0, FusionPlan::none());
            CHECK(layer(r, "conv1") == conv1);
            CHECK(layer(r, "conv2") == conv2);
            CHECK(layer(r, "conv3") == conv3);
        }
    }
    SUBCASE("zero activation leaves the masker") {
        const auto r = block_dynamic_macs(b, 0.0, FusionPlan::none());
        CHECK(layer(r, "conv1") == 0.0);
        CHECK(layer(r, "conv2") == 0.0);
        CHECK(r.total_macs == layer(r, "masker"));
        CHECK(layer(r, "masker") == 256.0 * 56 * 56 + 256.0 * 14 * 14);
    }
    SUBCASE("halo factor for conv1, capped at dense") {
        // 0.5 * (6/4)^2 = 1.125 -> 1
        CHECK(layer(block_dynamic_macs(b, 0.5, FusionPlan::none()), "conv1") == conv1);
        // 0.25 * (10/8)^2 = 0.390625
        CHECK(layer(block_dynamic_macs(b.with_granularity(8), 0.25, FusionPlan::none()), "conv1") ==
              doctest::Approx(0.390625 * conv1).epsilon(1e-12));
        CHECK(layer(block_dynamic_macs(b, 0.5, FusionPlan::none()), "conv2") == 0.5 * conv2);
    }
    SUBCASE("masker fusion makes conv1 dense") {
        const auto r = block_dynamic_macs(b.with_granularity(8), 0.1, FusionPlan::all());
        CHECK(layer(r, "conv1") == conv1);
        CHECK(layer(r, "masker") == 256.0 * 56 * 56 + 56.0 * 56);
    }
    CHECK_THROWS_AS(block_dynamic_macs(b, 1.5, FusionPlan::none()), DomainError);
    CHECK_THROWS_AS(block_dynamic_macs(b, -0.1, FusionPlan::none()), DomainError);
}

TEST_CASE("mask form counts the exact union of halo windows") {
    BlockSpec b;
    b.conv1 = {8, 4, 1, 1, 1, true};
    b.conv2 = {4, 4, 3, 1, 1, true};
    b.conv3 = {4, 8, 1, 1, 1, false};
    b.input_h = b.input_w = 8;
    b.granularity = 2;
    const double conv1 = static_cast<double>(conv_macs(b.conv1, 8, 8));

    CoarseMask corner{BinaryGrid(4, 4, 0), 2};
    corner.grid.set(0, 0, true);
    CHECK(layer(block_dynamic_macs(b, corner, FusionPlan::none()), "conv1") == conv1 * 9 / 64);
    corner.grid.set(0, 1, true);
    CHECK(layer(block_dynamic_macs(b, corner, FusionPlan::none()), "conv1") == conv1 * 15 / 64);

    CoarseMask wrong{BinaryGrid(2, 2, 1), 4};
    CHECK_THROWS_AS(block_dynamic_macs(b, wrong, FusionPlan::none()), ShapeError);
}

TEST_CASE("network FLOPs") {
    const auto net = preset_network("resnet50");
    const auto n = net.block_count();
    CHECK_THROWS_AS(network_flops(net, std::vector<double>(n - 1, 1.0), plans(net, kUnfused)),
                    DomainError);
    const auto r = network_flops(net, std::vector<double>(n, 0.5), plans(net, kUnfused));
    double sum = 0.0;
    for (const auto& l : r.per_layer) sum += l.macs;
    CHECK(r.total_macs == doctest::Approx(sum).epsilon(1e-15));
    CHECK(r.ratio == doctest::Approx(r.f_dyn / r.f_stat).epsilon(1e-15));
    CHECK(r.ratio < 1.0);
}

TEST_CASE("FLOPs loss") {
    CHECK(flops_loss(4.0, 10.0, 0.4) == 0.0);
    CHECK(flops_loss(5.0, 10.0, 0.4) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(flops_loss(0.0, 10.0, 0.4) == doctest::Approx(0.16).epsilon(1e-12));
}

TEST_CASE("uniform rate solve") {
    const auto net = preset_network("resnet101");
    const auto n = net.block_count();
    const auto fus = plans(net, kUnfused);
    auto ratio = [&](double r) { return network_flops(net, std::vector<double>(n, r), fus).ratio; };

    const double r04 = solve_uniform_rate(net, 0.4, fus);
    CHECK(std::abs(ratio(r04) - 0.4) < 1e-6);
    CHECK(solve_uniform_rate(net, 0.6, fus) > r04);
    CHECK(solve_uniform_rate(net, ratio(1.0), fus) == 1.0);
    CHECK_THROWS_AS(solve_uniform_rate(net, 0.01, fus), DomainError);
    CHECK_THROWS_AS(solve_uniform_rate(net, 1.5, fus), DomainError);
}

TEST_CASE("FLOPs CSV has one row per layer") {
    const auto r = block_dynamic_macs(stage_block(preset_network("resnet50"), 1), 0.3,
                                      FusionPlan::none());
    const auto csv = flops_csv(r);
    CHECK(csv.rfind("layer,macs\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(r.per_layer.size()) + 1);
}
