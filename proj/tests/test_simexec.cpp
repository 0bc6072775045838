// Copyright (C) 2026 The dynlat Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdio>
#include <random>

#include "dynlat/error.hpp"
#include "dynlat/flops.hpp"
#include "dynlat/simexec.hpp"

using namespace dynlat;

namespace {

// Second, independently written convolution: zero padding k / 2.
Tensor naive_conv(const Tensor& x, const std::vector<float>& w, int c_out, int k, int stride) {
    const int pad = k / 2;
    const int oh = (x.h + 2 * pad - k) / stride + 1;
    const int ow = (x.w + 2 * pad - k) / stride + 1;
    Tensor y(c_out, oh, ow);
    for (int co = 0; co < c_out; ++co)
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) {
                double acc = 0.0;
                for (int ci = 0; ci < x.c; ++ci)
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx) {
                            const int r = i * stride - pad + dy;
                            const int c = j * stride - pad + dx;
                            if (r < 0 || c < 0 || r >= x.h || c >= x.w) continue;
                            acc += static_cast<double>(w[((co * x.c + ci) * k + dy) * k + dx]) * x.at(ci, r, c);
                        }
                y.at(co, i, j) = static_cast<float>(acc);
            }
    return y;
}

BlockSpec small_block() {
    BlockSpec b;
    b.conv1 = {8, 4, 1, 1, 1, true};
    b.conv2 = {4, 4, 3, 1, 1, true};
    b.conv3 = {4, 8, 1, 1, 1, false};
    b.input_h = b.input_w = 8;
    b.granularity = 2;
    return b;
}

const HardwareSpec& hw() {
    static const HardwareSpec h = preset_hardware("tx2");
    return h;
}

}  // namespace

TEST_CASE("dense convolution") {
    const Tensor x = random_tensor(3, 5, 5, 1);

    ConvLayerSpec id{3, 3, 1, 1, 1, false};
    ConvWeights eye{id, std::vector<float>(9, 0.0f)};
    for (int c = 0; c < 3; ++c) eye.w[c * 3 + c] = 1.0f;
    CHECK(dense_conv(x, eye, id) == x);

    ConvLayerSpec k3{3, 4, 3, 1, 1, false};
    ConvWeights zero{k3, std::vector<float>(static_cast<std::size_t>(k3.weight_count()), 0.0f)};
    CHECK(dense_conv(x, zero, k3) == Tensor(4, 5, 5));

    for (int stride : {1, 2}) {
        ConvLayerSpec l{3, 4, 3, stride, 1, false};
        const auto w = random_conv_weights(l, 9);
        CHECK(max_abs_diff(dense_conv(x, w, l), naive_conv(x, w.w, 4, 3, stride)) <= 1e-6);
    }

    ConvLayerSpec wrong{5, 4, 3, 1, 1, false};
    CHECK_THROWS_AS(dense_conv(x, random_conv_weights(wrong, 1), wrong), ShapeError);
}

TEST_CASE("dynamic block forward") {
    const BlockSpec b = small_block();
    const Tensor x = random_tensor(8, 8, 8, 4);
    const BlockWeights w = random_block_weights(b, 5);
    const Tensor dense = dense_block_forward(x, w, b);

    SUBCASE("all patches active reproduces the dense block") {
        const CoarseMask all{BinaryGrid(4, 4, 1), 2};
        for (const auto& plan : {FusionPlan::none(), FusionPlan::all()})
            CHECK(max_abs_diff(dynamic_block_forward(x, w, b, all, plan, hw()), dense) <= 1e-5);
    }
    SUBCASE("no active patch passes the input through") {
        const CoarseMask none{BinaryGrid(4, 4, 0), 2};
        CHECK(dynamic_block_forward(x, w, b, none, FusionPlan::all(), hw()) == x);
        CHECK(dynamic_block_forward(x, w, b, none, FusionPlan::none(), hw()) == x);
    }
    SUBCASE("fusion plans agree and selected patches match dense") {
        const auto mask = synth_mask(4, 4, 0.5, 8, 2);
        const Tensor ref = dynamic_block_forward(x, w, b, mask, FusionPlan::none(), hw());
        for (int f = 1; f < 8; ++f) {
            const FusionPlan p{(f & 4) != 0, (f & 2) != 0, (f & 1) != 0};
            CHECK(max_abs_diff(dynamic_block_forward(x, w, b, mask, p, hw()), ref) <= 1e-6);
        }
        const auto up = upsample(mask);
        double worst = 0.0;
        for (int c = 0; c < ref.c; ++c)
            for (int i = 0; i < ref.h; ++i)
                for (int j = 0; j < ref.w; ++j) {
                    const double want = up.grid.at(i, j) ? dense.at(c, i, j) : x.at(c, i, j);
                    worst = std::max(worst, std::abs(ref.at(c, i, j) - want));
                }
        CHECK(worst <= 1e-5);
    }
    SUBCASE("mismatched masks and SE blocks are rejected") {
        const CoarseMask wrong{BinaryGrid(2, 2, 1), 4};
        CHECK_THROWS_AS(dynamic_block_forward(x, w, b, wrong, FusionPlan::all(), hw()), ShapeError);
        BlockSpec se = b;
        se.se_reduction = 0.25;
        CHECK_THROWS_AS(dense_block_forward(x, w, se), ShapeError);
    }
}

TEST_CASE("masker channel reduction") {
    CHECK(masker_reduce_weights({1.0f, -2.0f, 1.0f, -2.0f}, 2) == std::vector<float>{0.0f, 0.0f});
    CHECK(masker_reduce_weights({0.5f, 3.0f, 0.0f, 0.0f}, 2) == std::vector<float>{0.5f, 3.0f});

    std::mt19937 rng(17);
    std::normal_distribution<float> nd;
    int violations = 0;
    for (int trial = 0; trial < 2000; ++trial) {
        const int c = 1 + trial % 16;
        std::vector<float> w2(static_cast<std::size_t>(2 * c)), x(static_cast<std::size_t>(c));
        for (auto& v : w2) v = nd(rng);
        for (auto& v : x) v = nd(rng);
        const auto w1 = masker_reduce_weights(w2, c);
        double a0 = 0.0, a1 = 0.0, r = 0.0;
        for (int i = 0; i < c; ++i) {
            a0 += static_cast<double>(w2[i]) * x[i];
            a1 += static_cast<double>(w2[c + i]) * x[i];
            r += static_cast<double>(w1[i]) * x[i];
        }
        if ((a0 > a1) != (r > 0.0)) ++violations;
    }
    CHECK(violations == 0);
}

TEST_CASE("traffic oracle") {
    const BlockSpec b = small_block();
    SUBCASE("model and trace agree term by term") {
        for (double r : {0.0, 0.25, 0.75, 1.0})
            for (int f = 0; f < 8; ++f) {
                const FusionPlan p{(f & 4) != 0, (f & 2) != 0, (f & 1) != 0};
                const auto rep = verify_traffic(b, synth_mask(4, 4, r, 3, 2), p, hw());
                CHECK(rep.ok());
                CHECK(rep.model_total == rep.traced_total);
            }
    }
    SUBCASE("no active patch moves nothing through the dynamic convs") {
        const auto rep = verify_traffic(b, {BinaryGrid(4, 4, 0), 2}, FusionPlan::all(), hw());
        for (const auto& d : rep.per_op)
            if (d.op == "conv2" || d.op == "conv3") {
                CHECK(d.traced == OpTraffic{});
                CHECK(d.model == OpTraffic{});
            }
    }
    SUBCASE("scatter-add fusion reduces traced global traffic") {
        const auto m = synth_mask(4, 4, 0.5, 2, 2);
        const auto a = verify_traffic(b, m, {true, true, false}, hw()).traced_total;
        const auto s = verify_traffic(b, m, {true, true, true}, hw()).traced_total;
        CHECK(s.off2on_bytes + s.on2off_bytes < a.off2on_bytes + a.on2off_bytes);
    }
    SUBCASE("a corrupted element size is caught") {
        VerifyOptions opt;
        opt.model_element_bytes = 5;
        CHECK_FALSE(verify_traffic(b, synth_mask(4, 4, 0.5, 2, 2), FusionPlan::all(), hw(), opt).ok());
    }
    CHECK(default_verify_suite(1).size() == 128);
}

TEST_CASE("traced distinct MACs equal the FLOPs count") {
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        const BlockSpec b = random_desk_block(seed);
        const auto mask = synth_mask(b.cells_h(), b.cells_w(), 0.4, seed, b.granularity);
        const Tensor x = random_tensor(b.conv1.c_in, b.input_h, b.input_w, seed);
        const BlockWeights w = random_block_weights(b, seed);
        for (const auto& plan : {FusionPlan::none(), FusionPlan::all()}) {
            TrafficTrace t;
            dynamic_block_forward(x, w, b, mask, plan, hw(), &t);
            CHECK(t.distinct_macs ==
                  static_cast<std::int64_t>(block_dynamic_macs(b, mask, plan).total_macs));
            CHECK(t.distinct_macs <= t.total.mac_count);
        }
    }
}

TEST_CASE("tensor files round-trip") {
    const Tensor t = random_tensor(3, 4, 5, 2);
    const std::string path = "simexec_tensor_test.bin";
    save_tensor(t, path);
    CHECK(load_tensor(path) == t);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_tensor("does_not_exist.bin"), Error);
}

TEST_CASE("desk-scale random blocks stay small and valid") {
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto b = random_desk_block(s);
        CHECK_NOTHROW(b.validate());
        CHECK(b.conv1.c_in <= 32);
        CHECK(b.out_h() <= 16);
        CHECK(b == random_desk_block(s));
    }
}
