// Copyright (C) 2026 The dynlat Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "dynlat/error.hpp"
#include "dynlat/sched.hpp"

using namespace dynlat;

namespace {

const NetworkSpec& r101() {
    static const NetworkSpec net = preset_network("resnet101");
    return net;
}

BlockSpec stage1(int s) { return stage_block(r101(), 0).with_granularity(s); }

std::vector<std::string> names(const std::vector<Operator>& ops) {
    std::vector<std::string> out;
    for (const auto& o : ops) out.push_back(o.name);
    return out;
}

double block_latency(const BlockSpec& b, double r, const HardwareSpec& hw, FusionPlan p) {
    return predict_block_latency(b, r, hw, p).total;
}

}  // namespace

TEST_CASE("operator rewrite") {
    const auto b = stage1(4);
    CHECK(names(rewrite_block(b, FusionPlan::none())) ==
          std::vector<std::string>{"masker", "gather", "conv1", "conv2", "conv3", "scatter", "add"});
    CHECK(names(rewrite_block(b, FusionPlan::all())) ==
          std::vector<std::string>{"masker_conv1", "conv2", "conv3", "scatter_add"});
    CHECK(rewrite_block(b, {false, false, true}).size() == 6);
    CHECK(rewrite_block(b, {false, true, false}).size() == 6);
    CHECK(names(rewrite_block(b, {true, false, false})) ==
          std::vector<std::string>{"masker_conv1", "gather", "conv2", "conv3", "scatter", "add"});
    // entry blocks keep their projection shortcut
    CHECK(rewrite_block(r101().stages[1].first, FusionPlan::all()).size() == 5);
}

TEST_CASE("r_th on the first-stage block") {
    const auto hw = preset_hardware("v100");
    const auto th = compute_r_th(stage1(4), 4, hw);
    REQUIRE(th.status == RThreshold::Status::found);
    CHECK(th.r_th > 0.0);
    CHECK(th.r_th < 1.0);
    CHECK(masker_fusion_gain(stage1(4), 4, th.r_th - 0.01, hw) > 0.0);
    CHECK(masker_fusion_gain(stage1(4), 4, th.r_th + 0.01, hw) < 0.0);
}

TEST_CASE("r_th boundaries") {
    const auto b = stage1(4);
    // Without off-chip traffic cost, the fused dense conv1 never pays off.
    auto h = preset_hardware("v100");
    h.offchip_bandwidth = h.onchip_global_bandwidth = h.local_bandwidth_per_pe = 1e30;
    const auto never = compute_r_th(b, 4, h);
    if (masker_fusion_gain(b, 4, 1.0, h) > 0.0) {
        CHECK(never.status == RThreshold::Status::never);
        CHECK_FALSE(never.has_value());
    }
    // Starved bandwidth: the extra gather pass dominates and fusion always wins.
    auto slow = preset_hardware("nano");
    slow.offchip_bandwidth = 1e6;
    slow.onchip_global_bandwidth = 1e7;
    slow.local_bandwidth_per_pe = 1e7;
    if (masker_fusion_gain(b, 4, 0.0, slow) <= 0.0) {
        const auto always = compute_r_th(b, 4, slow);
        CHECK(always.status == RThreshold::Status::always);
        CHECK(always.r_th == 0.0);
    }
    CHECK(to_string(RThreshold::Status::found) == "found");
}

TEST_CASE("fusion decision") {
    const auto hw = preset_hardware("v100");
    const auto b = stage1(4);
    CHECK(decide_fusion(b, 4, 1.0, hw).fuse_masker_conv1);
    CHECK_FALSE(decide_fusion(b, 4, 0.0, hw).fuse_masker_conv1);
    CHECK(decide_fusion(b, 4, 0.0, hw).fuse_gather_conv);
    CHECK(decide_fusion(b, 4, 0.0, hw).fuse_scatter_add);
    CHECK_THROWS_AS(decide_fusion(b, 4, 1.1, hw), DomainError);
    for (double r = 0.0; r <= 1.0; r += 0.1) {
        const double chosen = block_latency(b, r, hw, decide_fusion(b, 4, r, hw));
        CHECK(chosen <= std::max(block_latency(b, r, hw, {true, true, true}),
                                 block_latency(b, r, hw, {false, true, true})));
    }
}

TEST_CASE("activation-rate sweep") {
    const auto hw = preset_hardware("v100");
    std::vector<double> grid;
    for (int i = 0; i <= 20; ++i) grid.push_back(i / 20.0);
    const auto s8 = sweep_r(stage1(8), 8, hw, grid);
    const auto s1 = sweep_r(stage1(1), 1, hw, grid);
    REQUIRE(s8.points.size() == 21);
    CHECK(s8.axis == "r");
    double lowest = s8.points.front().l_dyn;
    for (const auto& p : s8.points) {
        CHECK(p.r_l == p.l_dyn / p.l_stat);
        lowest = std::min(lowest, p.l_dyn);
    }
    CHECK(s8.points.front().l_dyn == lowest);
    CHECK(s8.points.back().r_l >= 1.0);
    for (std::size_t i = 0; i < grid.size(); ++i) CHECK(s8.points[i].r_l <= s1.points[i].r_l);
    CHECK_THROWS_AS(sweep_r(stage1(8), 8, hw, {0.5, 1.5}), DomainError);
}

TEST_CASE("granularity sweep") {
    const auto hw = preset_hardware("v100");
    const auto res = sweep_s(stage1(1), 0.5, hw);
    REQUIRE(res.points.size() == 7);
    std::vector<double> xs;
    for (const auto& p : res.points) xs.push_back(p.x);
    CHECK(xs == std::vector<double>{1, 2, 4, 7, 8, 14, 28});
    for (std::size_t i = 1; i < res.points.size(); ++i)
        CHECK(res.points[i].r_l <= res.points[i - 1].r_l);
    // 7x7 output: S=1 only
    CHECK(sweep_s(stage_block(r101(), 3), 0.5, hw).points.size() == 1);
}

TEST_CASE("sweep CSV round-trips") {
    std::vector<double> grid{0.0, 0.05, 0.35, 1.0};
    const auto res = sweep_r(stage1(4), 4, preset_hardware("tx2"), grid);
    const auto csv = sweep_csv(res);
    CHECK(csv.rfind("x,l_dyn_us,l_stat_us,r_l\n", 0) == 0);
    const auto back = parse_sweep_csv(csv);
    REQUIRE(back.size() == res.points.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].x == res.points[i].x);
        CHECK(back[i].r_l == res.points[i].r_l);
        CHECK(std::abs(back[i].l_dyn - res.points[i].l_dyn) <= 0.5e-9);
    }
    CHECK(sweep_csv(res) == sweep_csv(sweep_r(stage1(4), 4, preset_hardware("tx2"), grid)));
    CHECK_THROWS_AS(parse_sweep_csv("bad\n"), Error);
}

TEST_CASE("network latency") {
    const auto hw = preset_hardware("gtx1080");
    const auto n = r101().block_count();
    const auto ones = network_latency(r101(), std::vector<double>(n, 1.0), hw, false);
    CHECK(ones.speedup == 0.0);
    CHECK(ones.total == ones.static_total);

    const auto half = network_latency(r101(), std::vector<double>(n, 0.5), hw);
    double sum = 0.0;
    for (const auto& b : half.per_block) sum += b.latency;
    CHECK(half.total == sum + half.stem_head);
    CHECK(half.speedup == doctest::Approx(1.0 - half.total / half.static_total).epsilon(1e-15));
    CHECK(half.speedup > 0.0);
    CHECK_THROWS_AS(network_latency(r101(), std::vector<double>(n + 1, 0.5), hw), DomainError);

    const auto fixed = network_latency(r101(), std::vector<double>(n, 0.5), hw, true, FusionPlan::none());
    for (const auto& b : fixed.per_block) CHECK(b.plan == FusionPlan::none());
    CHECK(fixed.total > half.total);
}

TEST_CASE("fusion ablation") {
    const auto hw = preset_hardware("v100");
    const auto rows = fusion_ablation(stage1(4), 4, 0.6, hw);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].label == "none");
    CHECK(rows[3].plan == FusionPlan::all());
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].latency < rows[i - 1].latency);

    const auto csv = ablation_csv(rows);
    const auto back = parse_ablation_csv(csv);
    REQUIRE(back.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(back[i].label == rows[i].label);
        CHECK(back[i].plan == rows[i].plan);
    }
    CHECK(csv == ablation_csv(fusion_ablation(stage1(4), 4, 0.6, hw)));

    // r = 0: the dynamic convs vanish; only the unfused residual copy remains
    const auto zero = fusion_ablation(stage1(4), 4, 0.0, hw);
    CHECK(zero[1].latency == doctest::Approx(zero[2].latency).epsilon(1e-12));
    double copy = 0.0;
    for (const auto& o : predict_block_latency(stage1(4), 0.0, hw, zero[2].plan).per_op)
        if (o.op == "scatter" || o.op == "add") copy += o.latency.total;
    CHECK(zero[2].latency - copy == doctest::Approx(zero[3].latency).epsilon(1e-12));
}

TEST_CASE("fusion plan codes") {
    CHECK(parse_fusion_plan("MGS") == FusionPlan::all());
    CHECK(parse_fusion_plan("---") == FusionPlan::none());
    CHECK(parse_fusion_plan("-G-") == FusionPlan{false, true, false});
    CHECK_THROWS_AS(parse_fusion_plan("MG"), Error);
    CHECK_THROWS_AS(parse_fusion_plan("XGS"), Error);
    for (int f = 0; f < 8; ++f) {
        const FusionPlan p{(f & 4) != 0, (f & 2) != 0, (f & 1) != 0};
        CHECK(parse_fusion_plan(to_string(p)) == p);
    }
}

TEST_CASE("granularity choice") {
    const auto hw = preset_hardware("v100");
    const auto n = r101().block_count();
    const std::vector<double> rates(n, 0.5);
    const auto s = choose_granularity(r101(), hw, rates);
    REQUIRE(s.size() == 4);
    CHECK(s.back() == 1);
    CHECK(s.front() > s.back());
    for (int st = 0; st + 1 < 4; ++st) {
        double best = std::numeric_limits<double>::infinity();
        const auto& rep = r101().stages[st].repeated;
        for (int g : valid_granularities(rep.out_h()))
            best = std::min(best, stage_latency(r101(), st, g, hw, rates));
        CHECK(stage_latency(r101(), st, s[st], hw, rates) <= best * 1.02);
    }
}
