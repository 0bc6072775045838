// Copyright (C) 2026 The dynlat Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "dynlat/error.hpp"
#include "dynlat/model.hpp"

using namespace dynlat;

TEST_CASE("hardware presets carry the device table and derived defaults") {
    const auto v100 = preset_hardware("v100");
    CHECK(v100.num_pe == 80);
    CHECK(v100.fp32_lanes_per_pe == 64);
    CHECK(v100.frequency == doctest::Approx(1500e6));
    CHECK(v100.offchip_bandwidth == doctest::Approx(700e9));
    CHECK(v100.txn_bytes == 128);
    CHECK(v100.onchip_global_bandwidth == doctest::Approx(7000e9));
    CHECK(v100.local_bandwidth_per_pe == doctest::Approx(64 * 8 * 1500e6));
    CHECK(v100.device_macs_per_second() == doctest::Approx(7.68e12));

    const auto nano = preset_hardware("nano");
    CHECK(nano.num_pe == 1);
    CHECK(nano.fp32_lanes_per_pe == 128);
    CHECK(nano.frequency == doctest::Approx(921e6));
    CHECK(nano.offchip_bandwidth == doctest::Approx(25.6e9));

    CHECK_THROWS_AS(preset_hardware("v101"), NotFound);
    CHECK(hardware_preset_names().size() == 4);
}

TEST_CASE("hardware validation rejects non-positive fields and inverted hierarchy") {
    auto h = preset_hardware("tx2");
    h.num_pe = 0;
    CHECK_THROWS_AS(h.validate(), InvalidShape);
    h = preset_hardware("tx2");
    h.onchip_global_bandwidth = h.offchip_bandwidth / 2;
    CHECK_THROWS_AS(h.validate(), InvalidShape);
}

TEST_CASE("network presets follow the standard stage tables") {
    const auto r101 = preset_network("resnet101", 224);
    REQUIRE(r101.stages.size() == 4);
    CHECK(r101.stages[0].block_count == 3);
    CHECK(r101.stages[1].block_count == 4);
    CHECK(r101.stages[2].block_count == 23);
    CHECK(r101.stages[3].block_count == 3);
    CHECK(r101.stages[0].first.input_h == 56);
    CHECK(r101.stages[0].first.out_h() == 56);
    CHECK(r101.block_count() == 33);
    CHECK(r101.s_net == std::vector<int>{8, 4, 7, 1});

    const auto r50 = preset_network("resnet50", 224);
    CHECK(r50.stages[2].block_count == 6);
    CHECK(r50.block_count() == 16);

    CHECK_THROWS_AS(preset_network("resnet50", 225), InvalidShape);
    CHECK_THROWS_AS(preset_network("vgg16"), NotFound);
    for (const auto& n : network_preset_names()) CHECK_NOTHROW(preset_network(n).validate());
}

TEST_CASE("stage block is the stride-1 identity-residual block") {
    const auto net = preset_network("resnet101");
    const auto b = stage_block(net, 0);
    CHECK(b.conv1.c_in == 256);
    CHECK(b.conv1.c_out == 64);
    CHECK(b.conv3.c_out == 256);
    CHECK(b.stride() == 1);
    CHECK_FALSE(b.downsample.has_value());
    CHECK(b.granularity == 8);
}

TEST_CASE("valid granularities exclude the whole feature") {
    CHECK(valid_granularities(56) == std::vector<int>{1, 2, 4, 7, 8, 14, 28});
    CHECK(valid_granularities(7) == std::vector<int>{1});
    CHECK(valid_granularities(1).empty());
}

TEST_CASE("block validation") {
    auto b = stage_block(preset_network("resnet50"), 0);
    CHECK_NOTHROW(b.validate());
    CHECK_THROWS_AS(b.with_granularity(3).validate(), InvalidShape);
    b.conv2.groups = 3;
    CHECK_THROWS_AS(b.validate(), InvalidShape);
}

TEST_CASE("specs round-trip through JSON") {
    for (const auto& n : hardware_preset_names()) {
        const auto h = preset_hardware(n);
        CHECK(nlohmann::json(h).get<HardwareSpec>() == h);
    }
    for (const auto& n : network_preset_names()) {
        const auto net = preset_network(n);
        CHECK(nlohmann::json::parse(nlohmann::json(net).dump()).get<NetworkSpec>() == net);
    }
}

TEST_CASE("hardware files fill extension defaults") {
    const std::string path = "model_hw_test.json";
    {
        std::ofstream f(path);
        f << R"({"name":"toy","num_pe":2,"fp32_lanes_per_pe":16,"frequency":1e9,"offchip_bandwidth":1e10})";
    }
    const auto h = load_hardware(path);
    CHECK(h.txn_bytes == 128);
    CHECK(h.onchip_global_bandwidth == doctest::Approx(1e11));
    CHECK(h.local_bandwidth_per_pe == doctest::Approx(16 * 8 * 1e9));
    CHECK(h.fma_per_lane_per_cycle == 1);
    std::remove(path.c_str());
}
