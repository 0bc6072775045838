// Copyright (C) 2026 The dynlat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace dynlat {

// ---------------------------------------------------------------------------
// Hardware description consumed by the latency model.
//
// The first four numeric fields mirror the published device table; the
// remaining ones extend it (see preset_hardware for their defaults).
// ---------------------------------------------------------------------------
struct HardwareSpec {
    std::string name;
    std::int64_t num_pe = 1;
    std::int64_t fp32_lanes_per_pe = 1;
    double frequency = 1.0;                 // Hz
    double offchip_bandwidth = 1.0;         // bytes/s
    double onchip_global_bandwidth = 1.0;   // bytes/s
    double local_bandwidth_per_pe = 1.0;    // bytes/s
    std::int64_t txn_bytes = 128;           // memory transaction granularity
    std::int64_t fma_per_lane_per_cycle = 1;

    // Throws InvalidShape on non-positive fields or inverted bandwidth hierarchy.
    void validate() const;

    double pe_macs_per_second() const {
        return static_cast<double>(fp32_lanes_per_pe * fma_per_lane_per_cycle) * frequency;
    }
    double device_macs_per_second() const {
        return static_cast<double>(num_pe) * pe_macs_per_second();
    }
    // Bandwidth available for global -> local moves when every PE is busy.
    double global_to_local_bandwidth() const;

    bool operator==(const HardwareSpec&) const = default;
};

struct ConvLayerSpec {
    int c_in = 1;
    int c_out = 1;
    int kernel = 1;   // 1 or 3
    int stride = 1;   // 1 or 2
    int groups = 1;
    bool has_bn_act_fused = true;

    void validate() const;
    int padding() const { return kernel / 2; }
    int out_size(int in) const { return (in + 2 * padding() - kernel) / stride + 1; }
    std::int64_t weight_count() const {
        return static_cast<std::int64_t>(c_out) * (c_in / groups) * kernel * kernel;
    }

    bool operator==(const ConvLayerSpec&) const = default;
};

// Bottleneck block: conv1 (1x1) -> conv2 (3x3, carries the stride) -> conv3 (1x1),
// optional squeeze-excitation after conv2, residual add. The spatial mask
// lives on the conv2 output grid.
struct BlockSpec {
    ConvLayerSpec conv1;
    ConvLayerSpec conv2;
    ConvLayerSpec conv3;
    int input_h = 1;
    int input_w = 1;
    bool has_residual = true;
    std::optional<ConvLayerSpec> downsample;
    std::optional<double> se_reduction;  // relative to the block input width
    std::string masker_pool = "average";
    int granularity = 1;

    void validate() const;

    int stride() const { return conv2.stride; }
    int out_h() const { return conv2.out_size(input_h); }
    int out_w() const { return conv2.out_size(input_w); }
    int cells_h() const { return out_h() / granularity; }
    int cells_w() const { return out_w() / granularity; }
    std::int64_t total_cells() const {
        return static_cast<std::int64_t>(cells_h()) * cells_w();
    }
    int se_channels() const;
    // Side of the conv2 input window covering one S x S output patch.
    int input_patch_side() const { return stride() * (granularity - 1) + conv2.kernel; }

    BlockSpec with_granularity(int s) const {
        BlockSpec b = *this;
        b.granularity = s;
        return b;
    }

    bool operator==(const BlockSpec&) const = default;
};

// Layers outside the dynamic blocks (stem, pooling, classifier). Always dense.
struct StaticLayer {
    std::string name;
    std::int64_t macs = 0;
    std::int64_t input_bytes = 0;
    std::int64_t weight_bytes = 0;
    std::int64_t output_bytes = 0;

    bool operator==(const StaticLayer&) const = default;
};

struct Stage {
    BlockSpec first;     // entry block (may change resolution or width)
    BlockSpec repeated;  // template for blocks 2..block_count
    int block_count = 1;

    bool operator==(const Stage&) const = default;
};

struct NetworkSpec {
    std::string name;
    std::vector<Stage> stages;
    std::vector<int> s_net;
    std::vector<StaticLayer> stem_and_head;

    void validate() const;

    // Flattened block list with each stage's granularity applied.
    std::vector<BlockSpec> blocks() const;
    // Stage index of every flattened block.
    std::vector<int> block_stages() const;
    std::size_t block_count() const;
    NetworkSpec with_s_net(std::vector<int> s) const;

    bool operator==(const NetworkSpec&) const = default;
};

// Throws NotFound for unknown names.
HardwareSpec preset_hardware(std::string_view name);
std::vector<std::string> hardware_preset_names();

// Throws NotFound for unknown names and InvalidShape when the resolution is
// not a multiple of 32.
NetworkSpec preset_network(std::string_view name, int input_resolution = 224);
std::vector<std::string> network_preset_names();

// Divisors of feature_side, ascending, excluding feature_side itself.
std::vector<int> valid_granularities(int feature_side);

// Representative stride-1, identity-residual block of a stage (its second
// block), or the entry block when the stage has a single block.
BlockSpec stage_block(const NetworkSpec& net, int stage);

// JSON (field names as in the struct definitions).
void to_json(nlohmann::json& j, const HardwareSpec& h);
void from_json(const nlohmann::json& j, HardwareSpec& h);
void to_json(nlohmann::json& j, const ConvLayerSpec& c);
void from_json(const nlohmann::json& j, ConvLayerSpec& c);
void to_json(nlohmann::json& j, const BlockSpec& b);
void from_json(const nlohmann::json& j, BlockSpec& b);
void to_json(nlohmann::json& j, const StaticLayer& l);
void from_json(const nlohmann::json& j, StaticLayer& l);
void to_json(nlohmann::json& j, const Stage& s);
void from_json(const nlohmann::json& j, Stage& s);
void to_json(nlohmann::json& j, const NetworkSpec& n);
void from_json(const nlohmann::json& j, NetworkSpec& n);

// Loads a spec from a JSON file, validating it. Throws Error on I/O failure.
HardwareSpec load_hardware(const std::string& path);
NetworkSpec load_network(const std::string& path);

}  // namespace dynlat
