// Copyright (C) 2026 The dynlat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dynlat/graph.hpp"
#include "dynlat/mask.hpp"
#include "dynlat/model.hpp"

namespace dynlat {

inline constexpr std::int64_t kElementBytes = 4;

// A (T_P, T_C, T_S1, T_S2) chunk of an operator's output assigned to one PE.
struct TileShape {
    std::int64_t t_p = 1;
    std::int64_t t_c = 1;
    std::int64_t t_s1 = 1;
    std::int64_t t_s2 = 1;

    bool operator==(const TileShape&) const = default;
};

// Output of a gathered operator: P patches of C_out x S x S.
struct GatheredShape {
    std::int64_t p = 0;
    int c_out = 1;
    int s = 1;
};

// Generic tiled output domain P x C x E1 x E2.
struct TileDomain {
    std::int64_t p = 1;
    std::int64_t c = 1;
    std::int64_t e1 = 1;
    std::int64_t e2 = 1;
};

struct LatencyBreakdown {
    double off2on = 0.0;
    double global2local = 0.0;
    double compute = 0.0;
    double local2global = 0.0;
    double on2off = 0.0;
    double total = 0.0;
    TileShape chosen_tile;
};

// Raw byte and work counts of one operator under one tile shape. These are
// the quantities the functional executor traces.
struct OpTraffic {
    std::int64_t off2on_bytes = 0;
    std::int64_t global2local_bytes = 0;
    std::int64_t local2global_bytes = 0;
    std::int64_t on2off_bytes = 0;
    std::int64_t mac_count = 0;
    std::int64_t n_tiles = 0;

    OpTraffic& operator+=(const OpTraffic& o);
    bool operator==(const OpTraffic&) const = default;
};

// Patch count of a block's gathered operators, optionally with the concrete
// mask that produced it (enables exact unique-byte accounting).
struct Workload {
    std::int64_t patches = 0;
    const CoarseMask* mask = nullptr;

    static Workload from_rate(const BlockSpec& block, double r);
    static Workload from_mask(const BlockSpec& block, const CoarseMask& mask);
};

struct OpLatency {
    std::string op;
    LatencyBreakdown latency;
};

struct BlockLatency {
    double total = 0.0;
    std::vector<OpLatency> per_op;
};

struct Rational {
    std::int64_t num = 0;
    std::int64_t den = 1;
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    bool operator==(const Rational&) const = default;
};

// Throws DomainError when r is outside [0, 1].
GatheredShape infer_gathered_shape(const BlockSpec& block, double r);

// Power-of-two candidates per dimension, each bounded by the dimension
// rounded up to a power of two. Order: t_p outermost, t_s2 innermost.
std::vector<TileShape> enumerate_tiles(const GatheredShape& out);
std::vector<TileShape> enumerate_tiles(const TileDomain& out);

// Fetched input area of a k x k conv over one S x S output patch, divided by
// the patch's own input area, as an exact fraction.
Rational halo_duplication(int s, int kernel, int stride = 1);

struct TileTraffic {
    std::int64_t in_bytes_per_tile = 0;
    std::int64_t weight_bytes_per_tile = 0;
    std::int64_t out_bytes_per_tile = 0;
    Rational duplication;
};

// Per-tile traffic of a single-input layer and the spatial duplication of
// tiling one S x S patch with this tile.
TileTraffic tile_traffic(OpKind kind, const ConvLayerSpec& layer, const TileShape& tile, int s);

// Fraction of transferred bytes that are useful for a contiguous run.
double memory_efficiency(std::int64_t contig_run_bytes, const HardwareSpec& hw);

TileDomain op_domain(const Operator& op, const Workload& w);

// Byte accounting of one operator for a given tile.
OpTraffic op_traffic(const Operator& op, const TileShape& tile, const Workload& w,
                     const HardwareSpec& hw);

// Latency of one operator for a given tile.
LatencyBreakdown evaluate_tile(const Operator& op, const TileShape& tile, const Workload& w,
                               const HardwareSpec& hw);

// Exhaustive tile search; ties resolve to the first candidate in enumeration
// order. Gathered operators with zero patches cost nothing.
LatencyBreakdown predict_op_latency(const Operator& op, const Workload& w, const HardwareSpec& hw);

// Standalone convolution operator: gathered over `shape` when kind is
// dyn_conv (reading packed halo patches), dense over shape.s x shape.s
// otherwise.
Operator make_conv_operator(OpKind kind, const ConvLayerSpec& layer, const GatheredShape& shape);

// Rate form: expected latency at a mean of r x cells patches, interpolated
// between the neighbouring integer patch counts (exact when r x cells is an
// integer). Throws DomainError for r outside [0, 1].
BlockLatency predict_block_latency(const BlockSpec& block, double r, const HardwareSpec& hw,
                                   const FusionPlan& fusion);
// Latency at an exact patch count (placement-independent accounting).
BlockLatency predict_block_latency_at(const BlockSpec& block, std::int64_t patches,
                                      const HardwareSpec& hw, const FusionPlan& fusion);
BlockLatency predict_block_latency(const BlockSpec& block, const CoarseMask& mask,
                                   const HardwareSpec& hw, const FusionPlan& fusion);

BlockLatency predict_static_block(const BlockSpec& block, const HardwareSpec& hw);
double static_block_latency(const BlockSpec& block, const HardwareSpec& hw);

// Dense roofline-free costing of stem/head layers with the same bandwidth terms.
LatencyBreakdown static_layer_latency(const StaticLayer& layer, const HardwareSpec& hw);

void to_json(nlohmann::json& j, const TileShape& t);
void to_json(nlohmann::json& j, const LatencyBreakdown& b);
void to_json(nlohmann::json& j, const BlockLatency& b);

// Per-op CSV with header op,tile,off2on,g2l,compute,l2g,on2off,total (microseconds).
std::string breakdown_csv(const BlockLatency& b);
std::string to_string(const TileShape& t);

}  // namespace dynlat
