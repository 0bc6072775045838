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

// Work is counted in multiply-accumulates. Reports that quote FLOPs as
// 2 x MACs can convert with to_flops.
inline constexpr double kFlopsPerMac = 2.0;
inline double to_flops(double macs) { return macs * kFlopsPerMac; }

struct LayerMacs {
    std::string id;
    double macs = 0.0;
};

struct FlopsReport {
    std::vector<LayerMacs> per_layer;
    double total_macs = 0.0;
    double f_dyn = 0.0;
    double f_stat = 0.0;
    double ratio = 0.0;
};

std::int64_t conv_macs(const ConvLayerSpec& layer, int out_h, int out_w);

// MACs of one dynamic block at activation rate r. Unfused conv1 counts the
// distinct input positions the active patches' halos cover: from a rate,
// min(1, r * (side_in / (stride * S))^2) of the dense layer; from a mask, the
// exact union of in-bounds windows. Halo recomputation is an execution cost
// and is charged by the latency model, not here. With the masker fused (or no
// masker at all) conv1 is dense. Masker, downsample and SE are always dense.
// Throws DomainError for r outside [0, 1].
FlopsReport block_dynamic_macs(const BlockSpec& block, double r, const FusionPlan& fusion,
                               bool with_masker = true);
FlopsReport block_dynamic_macs(const BlockSpec& block, const CoarseMask& mask,
                               const FusionPlan& fusion);

// Dense block without a masker.
double block_static_macs(const BlockSpec& block);

// Throws DomainError when rates/fusions lengths differ from the block count.
FlopsReport network_flops(const NetworkSpec& net, const std::vector<double>& rates,
                          const std::vector<FusionPlan>& fusions, bool with_maskers = true);

double flops_loss(double f_dyn, double f_stat, double t);

// Uniform activation rate whose network FLOPs ratio is within 1e-6 of t.
// Throws DomainError when t is outside [ratio(0), ratio(1)]; with maskers
// ratio(1) slightly exceeds 1.
double solve_uniform_rate(const NetworkSpec& net, double t, const std::vector<FusionPlan>& fusions);

void to_json(nlohmann::json& j, const FlopsReport& r);
std::string flops_csv(const FlopsReport& r);

}  // namespace dynlat
