// Copyright (C) 2026 The dynlat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dynlat/graph.hpp"
#include "dynlat/latcost.hpp"
#include "dynlat/model.hpp"

namespace dynlat {

// Activation-rate threshold above which fusing the masker into conv1 pays off.
struct RThreshold {
    enum class Status {
        found,   // r_th strictly inside (0, 1]
        always,  // fused already wins at r = 0; r_th = 0
        never,   // unfused wins everywhere on [0, 1]
    };
    Status status = Status::never;
    double r_th = 0.0;

    bool has_value() const { return status != Status::never; }
};

std::string to_string(RThreshold::Status s);

// Fused minus unfused masker latency at r (gather and scatter fusions on).
double masker_fusion_gain(const BlockSpec& block, int s, double r, const HardwareSpec& hw);

// Grid scan at step 0.01 for the first r where fused <= unfused, then
// bisection inside that step to 1e-4.
RThreshold compute_r_th(const BlockSpec& block, int s, const HardwareSpec& hw);

// Throws DomainError for expected_r outside [0, 1].
FusionPlan decide_fusion(const BlockSpec& block, int s, double expected_r, const HardwareSpec& hw);

struct SweepPoint {
    double x = 0.0;
    double l_dyn = 0.0;   // seconds
    double l_stat = 0.0;  // seconds
    double r_l = 0.0;
};

struct SweepResult {
    std::string axis;  // "r" or "S"
    std::vector<SweepPoint> points;
    std::string block_id;
    std::string hw_name;
};

SweepResult sweep_r(const BlockSpec& block, int s, const HardwareSpec& hw,
                    const std::vector<double>& r_grid);
// One point per valid granularity of the block's output side, ascending.
SweepResult sweep_s(const BlockSpec& block, double r, const HardwareSpec& hw);

// CSV header x,l_dyn_us,l_stat_us,r_l; latencies in microseconds.
std::string sweep_csv(const SweepResult& s);
std::vector<SweepPoint> parse_sweep_csv(const std::string& text);
void to_json(nlohmann::json& j, const SweepPoint& p);
void to_json(nlohmann::json& j, const SweepResult& s);

struct BlockReport {
    double latency = 0.0;  // seconds
    double static_latency = 0.0;
    double rate = 0.0;
    int s = 1;
    FusionPlan plan;
    std::vector<OpLatency> per_op;
};

struct NetworkLatency {
    double total = 0.0;         // seconds
    double static_total = 0.0;  // seconds
    double stem_head = 0.0;
    std::vector<BlockReport> per_block;
    double speedup = 0.0;
};

// With maskers off every block runs in its static form and rates are ignored.
// A fixed plan replaces the per-block r_th decision.
NetworkLatency network_latency(const NetworkSpec& net, const std::vector<double>& rates,
                               const HardwareSpec& hw, bool maskers = true,
                               const std::optional<FusionPlan>& fixed = std::nullopt);

// Decided fusion plan of every block.
std::vector<FusionPlan> network_fusions(const NetworkSpec& net, const std::vector<double>& rates,
                                        const HardwareSpec& hw);

struct AblationRow {
    std::string label;
    FusionPlan plan;
    double latency = 0.0;  // seconds
};

// Cumulative plans: none, +masker-conv1, +gather-conv, +scatter-add.
std::vector<AblationRow> fusion_ablation(const BlockSpec& block, int s, double r,
                                         const HardwareSpec& hw);
// CSV header fusion,plan,latency_us.
std::string ablation_csv(const std::vector<AblationRow>& rows);
std::vector<AblationRow> parse_ablation_csv(const std::string& text);
FusionPlan parse_fusion_plan(const std::string& code);  // "MGS", "M--", "---", ...
void to_json(nlohmann::json& j, const AblationRow& r);

// Per-stage S within 2% of the stage minimum, preferring the smallest.
// The last stage is fixed to S = 1.
std::vector<int> choose_granularity(const NetworkSpec& net, const HardwareSpec& hw,
                                    const std::vector<double>& rates);

// Predicted latency of one stage's blocks at granularity s.
double stage_latency(const NetworkSpec& net, int stage, int s, const HardwareSpec& hw,
                     const std::vector<double>& rates);

}  // namespace dynlat
