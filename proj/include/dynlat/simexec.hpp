// Copyright (C) 2026 The dynlat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dynlat/graph.hpp"
#include "dynlat/latcost.hpp"
#include "dynlat/mask.hpp"
#include "dynlat/model.hpp"

namespace dynlat {

// C x H x W float tensor.
struct Tensor {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int c, int h, int w, float fill = 0.0f);

    float& at(int ch, int r, int col) { return data[index(ch, r, col)]; }
    float at(int ch, int r, int col) const { return data[index(ch, r, col)]; }

    bool operator==(const Tensor&) const = default;

private:
    std::size_t index(int ch, int r, int col) const {
        return (static_cast<std::size_t>(ch) * h + r) * w + col;
    }
};

Tensor random_tensor(int c, int h, int w, std::uint64_t seed);
double max_abs_diff(const Tensor& a, const Tensor& b);

// Flat little-endian float32 payload after a one-line JSON header
// {"shape":[c,h,w],"dtype":"float32"}.
void save_tensor(const Tensor& t, const std::string& path);
Tensor load_tensor(const std::string& path);

// Weights laid out [c_out][c_in / groups][k][k].
struct ConvWeights {
    ConvLayerSpec layer;
    std::vector<float> w;

    float at(int co, int ci, int dy, int dx) const {
        const int cpg = layer.c_in / layer.groups;
        return w[((static_cast<std::size_t>(co) * cpg + ci) * layer.kernel + dy) * layer.kernel +
                 dx];
    }
};

struct BlockWeights {
    ConvWeights conv1;
    ConvWeights conv2;
    ConvWeights conv3;
    std::optional<ConvWeights> downsample;
    std::vector<float> masker;  // single-channel 1x1 logit weights, length c_in
};

ConvWeights random_conv_weights(const ConvLayerSpec& layer, std::uint64_t seed);
BlockWeights random_block_weights(const BlockSpec& block, std::uint64_t seed);

// Zero padding kernel / 2. Throws ShapeError on channel or weight mismatch.
Tensor dense_conv(const Tensor& x, const ConvWeights& weights, const ConvLayerSpec& layer);

// Static block: conv1 -> conv2 -> conv3 (+ residual). Squeeze-excitation
// blocks are not executable (ShapeError).
Tensor dense_block_forward(const Tensor& x, const BlockWeights& wts, const BlockSpec& block);

// Two-way 1x1 masker weights [2][c_in] to the single logit W0 - W1. A
// location is selected when the logit is strictly positive.
std::vector<float> masker_reduce_weights(const std::vector<float>& w2, int c_in);

// Per-operator traffic traced while executing.
struct TrafficTrace {
    OpTraffic total;
    // Executed MACs minus recomputed halo and padding positions of conv1; the
    // quantity the FLOPs accounting reports.
    std::int64_t distinct_macs = 0;
    std::vector<std::pair<std::string, OpTraffic>> per_op;
};

// Executes rewrite_block(block, fusion) tile by tile with the tiles latcost
// selects for hw. The coarse mask governs selection; unselected output
// patches carry the residual. Throws ShapeError when the mask grid does not
// match the block's output cells.
Tensor dynamic_block_forward(const Tensor& x, const BlockWeights& wts, const BlockSpec& block,
                             const CoarseMask& coarse, const FusionPlan& fusion,
                             const HardwareSpec& hw, TrafficTrace* trace = nullptr);

struct TrafficDelta {
    std::string op;
    OpTraffic model;
    OpTraffic traced;
    bool match() const { return model == traced; }
};

struct TrafficReport {
    std::vector<TrafficDelta> per_op;
    OpTraffic model_total;
    OpTraffic traced_total;
    bool ok() const;
};

struct VerifyOptions {
    std::uint64_t seed = 1;
    // Fault injection: model byte terms are computed as if an element had
    // this many bytes (4 is the real value).
    std::int64_t model_element_bytes = kElementBytes;
};

TrafficReport verify_traffic(const BlockSpec& block, const CoarseMask& coarse,
                             const FusionPlan& fusion, const HardwareSpec& hw,
                             const VerifyOptions& opt = {});

// Fixed desk-scale block/mask/plan suite used by validation.
struct VerifyCase {
    std::string name;
    BlockSpec block;
    CoarseMask mask;
    FusionPlan fusion;
};
std::vector<VerifyCase> default_verify_suite(std::uint64_t seed);

// Random bottleneck block with channels <= 32 and output side <= 16.
BlockSpec random_desk_block(std::uint64_t seed);

}  // namespace dynlat
