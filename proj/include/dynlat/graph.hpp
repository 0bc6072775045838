// Copyright (C) 2026 The dynlat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dynlat/model.hpp"

namespace dynlat {

// The three scheduling fusions for a dynamic block.
struct FusionPlan {
    bool fuse_masker_conv1 = false;
    bool fuse_gather_conv = false;
    bool fuse_scatter_add = false;

    static FusionPlan none() { return {}; }
    static FusionPlan all() { return {true, true, true}; }

    bool operator==(const FusionPlan&) const = default;
};

void to_json(nlohmann::json& j, const FusionPlan& f);
void from_json(const nlohmann::json& j, FusionPlan& f);
std::string to_string(const FusionPlan& f);

enum class OpKind {
    dyn_conv,     // convolution over gathered patches
    static_conv,  // dense convolution (optionally carrying the mask channel)
    gather,
    scatter,      // writes patches into a zero-initialised dense map
    scatter_add,  // adds patches onto the residual map in place
    masker,
    elementwise,
};

std::string to_string(OpKind k);

// How a tensor is laid out in global memory.
enum class Layout {
    dense,    // C x H x W feature map, read/written in full rows
    packed,   // P x C x E x E gathered patches, contiguous
    patches,  // selected S x S patches of a dense map, addressed by index
};

std::string to_string(Layout l);

enum class ChannelMap {
    all,       // every output channel reads every input channel
    identity,  // output channel c reads input channel c
    grouped,   // grouped convolution
};

// One input operand. Output pixel i of patch p reads source rows
//   pitch * patch_row(p) + offset + stride * i + [0, kernel)
// (pitch is 0 for dense and packed sources).
struct Access {
    std::string tensor;
    Layout layout = Layout::dense;
    int channels = 1;        // channels read from the source
    int src_h = 1;           // source map height (patch side for packed)
    int src_w = 1;
    int kernel = 1;
    int stride = 1;
    int offset = 0;
    int pitch = 0;
    ChannelMap cmap = ChannelMap::all;
    int groups = 1;
    int run_bytes = 0;       // contiguous run for patch reads

    std::int64_t window(std::int64_t len) const { return stride * (len - 1) + kernel; }
};

struct Output {
    std::string tensor;
    Layout layout = Layout::dense;
    int map_h = 1;           // destination map size (dense / patches)
    int map_w = 1;
    int pitch = 0;           // patch pitch for Layout::patches
    int run_bytes = 0;
    bool zero_init = false;  // the whole destination map is materialised
};

// A schedulable operator. Its output domain is P x C x E1 x E2 where P is the
// patch count for gathered operators and 1 for dense ones.
struct Operator {
    std::string name;
    OpKind kind = OpKind::static_conv;
    bool gathered = false;
    int out_c = 1;
    int e1 = 1;
    int e2 = 1;
    std::vector<Access> inputs;
    Output output;
    std::int64_t weight_elems = 0;
    std::int64_t weight_elems_per_out_channel = 0;
    std::int64_t macs_per_output = 0;   // multiply-accumulates per output element
    std::int64_t ops_per_output = 0;    // non-MAC arithmetic per output element
    std::int64_t extra_macs = 0;        // work outside the tiled loop (mask pooling, SE FCs)
    bool relu = false;
    int split_channel = -1;             // first channel that carries the mask logit
};

// Operator list for a dynamic block. Without masker fusion conv1 runs on
// gathered halo patches; with it conv1 is dense and gather follows it.
std::vector<Operator> rewrite_block(const BlockSpec& block, const FusionPlan& fusion);

// Dense operator list of the static counterpart (no masker).
std::vector<Operator> static_block_ops(const BlockSpec& block);

}  // namespace dynlat
