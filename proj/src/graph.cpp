// Copyright (C) 2026 The dynlat Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynlat/graph.hpp"

namespace dynlat {

namespace {

constexpr int kElem = 4;

// Shapes shared by every operator of one block.
struct BlockGeometry {
    int s = 1;          // granularity on the output grid
    int stride = 1;     // conv2 stride
    int pitch_in = 1;   // patch pitch on the input grid
    int side_in = 1;    // conv2 input window for one patch
    int pad2 = 0;
    int h_in = 1, w_in = 1, h = 1, w = 1;
    int c_in = 1, c_mid = 1, c_mid2 = 1, c_out = 1;
    int cells_h = 1, cells_w = 1;

    explicit BlockGeometry(const BlockSpec& b)
        : s(b.granularity),
          stride(b.stride()),
          pitch_in(b.stride() * b.granularity),
          side_in(b.input_patch_side()),
          pad2(b.conv2.padding()),
          h_in(b.input_h),
          w_in(b.input_w),
          h(b.out_h()),
          w(b.out_w()),
          c_in(b.conv1.c_in),
          c_mid(b.conv1.c_out),
          c_mid2(b.conv2.c_out),
          c_out(b.conv3.c_out),
          cells_h(b.cells_h()),
          cells_w(b.cells_w()) {}
};

Access dense_access(std::string tensor, int channels, int h, int w, ChannelMap cmap,
                    int kernel = 1, int stride = 1, int offset = 0, int groups = 1) {
    Access a;
    a.tensor = std::move(tensor);
    a.layout = Layout::dense;
    a.channels = channels;
    a.src_h = h;
    a.src_w = w;
    a.kernel = kernel;
    a.stride = stride;
    a.offset = offset;
    a.cmap = cmap;
    a.groups = groups;
    a.run_bytes = w * kElem;
    return a;
}

Access packed_access(std::string tensor, int channels, int side, ChannelMap cmap, int kernel = 1,
                     int stride = 1, int groups = 1) {
    Access a;
    a.tensor = std::move(tensor);
    a.layout = Layout::packed;
    a.channels = channels;
    a.src_h = a.src_w = side;
    a.kernel = kernel;
    a.stride = stride;
    a.cmap = cmap;
    a.groups = groups;
    return a;
}

Access patch_access(std::string tensor, int channels, int h, int w, int pitch, int offset,
                    ChannelMap cmap, int kernel = 1, int stride = 1, int groups = 1) {
    Access a;
    a.tensor = std::move(tensor);
    a.layout = Layout::patches;
    a.channels = channels;
    a.src_h = h;
    a.src_w = w;
    a.kernel = kernel;
    a.stride = stride;
    a.offset = offset;
    a.pitch = pitch;
    a.cmap = cmap;
    a.groups = groups;
    a.run_bytes = pitch * kElem;
    return a;
}

Output dense_output(std::string tensor, int h, int w) {
    Output o;
    o.tensor = std::move(tensor);
    o.layout = Layout::dense;
    o.map_h = h;
    o.map_w = w;
    o.run_bytes = w * kElem;
    return o;
}

Output packed_output(std::string tensor, int side) {
    Output o;
    o.tensor = std::move(tensor);
    o.layout = Layout::packed;
    o.map_h = o.map_w = side;
    return o;
}

Output patch_output(std::string tensor, int h, int w, int pitch, bool zero_init) {
    Output o;
    o.tensor = std::move(tensor);
    o.layout = Layout::patches;
    o.map_h = h;
    o.map_w = w;
    o.pitch = pitch;
    o.run_bytes = pitch * kElem;
    o.zero_init = zero_init;
    return o;
}

ChannelMap conv_cmap(const ConvLayerSpec& c) {
    return c.groups > 1 ? ChannelMap::grouped : ChannelMap::all;
}

Operator conv_op(std::string name, OpKind kind, const ConvLayerSpec& layer, bool gathered,
                 int e1, int e2, Access in, Output out) {
    Operator op;
    op.name = std::move(name);
    op.kind = kind;
    op.gathered = gathered;
    op.out_c = layer.c_out;
    op.e1 = e1;
    op.e2 = e2;
    op.inputs.push_back(std::move(in));
    op.output = std::move(out);
    op.weight_elems = layer.weight_count();
    op.weight_elems_per_out_channel = layer.weight_count() / layer.c_out;
    op.macs_per_output = static_cast<std::int64_t>(layer.c_in / layer.groups) * layer.kernel *
                         layer.kernel;
    op.relu = layer.has_bn_act_fused;
    return op;
}

Operator masker_op(const BlockGeometry& g) {
    Operator op;
    op.name = "masker";
    op.kind = OpKind::masker;
    op.out_c = 1;
    op.e1 = g.cells_h;
    op.e2 = g.cells_w;
    op.inputs.push_back(dense_access("x", g.c_in, g.h_in, g.w_in, ChannelMap::all, g.pitch_in,
                                     g.pitch_in));
    op.output = dense_output("mask", g.cells_h, g.cells_w);
    op.weight_elems = g.c_in;
    op.weight_elems_per_out_channel = g.c_in;
    // pooling is a channel-parallel reduction; the tiled loop is the 1x1 logit
    op.macs_per_output = g.c_in;
    op.extra_macs = static_cast<std::int64_t>(g.c_in) * g.h_in * g.w_in;
    return op;
}

Operator masker_conv1_op(const BlockSpec& b, const BlockGeometry& g) {
    ConvLayerSpec widened = b.conv1;
    widened.c_out += 1;
    Operator op = conv_op("masker_conv1", OpKind::static_conv, widened, false, g.h_in, g.w_in,
                          dense_access("x", g.c_in, g.h_in, g.w_in, ChannelMap::all),
                          dense_output("y1", g.h_in, g.w_in));
    op.relu = b.conv1.has_bn_act_fused;
    op.split_channel = g.c_mid;
    op.extra_macs = static_cast<std::int64_t>(g.h_in) * g.w_in;  // pooling the logit channel
    return op;
}

Operator gather_op(const BlockGeometry& g, const std::string& src, int channels) {
    Operator op;
    op.name = "gather";
    op.kind = OpKind::gather;
    op.gathered = true;
    op.out_c = channels;
    op.e1 = op.e2 = g.side_in;
    op.inputs.push_back(patch_access(src, channels, g.h_in, g.w_in, g.pitch_in, -g.pad2,
                                     ChannelMap::identity));
    op.output = packed_output("gathered", g.side_in);
    return op;
}

Operator se_op(const BlockSpec& b, const BlockGeometry& g) {
    Operator op;
    op.name = "se";
    op.kind = OpKind::elementwise;
    op.out_c = g.c_mid2;
    op.e1 = g.h;
    op.e2 = g.w;
    op.inputs.push_back(dense_access("y2", g.c_mid2, g.h, g.w, ChannelMap::identity));
    op.output = dense_output("y2", g.h, g.w);
    const std::int64_t fc = 2LL * g.c_mid2 * b.se_channels();
    op.weight_elems = fc;
    op.weight_elems_per_out_channel = 2LL * b.se_channels();
    op.extra_macs = fc;
    op.ops_per_output = 1;
    return op;
}

Operator downsample_op(const BlockSpec& b, const BlockGeometry& g) {
    return conv_op("downsample", OpKind::static_conv, *b.downsample, false, g.h, g.w,
                   dense_access("x", g.c_in, g.h_in, g.w_in, ChannelMap::all, 1, g.stride),
                   dense_output("res", g.h, g.w));
}

std::string residual_name(const BlockSpec& b) { return b.downsample ? "res" : "x"; }

}  // namespace

void to_json(nlohmann::json& j, const FusionPlan& f) {
    j = {{"fuse_masker_conv1", f.fuse_masker_conv1},
         {"fuse_gather_conv", f.fuse_gather_conv},
         {"fuse_scatter_add", f.fuse_scatter_add}};
}

void from_json(const nlohmann::json& j, FusionPlan& f) {
    j.at("fuse_masker_conv1").get_to(f.fuse_masker_conv1);
    j.at("fuse_gather_conv").get_to(f.fuse_gather_conv);
    j.at("fuse_scatter_add").get_to(f.fuse_scatter_add);
}

std::string to_string(const FusionPlan& f) {
    std::string s;
    s += f.fuse_masker_conv1 ? 'M' : '-';
    s += f.fuse_gather_conv ? 'G' : '-';
    s += f.fuse_scatter_add ? 'S' : '-';
    return s;
}

std::string to_string(OpKind k) {
    switch (k) {
        case OpKind::dyn_conv: return "dyn_conv";
        case OpKind::static_conv: return "static_conv";
        case OpKind::gather: return "gather";
        case OpKind::scatter: return "scatter";
        case OpKind::scatter_add: return "scatter_add";
        case OpKind::masker: return "masker";
        case OpKind::elementwise: return "elementwise";
    }
    return "unknown";
}

std::string to_string(Layout l) {
    switch (l) {
        case Layout::dense: return "dense";
        case Layout::packed: return "packed";
        case Layout::patches: return "patches";
    }
    return "unknown";
}

std::vector<Operator> rewrite_block(const BlockSpec& block, const FusionPlan& fusion) {
    const BlockGeometry g(block);
    std::vector<Operator> ops;

    const ConvLayerSpec& c2 = block.conv2;

    if (fusion.fuse_masker_conv1) {
        // conv1 runs dense and carries the mask logit; gather moves after it
        ops.push_back(masker_conv1_op(block, g));
        if (fusion.fuse_gather_conv) {
            ops.push_back(conv_op("conv2", OpKind::dyn_conv, c2, true, g.s, g.s,
                                  patch_access("y1", g.c_mid, g.h_in, g.w_in, g.pitch_in, -g.pad2,
                                               conv_cmap(c2), c2.kernel, c2.stride, c2.groups),
                                  packed_output("y2p", g.s)));
        } else {
            ops.push_back(gather_op(g, "y1", g.c_mid));
            ops.push_back(conv_op("conv2", OpKind::dyn_conv, c2, true, g.s, g.s,
                                  packed_access("gathered", g.c_mid, g.side_in, conv_cmap(c2),
                                                c2.kernel, c2.stride, c2.groups),
                                  packed_output("y2p", g.s)));
        }
    } else {
        ops.push_back(masker_op(g));
        if (fusion.fuse_gather_conv) {
            ops.push_back(conv_op("conv1", OpKind::dyn_conv, block.conv1, true, g.side_in,
                                  g.side_in,
                                  patch_access("x", g.c_in, g.h_in, g.w_in, g.pitch_in, -g.pad2,
                                               ChannelMap::all),
                                  packed_output("y1p", g.side_in)));
        } else {
            ops.push_back(gather_op(g, "x", g.c_in));
            ops.push_back(conv_op("conv1", OpKind::dyn_conv, block.conv1, true, g.side_in,
                                  g.side_in,
                                  packed_access("gathered", g.c_in, g.side_in, ChannelMap::all),
                                  packed_output("y1p", g.side_in)));
        }
        ops.push_back(conv_op("conv2", OpKind::dyn_conv, c2, true, g.s, g.s,
                              packed_access("y1p", g.c_mid, g.side_in, conv_cmap(c2), c2.kernel,
                                            c2.stride, c2.groups),
                              packed_output("y2p", g.s)));
    }

    if (block.se_reduction) ops.push_back(se_op(block, g));

    ops.push_back(conv_op("conv3", OpKind::dyn_conv, block.conv3, true, g.s, g.s,
                          packed_access("y2p", g.c_mid2, g.s, conv_cmap(block.conv3)),
                          packed_output("y3p", g.s)));

    if (block.downsample) ops.push_back(downsample_op(block, g));

    const std::string res = residual_name(block);
    if (!block.has_residual) {
        Operator sc;
        sc.name = "scatter";
        sc.kind = OpKind::scatter;
        sc.gathered = true;
        sc.out_c = g.c_out;
        sc.e1 = sc.e2 = g.s;
        sc.inputs.push_back(packed_access("y3p", g.c_out, g.s, ChannelMap::identity));
        sc.output = patch_output("out", g.h, g.w, g.s, true);
        ops.push_back(std::move(sc));
    } else if (fusion.fuse_scatter_add) {
        Operator sa;
        sa.name = "scatter_add";
        sa.kind = OpKind::scatter_add;
        sa.gathered = true;
        sa.out_c = g.c_out;
        sa.e1 = sa.e2 = g.s;
        sa.inputs.push_back(packed_access("y3p", g.c_out, g.s, ChannelMap::identity));
        sa.inputs.push_back(
            patch_access(res, g.c_out, g.h, g.w, g.s, 0, ChannelMap::identity));
        sa.output = patch_output("out", g.h, g.w, g.s, false);
        sa.ops_per_output = 1;
        ops.push_back(std::move(sa));
    } else {
        Operator sc;
        sc.name = "scatter";
        sc.kind = OpKind::scatter;
        sc.gathered = true;
        sc.out_c = g.c_out;
        sc.e1 = sc.e2 = g.s;
        sc.inputs.push_back(packed_access("y3p", g.c_out, g.s, ChannelMap::identity));
        sc.output = patch_output("scattered", g.h, g.w, g.s, true);
        ops.push_back(std::move(sc));

        Operator add;
        add.name = "add";
        add.kind = OpKind::elementwise;
        add.out_c = g.c_out;
        add.e1 = g.h;
        add.e2 = g.w;
        add.inputs.push_back(dense_access("scattered", g.c_out, g.h, g.w, ChannelMap::identity));
        add.inputs.push_back(dense_access(res, g.c_out, g.h, g.w, ChannelMap::identity));
        add.output = dense_output("out", g.h, g.w);
        add.ops_per_output = 1;
        ops.push_back(std::move(add));
    }
    return ops;
}

std::vector<Operator> static_block_ops(const BlockSpec& block) {
    const BlockGeometry g(block);
    const ConvLayerSpec& c2 = block.conv2;
    std::vector<Operator> ops;
    ops.push_back(conv_op("conv1", OpKind::static_conv, block.conv1, false, g.h_in, g.w_in,
                          dense_access("x", g.c_in, g.h_in, g.w_in, ChannelMap::all),
                          dense_output("y1", g.h_in, g.w_in)));
    ops.push_back(conv_op("conv2", OpKind::static_conv, c2, false, g.h, g.w,
                          dense_access("y1", g.c_mid, g.h_in, g.w_in, conv_cmap(c2), c2.kernel,
                                       c2.stride, -g.pad2, c2.groups),
                          dense_output("y2", g.h, g.w)));
    if (block.se_reduction) ops.push_back(se_op(block, g));
    if (block.downsample) ops.push_back(downsample_op(block, g));

    Operator c3 = conv_op(block.has_residual ? "conv3_add" : "conv3", OpKind::static_conv,
                          block.conv3, false, g.h, g.w,
                          dense_access("y2", g.c_mid2, g.h, g.w, conv_cmap(block.conv3)),
                          dense_output("out", g.h, g.w));
    if (block.has_residual) {
        c3.inputs.push_back(
            dense_access(residual_name(block), g.c_out, g.h, g.w, ChannelMap::identity));
        c3.ops_per_output = 1;
    }
    ops.push_back(std::move(c3));
    return ops;
}

}  // namespace dynlat
