// Copyright (C) 2026 The dynlat Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynlat/latcost.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "dynlat/error.hpp"

namespace dynlat {

namespace {

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

std::int64_t next_pow2(std::int64_t v) {
    std::int64_t p = 1;
    while (p < v) p <<= 1;
    return p;
}

std::vector<std::int64_t> pow2_candidates(std::int64_t dim) {
    std::vector<std::int64_t> out;
    const std::int64_t limit = next_pow2(std::max<std::int64_t>(dim, 1));
    for (std::int64_t v = 1; v <= limit; v <<= 1) out.push_back(v);
    return out;
}

// Sum over the chunks of an extent split by `tile` of a per-chunk quantity.
template <typename F>
std::int64_t chunk_sum(std::int64_t extent, std::int64_t tile, F&& per_chunk) {
    const std::int64_t full = extent / tile;
    const std::int64_t rem = extent % tile;
    std::int64_t sum = full * per_chunk(tile);
    if (rem > 0) sum += per_chunk(rem);
    return sum;
}

// Input channels a chunk of output channels [c0, c0 + len) reads.
std::int64_t chunk_in_channels(const Access& a, std::int64_t out_c, std::int64_t c0,
                               std::int64_t len) {
    switch (a.cmap) {
        case ChannelMap::all: return a.channels;
        case ChannelMap::identity: return len;
        case ChannelMap::grouped: {
            const std::int64_t out_per_group = out_c / a.groups;
            const std::int64_t in_per_group = a.channels / a.groups;
            const std::int64_t g0 = c0 / out_per_group;
            const std::int64_t g1 = (c0 + len - 1) / out_per_group;
            return (g1 - g0 + 1) * in_per_group;
        }
    }
    return a.channels;
}

std::int64_t in_channel_sum(const Access& a, std::int64_t out_c, std::int64_t t_c) {
    const std::int64_t n_c = ceil_div(out_c, t_c);
    switch (a.cmap) {
        case ChannelMap::all: return n_c * a.channels;
        case ChannelMap::identity: return out_c;
        case ChannelMap::grouped: break;
    }
    std::int64_t sum = 0;
    for (std::int64_t c0 = 0; c0 < out_c; c0 += t_c)
        sum += chunk_in_channels(a, out_c, c0, std::min(t_c, out_c - c0));
    return sum;
}

// Rows of [0, src) touched by outputs [0, extent) through the access window,
// relative to a base row.
std::vector<std::int64_t> touched_offsets(const Access& a, std::int64_t extent) {
    std::vector<std::int64_t> rows;
    for (std::int64_t i = 0; i < extent; ++i)
        for (std::int64_t d = 0; d < a.kernel; ++d) rows.push_back(a.stride * i + d);
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    return rows;
}

std::int64_t count_in_bounds(const std::vector<std::int64_t>& offsets, std::int64_t base,
                             std::int64_t limit) {
    std::int64_t n = 0;
    for (auto o : offsets)
        if (base + o >= 0 && base + o < limit) ++n;
    return n;
}

// Unique source elements read by an access over the whole operator.
std::int64_t unique_input_elements(const Access& a, const Operator& op, const Workload& w) {
    const auto rows = touched_offsets(a, op.e1);
    const auto cols = touched_offsets(a, op.e2);
    switch (a.layout) {
        case Layout::packed:
            return a.channels * w.patches * count_in_bounds(rows, a.offset, a.src_h) *
                   count_in_bounds(cols, a.offset, a.src_w);
        case Layout::dense:
            return a.channels * count_in_bounds(rows, a.offset, a.src_h) *
                   count_in_bounds(cols, a.offset, a.src_w);
        case Layout::patches: break;
    }
    if (w.patches == 0) return 0;
    if (w.mask != nullptr) {
        std::vector<std::uint8_t> hit(static_cast<std::size_t>(a.src_h) *
                                      static_cast<std::size_t>(a.src_w));
        const auto& g = w.mask->grid;
        for (int pr = 0; pr < g.rows(); ++pr) {
            for (int pc = 0; pc < g.cols(); ++pc) {
                if (!g.at(pr, pc)) continue;
                const std::int64_t r0 = static_cast<std::int64_t>(a.pitch) * pr + a.offset;
                const std::int64_t c0 = static_cast<std::int64_t>(a.pitch) * pc + a.offset;
                for (auto ro : rows) {
                    const std::int64_t r = r0 + ro;
                    if (r < 0 || r >= a.src_h) continue;
                    for (auto co : cols) {
                        const std::int64_t c = c0 + co;
                        if (c < 0 || c >= a.src_w) continue;
                        hit[static_cast<std::size_t>(r * a.src_w + c)] = 1;
                    }
                }
            }
        }
        return a.channels * std::accumulate(hit.begin(), hit.end(), std::int64_t{0});
    }
    // No concrete mask: every patch brings its full window, capped by the map.
    const std::int64_t per_patch = static_cast<std::int64_t>(rows.size()) *
                                   static_cast<std::int64_t>(cols.size());
    const std::int64_t dense = static_cast<std::int64_t>(a.src_h) * a.src_w;
    return a.channels * std::min(dense, w.patches * per_patch);
}

std::int64_t unique_output_elements(const Operator& op, const TileDomain& d) {
    if (op.output.zero_init)
        return static_cast<std::int64_t>(op.out_c) * op.output.map_h * op.output.map_w;
    return d.p * d.c * d.e1 * d.e2;
}

double access_efficiency(const Access& a, const HardwareSpec& hw) {
    if (a.layout == Layout::packed) return 1.0;
    return memory_efficiency(a.run_bytes, hw);
}

double output_efficiency(const Output& o, const HardwareSpec& hw) {
    if (o.layout == Layout::packed) return 1.0;
    return memory_efficiency(o.run_bytes, hw);
}

// Tile-independent part of an operator's byte accounting.
struct OpInvariants {
    TileDomain domain;
    std::vector<std::int64_t> unique_in;  // per input, elements
    std::int64_t unique_out = 0;
};

OpInvariants op_invariants(const Operator& op, const Workload& w) {
    OpInvariants inv;
    inv.domain = op_domain(op, w);
    const bool empty = op.gathered && w.patches == 0;
    for (const auto& a : op.inputs) inv.unique_in.push_back(empty ? 0 : unique_input_elements(a, op, w));
    inv.unique_out = empty && !op.output.zero_init ? 0 : unique_output_elements(op, inv.domain);
    return inv;
}

struct TileCounts {
    std::int64_t n_tiles = 0;
    std::vector<std::int64_t> in_fetch;  // per input, elements
    std::int64_t weight_fetch = 0;       // elements
    std::int64_t out_store = 0;          // elements
    std::int64_t tile_work = 0;          // MACs + ops of one full tile
};

TileCounts tile_counts(const Operator& op, const TileShape& t, const TileDomain& d,
                       std::int64_t num_pe) {
    TileCounts tc;
    if (d.p == 0) {
        tc.in_fetch.assign(op.inputs.size(), 0);
        return tc;
    }
    const std::int64_t n_p = ceil_div(d.p, t.t_p);
    const std::int64_t n_c = ceil_div(d.c, t.t_c);
    const std::int64_t n_1 = ceil_div(d.e1, t.t_s1);
    const std::int64_t n_2 = ceil_div(d.e2, t.t_s2);
    tc.n_tiles = n_p * n_c * n_1 * n_2;

    for (const auto& a : op.inputs) {
        const auto win = [&a](std::int64_t len) { return a.window(len); };
        const std::int64_t rows = chunk_sum(d.e1, t.t_s1, win);
        const std::int64_t cols = chunk_sum(d.e2, t.t_s2, win);
        tc.in_fetch.push_back(in_channel_sum(a, d.c, t.t_c) * d.p * rows * cols);
    }

    // Tiles are ordered channel-chunk outermost and split into balanced
    // contiguous runs, one per PE. A PE loads the weight slice of every chunk
    // its run touches, once.
    const std::int64_t per_chunk = n_p * n_1 * n_2;
    const std::int64_t pes = std::min(num_pe, tc.n_tiles);
    const std::int64_t q = tc.n_tiles / pes;
    const std::int64_t rem = tc.n_tiles % pes;
    std::int64_t channels = 0;
    for (std::int64_t i = 0; i < pes; ++i) {
        const std::int64_t start = i * q + std::min(i, rem);
        const std::int64_t len = q + (i < rem ? 1 : 0);
        const std::int64_t first = start / per_chunk;
        const std::int64_t last = (start + len - 1) / per_chunk;
        channels += std::min((last + 1) * t.t_c, d.c) - first * t.t_c;
    }
    tc.weight_fetch = channels * op.weight_elems_per_out_channel;

    tc.out_store = d.p * d.c * d.e1 * d.e2;
    // A wave lasts as long as its largest tile, which never exceeds the domain.
    tc.tile_work = std::min(t.t_p, d.p) * std::min(t.t_c, d.c) * std::min(t.t_s1, d.e1) *
                   std::min(t.t_s2, d.e2) * (op.macs_per_output + op.ops_per_output);
    return tc;
}

LatencyBreakdown breakdown_from(const Operator& op, const OpInvariants& inv,
                                const TileCounts& tc, const TileShape& t,
                                const HardwareSpec& hw) {
    LatencyBreakdown b;
    b.chosen_tile = t;
    if (tc.n_tiles == 0) {
        b.on2off = static_cast<double>(inv.unique_out * kElementBytes) / hw.offchip_bandwidth;
        b.total = b.on2off;
        return b;
    }
    const double bw_local = hw.global_to_local_bandwidth();
    std::int64_t unique_in = op.weight_elems;
    for (auto u : inv.unique_in) unique_in += u;
    b.off2on = static_cast<double>(unique_in * kElementBytes) / hw.offchip_bandwidth;

    double g2l = static_cast<double>(tc.weight_fetch * kElementBytes) / bw_local;
    for (std::size_t i = 0; i < op.inputs.size(); ++i) {
        g2l += static_cast<double>(tc.in_fetch[i] * kElementBytes) /
               (bw_local * access_efficiency(op.inputs[i], hw));
    }
    b.global2local = g2l;

    const double waves = static_cast<double>(ceil_div(tc.n_tiles, hw.num_pe));
    b.compute = waves * static_cast<double>(tc.tile_work) / hw.pe_macs_per_second() +
                static_cast<double>(op.extra_macs) / hw.device_macs_per_second();

    b.local2global = static_cast<double>(tc.out_store * kElementBytes) /
                     (bw_local * output_efficiency(op.output, hw));
    b.on2off = static_cast<double>(inv.unique_out * kElementBytes) / hw.offchip_bandwidth;
    b.total = b.off2on + b.global2local + b.compute + b.local2global + b.on2off;
    return b;
}

std::int64_t patches_for_rate(const BlockSpec& block, double r) {
    if (!(r >= 0.0 && r <= 1.0)) throw DomainError("activation rate outside [0, 1]");
    return std::llround(r * static_cast<double>(block.total_cells()));
}

BlockLatency sum_ops(const std::vector<Operator>& ops, const Workload& w, const HardwareSpec& hw) {
    BlockLatency out;
    for (const auto& op : ops) {
        auto b = predict_op_latency(op, w, hw);
        out.total += b.total;
        out.per_op.push_back({op.name, b});
    }
    return out;
}

}  // namespace

OpTraffic& OpTraffic::operator+=(const OpTraffic& o) {
    off2on_bytes += o.off2on_bytes;
    global2local_bytes += o.global2local_bytes;
    local2global_bytes += o.local2global_bytes;
    on2off_bytes += o.on2off_bytes;
    mac_count += o.mac_count;
    n_tiles += o.n_tiles;
    return *this;
}

Workload Workload::from_rate(const BlockSpec& block, double r) {
    return Workload{patches_for_rate(block, r), nullptr};
}

Workload Workload::from_mask(const BlockSpec& block, const CoarseMask& mask) {
    if (mask.grid.rows() != block.cells_h() || mask.grid.cols() != block.cells_w() ||
        mask.s != block.granularity)
        throw ShapeError("mask grid does not match the block's output cells");
    return Workload{mask.grid.count(), &mask};
}

GatheredShape infer_gathered_shape(const BlockSpec& block, double r) {
    return GatheredShape{patches_for_rate(block, r), block.conv2.c_out, block.granularity};
}

std::vector<TileShape> enumerate_tiles(const TileDomain& out) {
    std::vector<TileShape> tiles;
    if (out.p <= 0 || out.c <= 0 || out.e1 <= 0 || out.e2 <= 0) return tiles;
    const auto ps = pow2_candidates(out.p);
    const auto cs = pow2_candidates(out.c);
    const auto s1 = pow2_candidates(out.e1);
    const auto s2 = pow2_candidates(out.e2);
    tiles.reserve(ps.size() * cs.size() * s1.size() * s2.size());
    for (auto p : ps)
        for (auto c : cs)
            for (auto a : s1)
                for (auto b : s2) tiles.push_back({p, c, a, b});
    return tiles;
}

std::vector<TileShape> enumerate_tiles(const GatheredShape& out) {
    return enumerate_tiles(TileDomain{out.p, out.c_out, out.s, out.s});
}

Rational halo_duplication(int s, int kernel, int stride) {
    if (s < 1 || kernel < 1 || stride < 1) throw DomainError("halo duplication needs positive sizes");
    const std::int64_t side = static_cast<std::int64_t>(stride) * (s - 1) + kernel;
    const std::int64_t own = static_cast<std::int64_t>(stride) * s;
    std::int64_t num = side * side;
    std::int64_t den = own * own;
    const std::int64_t g = std::gcd(num, den);
    return {num / g, den / g};
}

TileTraffic tile_traffic(OpKind kind, const ConvLayerSpec& layer, const TileShape& tile, int s) {
    const bool conv = kind == OpKind::dyn_conv || kind == OpKind::static_conv;
    const std::int64_t k = conv ? layer.kernel : 1;
    const std::int64_t stride = conv ? layer.stride : 1;
    const auto win = [&](std::int64_t len) { return stride * (len - 1) + k; };

    std::int64_t in_ch = layer.c_in;
    if (!conv) {
        in_ch = tile.t_c;
    } else if (layer.groups > 1) {
        const std::int64_t opg = layer.c_out / layer.groups;
        in_ch = ceil_div(std::min<std::int64_t>(tile.t_c, layer.c_out), opg) * (layer.c_in / layer.groups);
    }

    TileTraffic t;
    t.in_bytes_per_tile = tile.t_p * in_ch * win(tile.t_s1) * win(tile.t_s2) * kElementBytes;
    t.weight_bytes_per_tile =
        conv ? tile.t_c * (layer.c_in / layer.groups) * k * k * kElementBytes : 0;
    t.out_bytes_per_tile = tile.t_p * tile.t_c * tile.t_s1 * tile.t_s2 * kElementBytes;

    const std::int64_t rows = chunk_sum(s, std::min<std::int64_t>(tile.t_s1, s), win);
    const std::int64_t cols = chunk_sum(s, std::min<std::int64_t>(tile.t_s2, s), win);
    std::int64_t num = rows * cols;
    std::int64_t den = stride * s * stride * s;
    const std::int64_t g = std::gcd(num, den);
    t.duplication = {num / g, den / g};
    return t;
}

double memory_efficiency(std::int64_t contig_run_bytes, const HardwareSpec& hw) {
    if (contig_run_bytes < 1) throw DomainError("contiguous run must be at least one byte");
    const std::int64_t txns = ceil_div(contig_run_bytes, hw.txn_bytes);
    return static_cast<double>(contig_run_bytes) / static_cast<double>(txns * hw.txn_bytes);
}

TileDomain op_domain(const Operator& op, const Workload& w) {
    return TileDomain{op.gathered ? w.patches : 1, op.out_c, op.e1, op.e2};
}

OpTraffic op_traffic(const Operator& op, const TileShape& tile, const Workload& w,
                     const HardwareSpec& hw) {
    const auto inv = op_invariants(op, w);
    OpTraffic t;
    t.on2off_bytes = inv.unique_out * kElementBytes;
    if (inv.domain.p == 0) return t;
    const auto tc = tile_counts(op, tile, inv.domain, hw.num_pe);
    std::int64_t unique_in = op.weight_elems;
    for (auto u : inv.unique_in) unique_in += u;
    std::int64_t fetched = tc.weight_fetch;
    for (auto f : tc.in_fetch) fetched += f;
    t.off2on_bytes = unique_in * kElementBytes;
    t.global2local_bytes = fetched * kElementBytes;
    t.local2global_bytes = tc.out_store * kElementBytes;
    t.mac_count = tc.out_store * op.macs_per_output + op.extra_macs;
    t.n_tiles = tc.n_tiles;
    return t;
}

LatencyBreakdown evaluate_tile(const Operator& op, const TileShape& tile, const Workload& w,
                               const HardwareSpec& hw) {
    const auto inv = op_invariants(op, w);
    const auto tc = tile_counts(op, tile, inv.domain, hw.num_pe);
    return breakdown_from(op, inv, tc, tile, hw);
}

LatencyBreakdown predict_op_latency(const Operator& op, const Workload& w, const HardwareSpec& hw) {
    const auto inv = op_invariants(op, w);
    const auto tiles = enumerate_tiles(inv.domain);
    if (tiles.empty()) {
        LatencyBreakdown b;
        b.on2off = static_cast<double>(inv.unique_out * kElementBytes) / hw.offchip_bandwidth;
        b.total = b.on2off;
        return b;
    }
    LatencyBreakdown best;
    bool have = false;
    for (const auto& t : tiles) {
        const auto tc = tile_counts(op, t, inv.domain, hw.num_pe);
        auto b = breakdown_from(op, inv, tc, t, hw);
        if (!have || b.total < best.total) {
            best = b;
            have = true;
        }
    }
    return best;
}

Operator make_conv_operator(OpKind kind, const ConvLayerSpec& layer, const GatheredShape& shape) {
    Operator op;
    op.name = layer.kernel == 1 ? "conv1x1" : "conv3x3";
    op.kind = kind;
    op.out_c = layer.c_out;
    op.e1 = op.e2 = shape.s;
    op.weight_elems = layer.weight_count();
    op.weight_elems_per_out_channel = layer.weight_count() / layer.c_out;
    op.macs_per_output =
        static_cast<std::int64_t>(layer.c_in / layer.groups) * layer.kernel * layer.kernel;
    op.relu = layer.has_bn_act_fused;

    Access a;
    a.tensor = "in";
    a.channels = layer.c_in;
    a.kernel = layer.kernel;
    a.stride = layer.stride;
    a.cmap = layer.groups > 1 ? ChannelMap::grouped : ChannelMap::all;
    a.groups = layer.groups;
    if (kind == OpKind::dyn_conv) {
        op.gathered = true;
        a.layout = Layout::packed;
        a.src_h = a.src_w = layer.stride * (shape.s - 1) + layer.kernel;
        op.output.layout = Layout::packed;
        op.output.map_h = op.output.map_w = shape.s;
    } else {
        a.layout = Layout::dense;
        a.src_h = a.src_w = shape.s * layer.stride;
        a.offset = -layer.padding();
        a.run_bytes = static_cast<int>(a.src_w * kElementBytes);
        op.output.layout = Layout::dense;
        op.output.map_h = op.output.map_w = shape.s;
        op.output.run_bytes = static_cast<int>(shape.s * kElementBytes);
    }
    op.output.tensor = "out";
    op.inputs.push_back(a);
    return op;
}

BlockLatency predict_block_latency(const BlockSpec& block, double r, const HardwareSpec& hw,
                                   const FusionPlan& fusion) {
    if (!(r >= 0.0 && r <= 1.0)) throw DomainError("activation rate outside [0, 1]");
    const auto ops = rewrite_block(block, fusion);
    const double mean = r * static_cast<double>(block.total_cells());
    const auto lo = static_cast<std::int64_t>(std::floor(mean + 1e-9));
    const double frac = mean - static_cast<double>(lo);
    auto out = sum_ops(ops, Workload{lo, nullptr}, hw);
    if (frac <= 1e-9) return out;

    // Expected latency when the patch count straddles two integers.
    const auto hi = sum_ops(ops, Workload{lo + 1, nullptr}, hw);
    auto mix = [frac](double a, double b) { return (1.0 - frac) * a + frac * b; };
    out.total = 0.0;
    for (std::size_t i = 0; i < out.per_op.size(); ++i) {
        auto& a = out.per_op[i].latency;
        const auto& b = hi.per_op[i].latency;
        a.off2on = mix(a.off2on, b.off2on);
        a.global2local = mix(a.global2local, b.global2local);
        a.compute = mix(a.compute, b.compute);
        a.local2global = mix(a.local2global, b.local2global);
        a.on2off = mix(a.on2off, b.on2off);
        a.total = a.off2on + a.global2local + a.compute + a.local2global + a.on2off;
        if (frac >= 0.5) a.chosen_tile = b.chosen_tile;
        out.total += a.total;
    }
    return out;
}

BlockLatency predict_block_latency_at(const BlockSpec& block, std::int64_t patches,
                                      const HardwareSpec& hw, const FusionPlan& fusion) {
    if (patches < 0 || patches > block.total_cells()) throw DomainError("patch count out of range");
    return sum_ops(rewrite_block(block, fusion), Workload{patches, nullptr}, hw);
}

BlockLatency predict_block_latency(const BlockSpec& block, const CoarseMask& mask,
                                   const HardwareSpec& hw, const FusionPlan& fusion) {
    const auto w = Workload::from_mask(block, mask);
    return sum_ops(rewrite_block(block, fusion), w, hw);
}

BlockLatency predict_static_block(const BlockSpec& block, const HardwareSpec& hw) {
    return sum_ops(static_block_ops(block), Workload{1, nullptr}, hw);
}

double static_block_latency(const BlockSpec& block, const HardwareSpec& hw) {
    return predict_static_block(block, hw).total;
}

LatencyBreakdown static_layer_latency(const StaticLayer& layer, const HardwareSpec& hw) {
    LatencyBreakdown b;
    const double bw_local = hw.global_to_local_bandwidth();
    const auto in = static_cast<double>(layer.input_bytes + layer.weight_bytes);
    const auto out = static_cast<double>(layer.output_bytes);
    b.off2on = in / hw.offchip_bandwidth;
    b.global2local = in / bw_local;
    b.compute = static_cast<double>(layer.macs) / hw.device_macs_per_second();
    b.local2global = out / bw_local;
    b.on2off = out / hw.offchip_bandwidth;
    b.total = b.off2on + b.global2local + b.compute + b.local2global + b.on2off;
    return b;
}

std::string to_string(const TileShape& t) {
    return std::to_string(t.t_p) + "x" + std::to_string(t.t_c) + "x" + std::to_string(t.t_s1) +
           "x" + std::to_string(t.t_s2);
}

void to_json(nlohmann::json& j, const TileShape& t) {
    j = {{"t_p", t.t_p}, {"t_c", t.t_c}, {"t_s1", t.t_s1}, {"t_s2", t.t_s2}};
}

void to_json(nlohmann::json& j, const LatencyBreakdown& b) {
    j = {{"off2on", b.off2on},
         {"global2local", b.global2local},
         {"compute", b.compute},
         {"local2global", b.local2global},
         {"on2off", b.on2off},
         {"total", b.total},
         {"chosen_tile", b.chosen_tile}};
}

void to_json(nlohmann::json& j, const BlockLatency& b) {
    j = {{"total", b.total}, {"per_op", nlohmann::json::array()}};
    for (const auto& o : b.per_op) j["per_op"].push_back({{"op", o.op}, {"latency", o.latency}});
}

std::string breakdown_csv(const BlockLatency& b) {
    std::ostringstream os;
    os << "op,tile,off2on,g2l,compute,l2g,on2off,total\n";
    char buf[256];
    for (const auto& o : b.per_op) {
        const auto& l = o.latency;
        std::snprintf(buf, sizeof buf, "%s,%s,%.3f,%.3f,%.3f,%.3f,%.3f,%.3f\n", o.op.c_str(),
                      to_string(l.chosen_tile).c_str(), l.off2on * 1e6, l.global2local * 1e6,
                      l.compute * 1e6, l.local2global * 1e6, l.on2off * 1e6, l.total * 1e6);
        os << buf;
    }
    return os.str();
}

}  // namespace dynlat
