// Copyright (C) 2026 The dynlat Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynlat/flops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "dynlat/error.hpp"

namespace dynlat {

namespace {

// r * cells, snapped to the nearest integer when r came from a concrete mask.
double active_patches(const BlockSpec& block, double r) {
    if (!(r >= 0.0 && r <= 1.0)) throw DomainError("activation rate outside [0, 1]");
    const double p = r * static_cast<double>(block.total_cells());
    const double nearest = std::round(p);
    return std::abs(p - nearest) < 1e-9 ? nearest : p;
}

// Unfused conv1 computes each input position some active patch's halo needs.
// With a concrete mask that is the exact union of in-bounds halo windows;
// from a rate it is the non-overlapping estimate capped at the dense map.
double conv1_fraction_from_rate(const BlockSpec& block, double patches) {
    const double side = block.input_patch_side();
    const double in_area = static_cast<double>(block.input_h) * block.input_w;
    return std::min(1.0, patches * side * side / in_area);
}

double conv1_fraction_from_mask(const BlockSpec& block, const CoarseMask& mask) {
    const int pitch = block.stride() * block.granularity;
    const int pad = block.conv2.padding();
    const int side = block.input_patch_side();
    std::vector<char> hit(static_cast<std::size_t>(block.input_h) * block.input_w, 0);
    for (const auto& pi : patch_indices(mask).indices)
        for (int r = pi.row * pitch - pad; r < pi.row * pitch - pad + side; ++r)
            for (int c = pi.col * pitch - pad; c < pi.col * pitch - pad + side; ++c)
                if (r >= 0 && r < block.input_h && c >= 0 && c < block.input_w)
                    hit[static_cast<std::size_t>(r) * block.input_w + c] = 1;
    return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / static_cast<double>(hit.size());
}

FlopsReport block_report(const BlockSpec& block, double patches, double conv1_fraction,
                         const FusionPlan& fusion, bool with_masker) {
    const auto c_in = static_cast<double>(block.conv1.c_in);
    const double in_area = static_cast<double>(block.input_h) * block.input_w;
    const double s2 = static_cast<double>(block.granularity) * block.granularity;
    const auto cells = static_cast<double>(block.total_cells());

    FlopsReport rep;
    auto add = [&rep](std::string id, double macs) { rep.per_layer.push_back({std::move(id), macs}); };

    if (with_masker) {
        if (fusion.fuse_masker_conv1) {
            // One extra output channel on conv1 plus pooling of that channel.
            add("masker", c_in * in_area + in_area);
        } else {
            add("masker", c_in * in_area + c_in * cells);
        }
    }

    const double conv1_dense_macs =
        static_cast<double>(conv_macs(block.conv1, block.input_h, block.input_w));
    const bool conv1_dense = !with_masker || fusion.fuse_masker_conv1;
    add("conv1", conv1_dense ? conv1_dense_macs : conv1_fraction * conv1_dense_macs);

    const double per_out2 = static_cast<double>(block.conv2.c_out) *
                            (block.conv2.c_in / block.conv2.groups) * block.conv2.kernel *
                            block.conv2.kernel;
    add("conv2", patches * s2 * per_out2);
    if (block.se_reduction)
        add("se", 2.0 * block.conv2.c_out * static_cast<double>(block.se_channels()));
    const double per_out3 = static_cast<double>(block.conv3.c_out) *
                            (block.conv3.c_in / block.conv3.groups);
    add("conv3", patches * s2 * per_out3);
    if (block.downsample)
        add("downsample",
            static_cast<double>(conv_macs(*block.downsample, block.out_h(), block.out_w())));

    for (const auto& l : rep.per_layer) rep.total_macs += l.macs;
    rep.f_dyn = rep.total_macs;
    rep.f_stat = block_static_macs(block);
    rep.ratio = rep.f_stat > 0.0 ? rep.f_dyn / rep.f_stat : 0.0;
    return rep;
}

}  // namespace

std::int64_t conv_macs(const ConvLayerSpec& layer, int out_h, int out_w) {
    return static_cast<std::int64_t>(out_h) * out_w * layer.c_out * (layer.c_in / layer.groups) *
           layer.kernel * layer.kernel;
}

FlopsReport block_dynamic_macs(const BlockSpec& block, double r, const FusionPlan& fusion,
                               bool with_masker) {
    const double p = active_patches(block, r);
    return block_report(block, p, conv1_fraction_from_rate(block, p), fusion, with_masker);
}

FlopsReport block_dynamic_macs(const BlockSpec& block, const CoarseMask& mask,
                               const FusionPlan& fusion) {
    if (mask.grid.rows() != block.cells_h() || mask.grid.cols() != block.cells_w())
        throw ShapeError("mask grid does not match the block's output cells");
    return block_report(block, static_cast<double>(mask.grid.count()),
                        conv1_fraction_from_mask(block, mask), fusion, true);
}

double block_static_macs(const BlockSpec& block) {
    double m = static_cast<double>(conv_macs(block.conv1, block.input_h, block.input_w)) +
               static_cast<double>(conv_macs(block.conv2, block.out_h(), block.out_w())) +
               static_cast<double>(conv_macs(block.conv3, block.out_h(), block.out_w()));
    if (block.se_reduction) m += 2.0 * block.conv2.c_out * static_cast<double>(block.se_channels());
    if (block.downsample)
        m += static_cast<double>(conv_macs(*block.downsample, block.out_h(), block.out_w()));
    return m;
}

FlopsReport network_flops(const NetworkSpec& net, const std::vector<double>& rates,
                          const std::vector<FusionPlan>& fusions, bool with_maskers) {
    const auto blocks = net.blocks();
    if (rates.size() != blocks.size())
        throw DomainError("expected " + std::to_string(blocks.size()) + " rates, got " +
                          std::to_string(rates.size()));
    if (fusions.size() != blocks.size())
        throw DomainError("expected " + std::to_string(blocks.size()) + " fusion plans, got " +
                          std::to_string(fusions.size()));

    FlopsReport rep;
    double fixed = 0.0;
    for (const auto& l : net.stem_and_head) {
        rep.per_layer.push_back({l.name, static_cast<double>(l.macs)});
        fixed += static_cast<double>(l.macs);
    }
    double dyn = fixed;
    double stat = fixed;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto b = block_dynamic_macs(blocks[i], rates[i], fusions[i], with_maskers);
        const std::string prefix = "block" + std::to_string(i) + ".";
        for (const auto& l : b.per_layer) rep.per_layer.push_back({prefix + l.id, l.macs});
        dyn += b.f_dyn;
        stat += b.f_stat;
    }
    for (const auto& l : rep.per_layer) rep.total_macs += l.macs;
    rep.f_dyn = dyn;
    rep.f_stat = stat;
    rep.ratio = stat > 0.0 ? dyn / stat : 0.0;
    return rep;
}

double flops_loss(double f_dyn, double f_stat, double t) {
    const double d = f_dyn / f_stat - t;
    return d * d;
}

double solve_uniform_rate(const NetworkSpec& net, double t, const std::vector<FusionPlan>& fusions) {
    if (!(t > 0.0)) throw DomainError("target ratio must be positive");
    const std::size_t n = net.block_count();
    auto ratio = [&](double r) {
        return network_flops(net, std::vector<double>(n, r), fusions).ratio;
    };
    constexpr double kTol = 1e-6;
    const double lo_ratio = ratio(0.0);
    const double hi_ratio = ratio(1.0);
    if (std::abs(hi_ratio - t) < kTol) return 1.0;
    if (std::abs(lo_ratio - t) < kTol) return 0.0;
    if (t < lo_ratio || t > hi_ratio) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "target %.6f outside achievable FLOPs ratio [%.6f, %.6f]",
                      t, lo_ratio, hi_ratio);
        throw DomainError(buf);
    }
    double lo = 0.0;
    double hi = 1.0;
    double mid = 0.5;
    for (int it = 0; it < 200; ++it) {
        mid = 0.5 * (lo + hi);
        const double v = ratio(mid);
        if (std::abs(v - t) < kTol) return mid;
        (v < t ? lo : hi) = mid;
    }
    return mid;
}

void to_json(nlohmann::json& j, const FlopsReport& r) {
    j = {{"total_macs", r.total_macs}, {"f_dyn", r.f_dyn}, {"f_stat", r.f_stat},
         {"ratio", r.ratio}, {"per_layer", nlohmann::json::array()}};
    for (const auto& l : r.per_layer) j["per_layer"].push_back({{"id", l.id}, {"macs", l.macs}});
}

std::string flops_csv(const FlopsReport& r) {
    std::ostringstream os;
    os << "layer,macs\n";
    char buf[64];
    for (const auto& l : r.per_layer) {
        std::snprintf(buf, sizeof buf, "%.17g", l.macs);
        os << l.id << ',' << buf << '\n';
    }
    return os.str();
}

}  // namespace dynlat
