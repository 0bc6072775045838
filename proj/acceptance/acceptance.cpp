// Copyright (C) 2026 The dynlat Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "dynlat/flops.hpp"
#include "dynlat/graph.hpp"
#include "dynlat/latcost.hpp"
#include "dynlat/mask.hpp"
#include "dynlat/model.hpp"
#include "dynlat/sched.hpp"
#include "dynlat/simexec.hpp"

using namespace dynlat;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// Gumbel relaxation: channels sum to one, hard limit, recovery at tau = 1.
Outcome gumbel() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.001, 0.999);
    double norm_err = 0.0;
    double hard_err = 0.0;
    int hard_checked = 0;
    for (int i = 0; i < 2000; ++i) {
        SoftMask m;
        m.rows = 4;
        m.cols = 4;
        for (int k = 0; k < 16; ++k) {
            const double p = u(rng);
            m.probs.insert(m.probs.end(), {p, 1.0 - p});
        }
        m.gumbel_noise = sample_gumbel(4, 4, rng());
        m.tau = 0.05 + 5.0 * u(rng);
        auto swapped = m;
        for (std::size_t k = 0; k < m.probs.size(); k += 2) {
            std::swap(swapped.probs[k], swapped.probs[k + 1]);
            std::swap(swapped.gumbel_noise[k], swapped.gumbel_noise[k + 1]);
        }
        const auto a = gumbel_forward(m);
        const auto b = gumbel_forward(swapped);
        for (std::size_t k = 0; k < a.size(); ++k) norm_err = std::max(norm_err, std::abs(a[k] + b[k] - 1.0));

        m.tau = 1e-3;
        const auto hard = gumbel_forward(m);
        for (std::size_t k = 0; k < hard.size(); ++k) {
            const double margin = std::log(m.probs[2 * k]) + m.gumbel_noise[2 * k] -
                                  std::log(m.probs[2 * k + 1]) - m.gumbel_noise[2 * k + 1];
            // Within tau * ln(1e6) of a tie the relaxation is not yet 1e-6 from one-hot.
            if (std::abs(margin) < 1e-3 * std::log(1e6)) continue;
            hard_err = std::max(hard_err, std::abs(hard[k] - (margin > 0 ? 1.0 : 0.0)));
            ++hard_checked;
        }
    }
    SoftMask rec;
    rec.rows = rec.cols = 1;
    rec.probs = {0.8, 0.2};
    rec.gumbel_noise = {0.0, 0.0};
    rec.tau = 1.0;
    const double rec_err = std::abs(gumbel_forward(rec)[0] - 0.8);
    const double secs = seconds_since(t0);
    return {norm_err <= 1e-12 && hard_err <= 1e-6 && hard_checked > 0 && rec_err <= 1e-12 && secs < 1.0,
            fmt("norm err %.2e, hard err %.2e over %d sites, recovery err %.2e, %.3f s", norm_err,
                hard_err, hard_checked, rec_err, secs)};
}

// Upsampling keeps the rate; patch list length is the active-cell count.
Outcome mask_algebra() {
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<int> side(1, 24), gran(1, 8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int bad = 0;
    for (int i = 0; i < 1000; ++i) {
        const int h = side(rng), w = side(rng);
        const double p = u(rng);
        BinaryGrid g(h, w);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) g.set(r, c, u(rng) < p);
        const CoarseMask m{g, gran(rng)};
        const auto up = upsample(m);
        if (activation_rate(up) != activation_rate(m)) ++bad;
        if (up.grid.count() != g.count() * m.s * m.s) ++bad;
        if (static_cast<std::int64_t>(patch_indices(m).indices.size()) != g.count()) ++bad;
    }
    return {bad == 0, fmt("%d violations over 1000 masks", bad)};
}

Outcome halo() {
    const bool ok = halo_duplication(1, 3) == Rational{9, 1} && halo_duplication(4, 3) == Rational{9, 4} &&
                    halo_duplication(7, 3) == Rational{81, 49};
    const auto show = [](Rational r) { return fmt("%lld/%lld", (long long)r.num, (long long)r.den); };
    return {ok, show(halo_duplication(1, 3)) + ", " + show(halo_duplication(4, 3)) + ", " +
                    show(halo_duplication(7, 3))};
}

// Per-layer hand count of a bottleneck ResNet at 224x224, from the layer table only.
double resnet_oracle_macs(const std::vector<int>& blocks) {
    auto conv = [](double h, double w, double cin, double cout, double k) { return h * w * cin * cout * k * k; };
    double m = conv(112, 112, 3, 64, 7);
    double in_ch = 64;
    double side_in = 56;
    for (std::size_t st = 0; st < blocks.size(); ++st) {
        const double width = 64.0 * std::pow(2.0, static_cast<double>(st));
        const double out_ch = 4 * width;
        const double side = st == 0 ? 56 : side_in / 2;
        for (int b = 0; b < blocks[st]; ++b) {
            const double cin = b == 0 ? in_ch : out_ch;
            m += conv(b == 0 ? side_in : side, b == 0 ? side_in : side, cin, width, 1);
            m += conv(side, side, width, width, 3);
            m += conv(side, side, width, out_ch, 1);
            if (b == 0) m += conv(side, side, cin, out_ch, 1);
        }
        in_ch = out_ch;
        side_in = side;
    }
    return m + 2048.0 * 1000.0;
}

Outcome flops_oracle(const HardwareSpec& hw) {
    double worst_rel = 0.0;
    for (const auto& [name, blocks] : std::vector<std::pair<std::string, std::vector<int>>>{
             {"resnet50", {3, 4, 6, 3}}, {"resnet101", {3, 4, 23, 3}}}) {
        const auto net = preset_network(name);
        const auto r = network_flops(net, std::vector<double>(net.block_count(), 1.0),
                                     std::vector<FusionPlan>(net.block_count(), FusionPlan::none()), false);
        const double oracle = resnet_oracle_macs(blocks);
        worst_rel = std::max(worst_rel, std::abs(r.f_stat - oracle) / oracle);
    }
    std::mt19937_64 rng(14);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int mismatches = 0;
    for (int i = 0; i < 50; ++i) {
        const BlockSpec b = random_desk_block(rng());
        const auto mask = synth_mask(b.cells_h(), b.cells_w(), u(rng), rng(), b.granularity);
        const int f = static_cast<int>(rng() % 8);
        const FusionPlan plan{(f & 4) != 0, (f & 2) != 0, (f & 1) != 0};
        const Tensor x = random_tensor(b.conv1.c_in, b.input_h, b.input_w, rng());
        TrafficTrace t;
        dynamic_block_forward(x, random_block_weights(b, rng()), b, mask, plan, hw, &t);
        if (t.distinct_macs != static_cast<std::int64_t>(block_dynamic_macs(b, mask, plan).total_macs))
            ++mismatches;
    }
    return {worst_rel <= 0.005 && mismatches == 0,
            fmt("static rel err %.4f%%, %d/50 traced MAC mismatches", 100 * worst_rel, mismatches)};
}

Outcome tile_search() {
    std::mt19937_64 rng(15);
    const char* names[] = {"v100", "gtx1080", "tx2", "nano"};
    std::uniform_int_distribution<int> pd(1, 400), cd(1, 128), sd(0, 4);
    const int sides[] = {1, 2, 4, 7, 8};
    int bad = 0;
    for (int i = 0; i < 100; ++i) {
        const auto hw = preset_hardware(names[i % 4]);
        const ConvLayerSpec l{cd(rng), cd(rng), rng() % 2 ? 3 : 1, 1, 1, true};
        const GatheredShape g{pd(rng), l.c_out, sides[sd(rng)]};
        const Operator op = make_conv_operator(OpKind::dyn_conv, l, g);
        const Workload w{g.p, nullptr};
        const auto tiles = enumerate_tiles(op_domain(op, w));
        std::size_t best = 0;
        double best_total = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < tiles.size(); ++t) {
            const double v = evaluate_tile(op, tiles[t], w, hw).total;
            if (v < best_total) {
                best_total = v;
                best = t;
            }
        }
        const auto a = predict_op_latency(op, w, hw);
        const auto b = predict_op_latency(op, w, hw);
        if (a.total != best_total || !(a.chosen_tile == tiles[best]) || !(a.chosen_tile == b.chosen_tile)) ++bad;
    }
    return {bad == 0, fmt("%d/100 shapes differ from the first exhaustive minimum", bad)};
}

Outcome ablation(const NetworkSpec& r101, const HardwareSpec& v100) {
    const auto t0 = Clock::now();
    const auto rows = fusion_ablation(stage_block(r101, 0).with_granularity(4), 4, 0.6, v100);
    const double secs = seconds_since(t0);
    bool dec = rows.size() == 4;
    for (std::size_t i = 1; dec && i < rows.size(); ++i) dec = rows[i].latency < rows[i - 1].latency;
    const double red = dec ? 1.0 - rows[3].latency / rows[0].latency : 0.0;
    std::string lat;
    for (const auto& r : rows) lat += fmt("%s%.1f", lat.empty() ? "" : " > ", r.latency * 1e6);
    return {dec && red > 0.30 && secs < 5.0, fmt("%s us, reduction %.1f%%, %.3f s", lat.c_str(), 100 * red, secs)};
}

Outcome granularity(const NetworkSpec& r101, const HardwareSpec& v100) {
    int bad = 0;
    int points = 0;
    for (int st : {0, 1})
        for (double r : {0.3, 0.5, 0.7}) {
            const auto res = sweep_s(stage_block(r101, st), r, v100);
            points += static_cast<int>(res.points.size());
            for (std::size_t i = 1; i < res.points.size(); ++i)
                if (res.points[i].r_l > res.points[i - 1].r_l) ++bad;
        }
    return {bad == 0 && points > 0, fmt("%d increases over %d sweep points", bad, points)};
}

Outcome r_threshold(const NetworkSpec& r101) {
    int found = 0;
    int bad = 0;
    for (const auto& name : hardware_preset_names()) {
        const auto hw = preset_hardware(name);
        for (int st = 0; st < 4; ++st) {
            const auto b = stage_block(r101, st);
            for (int s : valid_granularities(b.out_h())) {
                const auto th = compute_r_th(b, s, hw);
                if (th.status != RThreshold::Status::found || th.r_th <= 0.0 || th.r_th >= 1.0) continue;
                ++found;
                const double below = masker_fusion_gain(b, s, std::max(0.0, th.r_th - 0.01), hw);
                const double above = masker_fusion_gain(b, s, std::min(1.0, th.r_th + 0.01), hw);
                if (!(below > 0.0 && above < 0.0)) ++bad;
            }
        }
    }
    return {found > 0 && bad == 0, fmt("%d interior thresholds, %d without a sign change", found, bad)};
}

Outcome device_dependence(const NetworkSpec& r101) {
    const auto t0 = Clock::now();
    const auto net = r101.with_s_net({8, 4, 7, 1});
    const std::size_t n = net.block_count();
    const double rate =
        solve_uniform_rate(net, 0.4, std::vector<FusionPlan>(n, FusionPlan{false, true, true}));
    const std::vector<double> rates(n, rate);
    const double tx2 = network_latency(net, rates, preset_hardware("tx2")).speedup;
    const double v100 = network_latency(net, rates, preset_hardware("v100")).speedup;
    const double secs = seconds_since(t0);
    return {std::abs(tx2 - 0.6) < std::abs(v100 - 0.6) && secs < 30.0,
            fmt("r = %.4f, speedup tx2 %.3f, v100 %.3f, %.2f s", rate, tx2, v100, secs)};
}

Outcome simulator(const HardwareSpec& hw) {
    std::mt19937_64 rng(16);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double plan_err = 0.0;
    double dense_err = 0.0;
    for (int i = 0; i < 20; ++i) {
        const BlockSpec b = random_desk_block(rng());
        const auto mask = synth_mask(b.cells_h(), b.cells_w(), u(rng), rng(), b.granularity);
        const Tensor x = random_tensor(b.conv1.c_in, b.input_h, b.input_w, rng());
        const BlockWeights w = random_block_weights(b, rng());
        const Tensor ref = dynamic_block_forward(x, w, b, mask, FusionPlan::none(), hw);
        for (int f = 1; f < 8; ++f) {
            const FusionPlan p{(f & 4) != 0, (f & 2) != 0, (f & 1) != 0};
            plan_err = std::max(plan_err, max_abs_diff(dynamic_block_forward(x, w, b, mask, p, hw), ref));
        }
        const Tensor dense = dense_block_forward(x, w, b);
        const auto up = upsample(mask);
        for (int c = 0; c < ref.c; ++c)
            for (int y = 0; y < ref.h; ++y)
                for (int z = 0; z < ref.w; ++z)
                    if (up.grid.at(y, z))
                        dense_err = std::max(dense_err, static_cast<double>(std::abs(ref.at(c, y, z) - dense.at(c, y, z))));
    }
    int ok = 0;
    const auto suite = default_verify_suite(1);
    for (const auto& vc : suite) ok += verify_traffic(vc.block, vc.mask, vc.fusion, hw).ok() ? 1 : 0;
    return {plan_err <= 1e-6 && dense_err <= 1e-5 && ok == static_cast<int>(suite.size()),
            fmt("plan diff %.2e, dense diff %.2e, traffic %d/%zu", plan_err, dense_err, ok, suite.size())};
}

Outcome masker_reduction() {
    std::mt19937 rng(17);
    std::normal_distribution<float> nd;
    int violations = 0;
    int locations = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const int c = 1 + trial % 64;
        std::vector<float> w2(static_cast<std::size_t>(2 * c));
        for (auto& v : w2) v = nd(rng);
        const auto w1 = masker_reduce_weights(w2, c);
        for (int loc = 0; loc < 100; ++loc, ++locations) {
            double a0 = 0.0, a1 = 0.0, r = 0.0;
            for (int i = 0; i < c; ++i) {
                const double x = nd(rng);
                a0 += static_cast<double>(w2[i]) * x;
                a1 += static_cast<double>(w2[c + i]) * x;
                r += static_cast<double>(w1[i]) * x;
            }
            if ((a0 > a1) != (r > 0.0)) ++violations;
        }
    }
    return {locations >= 1000 && violations == 0, fmt("%d violations over %d locations", violations, locations)};
}

}  // namespace

int main() {
    const auto r101 = preset_network("resnet101");
    const auto v100 = preset_hardware("v100");
    const auto tx2 = preset_hardware("tx2");
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gumbel relaxation", gumbel},
        {"mask algebra", mask_algebra},
        {"halo duplication", halo},
        {"FLOPs oracle", [&] { return flops_oracle(tx2); }},
        {"tile search", tile_search},
        {"fusion ablation ordering", [&] { return ablation(r101, v100); }},
        {"granularity law", [&] { return granularity(r101, v100); }},
        {"r_th sign change", [&] { return r_threshold(r101); }},
        {"device-dependent speedup", [&] { return device_dependence(r101); }},
        {"simulator oracle", [&] { return simulator(tx2); }},
        {"masker channel reduction", masker_reduction},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::printf("[%s] %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                    o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
