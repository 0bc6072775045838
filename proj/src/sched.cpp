// Copyright (C) 2026 The dynlat Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynlat/sched.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "dynlat/error.hpp"

namespace dynlat {

namespace {

constexpr double kScanStep = 0.01;
constexpr double kBisectTol = 1e-4;
constexpr double kGranularityTol = 0.02;

FusionPlan decided(bool fuse_masker) { return {fuse_masker, true, true}; }

void check_rate(double r) {
    if (!(r >= 0.0 && r <= 1.0)) throw DomainError("activation rate outside [0, 1]");
}

std::string fmt_us(double seconds) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.3f", seconds * 1e6);
    return buf;
}

std::string fmt_g(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string block_label(const BlockSpec& b) {
    std::ostringstream os;
    os << b.conv1.c_in << 'x' << b.input_h << 'x' << b.input_w << "-c" << b.conv2.c_out << "-s"
       << b.stride();
    return os.str();
}

// Memoises r_th per (block, S, hw) for network-level evaluation.
class ThresholdCache {
public:
    explicit ThresholdCache(const HardwareSpec& hw) : hw_(hw) {}

    const RThreshold& get(const BlockSpec& block) {
        const std::string key = nlohmann::json(block).dump();
        auto it = cache_.find(key);
        if (it == cache_.end())
            it = cache_.emplace(key, compute_r_th(block, block.granularity, hw_)).first;
        return it->second;
    }

private:
    const HardwareSpec& hw_;
    std::map<std::string, RThreshold> cache_;
};

bool fuse_for(const RThreshold& th, double r) {
    return th.has_value() && r > th.r_th;
}

}  // namespace

std::string to_string(RThreshold::Status s) {
    switch (s) {
        case RThreshold::Status::found: return "found";
        case RThreshold::Status::always: return "always";
        case RThreshold::Status::never: return "never";
    }
    return "?";
}

double masker_fusion_gain(const BlockSpec& block, int s, double r, const HardwareSpec& hw) {
    const BlockSpec b = block.with_granularity(s);
    return predict_block_latency(b, r, hw, decided(true)).total -
           predict_block_latency(b, r, hw, decided(false)).total;
}

namespace {

// Fused minus unfused latency as a function of r. The rate form is linear
// between integer patch counts, so totals are memoised per count.
class GainCurve {
public:
    GainCurve(const BlockSpec& block, const HardwareSpec& hw) : block_(block), hw_(hw) {}

    double operator()(double r) {
        const double mean = r * static_cast<double>(block_.total_cells());
        const auto lo = static_cast<std::int64_t>(std::floor(mean + 1e-9));
        const double frac = mean - static_cast<double>(lo);
        if (frac <= 1e-9) return at(lo);
        return (1.0 - frac) * at(lo) + frac * at(lo + 1);
    }

private:
    double at(std::int64_t p) {
        auto it = memo_.find(p);
        if (it == memo_.end()) {
            const double g = predict_block_latency_at(block_, p, hw_, decided(true)).total -
                             predict_block_latency_at(block_, p, hw_, decided(false)).total;
            it = memo_.emplace(p, g).first;
        }
        return it->second;
    }

    const BlockSpec& block_;
    const HardwareSpec& hw_;
    std::map<std::int64_t, double> memo_;
};

}  // namespace

RThreshold compute_r_th(const BlockSpec& block, int s, const HardwareSpec& hw) {
    const BlockSpec b = block.with_granularity(s);
    GainCurve gain(b, hw);
    if (gain(0.0) <= 0.0) return {RThreshold::Status::always, 0.0};

    const int steps = static_cast<int>(std::lround(1.0 / kScanStep));
    double prev = 0.0;
    for (int i = 1; i <= steps; ++i) {
        const double r = i == steps ? 1.0 : i * kScanStep;
        if (gain(r) <= 0.0) {
            double lo = prev;
            double hi = r;
            while (hi - lo > kBisectTol) {
                const double mid = 0.5 * (lo + hi);
                (gain(mid) <= 0.0 ? hi : lo) = mid;
            }
            return {RThreshold::Status::found, hi};
        }
        prev = r;
    }
    return {RThreshold::Status::never, 0.0};
}

FusionPlan decide_fusion(const BlockSpec& block, int s, double expected_r, const HardwareSpec& hw) {
    check_rate(expected_r);
    return decided(fuse_for(compute_r_th(block, s, hw), expected_r));
}

SweepResult sweep_r(const BlockSpec& block, int s, const HardwareSpec& hw,
                    const std::vector<double>& r_grid) {
    for (double r : r_grid) check_rate(r);
    const BlockSpec b = block.with_granularity(s);
    const RThreshold th = compute_r_th(b, s, hw);
    const double l_stat = static_block_latency(b, hw);

    SweepResult out{"r", {}, block_label(b) + "-S" + std::to_string(s), hw.name};
    for (double r : r_grid) {
        const double l_dyn = predict_block_latency(b, r, hw, decided(fuse_for(th, r))).total;
        out.points.push_back({r, l_dyn, l_stat, l_dyn / l_stat});
    }
    return out;
}

SweepResult sweep_s(const BlockSpec& block, double r, const HardwareSpec& hw) {
    check_rate(r);
    const double l_stat = static_block_latency(block, hw);
    SweepResult out{"S", {}, block_label(block), hw.name};
    const int side = std::min(block.out_h(), block.out_w());
    for (int s : valid_granularities(side)) {
        if (block.out_h() % s != 0 || block.out_w() % s != 0) continue;
        const BlockSpec b = block.with_granularity(s);
        const double l_dyn =
            predict_block_latency(b, r, hw, decide_fusion(b, s, r, hw)).total;
        out.points.push_back({static_cast<double>(s), l_dyn, l_stat, l_dyn / l_stat});
    }
    return out;
}

std::string sweep_csv(const SweepResult& s) {
    std::ostringstream os;
    os << "x,l_dyn_us,l_stat_us,r_l\n";
    for (const auto& p : s.points)
        os << fmt_g(p.x) << ',' << fmt_us(p.l_dyn) << ',' << fmt_us(p.l_stat) << ','
           << fmt_g(p.r_l) << '\n';
    return os.str();
}

std::vector<SweepPoint> parse_sweep_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != "x,l_dyn_us,l_stat_us,r_l")
        throw Error("sweep CSV: unexpected header");
    std::vector<SweepPoint> pts;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string f[4];
        for (auto& field : f)
            if (!std::getline(ls, field, ',')) throw Error("sweep CSV: short row '" + line + "'");
        try {
            pts.push_back({std::stod(f[0]), std::stod(f[1]) * 1e-6, std::stod(f[2]) * 1e-6,
                           std::stod(f[3])});
        } catch (const std::exception&) {
            throw Error("sweep CSV: bad number in '" + line + "'");
        }
    }
    return pts;
}

void to_json(nlohmann::json& j, const SweepPoint& p) {
    j = {{"x", p.x}, {"l_dyn_us", p.l_dyn * 1e6}, {"l_stat_us", p.l_stat * 1e6}, {"r_l", p.r_l}};
}

void to_json(nlohmann::json& j, const SweepResult& s) {
    j = {{"axis", s.axis}, {"block", s.block_id}, {"hw", s.hw_name}, {"points", s.points}};
}

NetworkLatency network_latency(const NetworkSpec& net, const std::vector<double>& rates,
                               const HardwareSpec& hw, bool maskers,
                               const std::optional<FusionPlan>& fixed) {
    const auto blocks = net.blocks();
    if (rates.size() != blocks.size())
        throw DomainError("expected " + std::to_string(blocks.size()) + " rates, got " +
                          std::to_string(rates.size()));
    NetworkLatency out;
    for (const auto& l : net.stem_and_head) out.stem_head += static_layer_latency(l, hw).total;

    ThresholdCache cache(hw);
    std::map<std::string, double> static_cache;
    double dyn_sum = 0.0;
    double stat_sum = 0.0;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        const std::string key = nlohmann::json(b).dump();
        auto it = static_cache.find(key);
        if (it == static_cache.end()) it = static_cache.emplace(key, static_block_latency(b, hw)).first;

        BlockReport rep;
        rep.static_latency = it->second;
        rep.s = b.granularity;
        if (maskers) {
            check_rate(rates[i]);
            rep.rate = rates[i];
            rep.plan = fixed ? *fixed : decided(fuse_for(cache.get(b), rates[i]));
            auto lat = predict_block_latency(b, rates[i], hw, rep.plan);
            rep.latency = lat.total;
            rep.per_op = std::move(lat.per_op);
        } else {
            rep.rate = 1.0;
            rep.latency = rep.static_latency;
            rep.per_op = predict_static_block(b, hw).per_op;
        }
        dyn_sum += rep.latency;
        stat_sum += rep.static_latency;
        out.per_block.push_back(rep);
    }
    out.total = dyn_sum + out.stem_head;
    out.static_total = stat_sum + out.stem_head;
    out.speedup = 1.0 - out.total / out.static_total;
    return out;
}

std::vector<FusionPlan> network_fusions(const NetworkSpec& net, const std::vector<double>& rates,
                                        const HardwareSpec& hw) {
    const auto blocks = net.blocks();
    if (rates.size() != blocks.size()) throw DomainError("rates length does not match block count");
    ThresholdCache cache(hw);
    std::vector<FusionPlan> plans;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        check_rate(rates[i]);
        plans.push_back(decided(fuse_for(cache.get(blocks[i]), rates[i])));
    }
    return plans;
}

std::vector<AblationRow> fusion_ablation(const BlockSpec& block, int s, double r,
                                         const HardwareSpec& hw) {
    check_rate(r);
    const BlockSpec b = block.with_granularity(s);
    const std::vector<std::pair<std::string, FusionPlan>> plans = {
        {"none", {false, false, false}},
        {"+masker-conv1", {true, false, false}},
        {"+gather-conv", {true, true, false}},
        {"+scatter-add", {true, true, true}},
    };
    std::vector<AblationRow> rows;
    for (const auto& [label, plan] : plans)
        rows.push_back({label, plan, predict_block_latency(b, r, hw, plan).total});
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "fusion,plan,latency_us\n";
    for (const auto& r : rows) os << r.label << ',' << to_string(r.plan) << ',' << fmt_us(r.latency) << '\n';
    return os.str();
}

FusionPlan parse_fusion_plan(const std::string& code) {
    if (code.size() != 3) throw Error("fusion plan must be three characters like MGS or M--");
    auto flag = [&code](std::size_t i, char on) {
        if (code[i] == on) return true;
        if (code[i] == '-') return false;
        throw Error("bad fusion plan '" + code + "'");
    };
    return {flag(0, 'M'), flag(1, 'G'), flag(2, 'S')};
}

std::vector<AblationRow> parse_ablation_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != "fusion,plan,latency_us")
        throw Error("ablation CSV: unexpected header");
    std::vector<AblationRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string label, plan, lat;
        if (!std::getline(ls, label, ',') || !std::getline(ls, plan, ',') || !std::getline(ls, lat))
            throw Error("ablation CSV: short row '" + line + "'");
        try {
            rows.push_back({label, parse_fusion_plan(plan), std::stod(lat) * 1e-6});
        } catch (const std::invalid_argument&) {
            throw Error("ablation CSV: bad number in '" + line + "'");
        }
    }
    return rows;
}

void to_json(nlohmann::json& j, const AblationRow& r) {
    j = {{"fusion", r.label}, {"plan", r.plan}, {"latency_us", r.latency * 1e6}};
}

double stage_latency(const NetworkSpec& net, int stage, int s, const HardwareSpec& hw,
                     const std::vector<double>& rates) {
    const auto stages = net.block_stages();
    if (rates.size() != stages.size()) throw DomainError("rates length does not match block count");
    if (stage < 0 || stage >= static_cast<int>(net.stages.size()))
        throw DomainError("stage index out of range");
    const auto blocks = net.blocks();
    ThresholdCache cache(hw);
    std::map<std::pair<std::string, double>, double> seen;  // repeated blocks of a stage
    double total = 0.0;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (stages[i] != stage) continue;
        check_rate(rates[i]);
        const BlockSpec b = blocks[i].with_granularity(s);
        const auto key = std::make_pair(nlohmann::json(b).dump(), rates[i]);
        auto it = seen.find(key);
        if (it == seen.end()) {
            const FusionPlan plan = decided(fuse_for(cache.get(b), rates[i]));
            it = seen.emplace(key, predict_block_latency(b, rates[i], hw, plan).total).first;
        }
        total += it->second;
    }
    return total;
}

std::vector<int> choose_granularity(const NetworkSpec& net, const HardwareSpec& hw,
                                    const std::vector<double>& rates) {
    if (rates.size() != net.block_count()) throw DomainError("rates length does not match block count");
    const int n = static_cast<int>(net.stages.size());
    std::vector<int> chosen(n, 1);
    for (int st = 0; st + 1 < n; ++st) {
        const BlockSpec& rep = net.stages[st].repeated;
        const int side = std::min(rep.out_h(), rep.out_w());
        std::vector<std::pair<int, double>> cand;
        for (int s : valid_granularities(side)) {
            if (rep.out_h() % s != 0 || rep.out_w() % s != 0) continue;
            // the entry block may have a different output grid
            const BlockSpec& first = net.stages[st].first;
            if (first.out_h() % s != 0 || first.out_w() % s != 0) continue;
            cand.emplace_back(s, stage_latency(net, st, s, hw, rates));
        }
        if (cand.empty()) continue;
        double best = cand.front().second;
        for (const auto& c : cand) best = std::min(best, c.second);
        for (const auto& c : cand) {
            if (c.second <= best * (1.0 + kGranularityTol)) {
                chosen[st] = c.first;
                break;
            }
        }
    }
    return chosen;
}

}  // namespace dynlat
