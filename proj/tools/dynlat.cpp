// Copyright (C) 2026 The dynlat Authors
// SPDX-License-Identifier: Apache-2.0

// dynlat: latency prediction and scheduling for coarse-grained dynamic
// convolution blocks.
//
// Exit codes: 0 ok, 1 oracle mismatch, 2 invalid configuration,
// 3 unachievable FLOPs target.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dynlat/error.hpp"
#include "dynlat/flops.hpp"
#include "dynlat/latcost.hpp"
#include "dynlat/model.hpp"
#include "dynlat/sched.hpp"
#include "dynlat/simexec.hpp"

namespace {

using nlohmann::json;
using namespace dynlat;

constexpr int kExitMismatch = 1;
constexpr int kExitConfig = 2;
constexpr int kExitTarget = 3;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TargetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Merged file + flag settings. Unset optionals fall back to per-command defaults.
struct RunConfig {
    std::string hardware = "v100";
    std::string network = "resnet101";
    int resolution = 224;
    std::optional<std::vector<int>> s_net;
    std::optional<double> rate;
    std::optional<std::vector<double>> rates;
    std::optional<double> target;
    std::string fusion = "auto";
    bool maskers = true;
    std::string output;
    std::string format;
};

double us3(double seconds) { return std::round(seconds * 1e9) / 1e3; }

std::string fmt3(double seconds) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.3f", seconds * 1e6);
    return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, sep)) out.push_back(item);
    return out;
}

std::vector<int> parse_s_net(const std::string& text) {
    std::vector<int> out;
    for (const auto& f : split(text, '-')) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(f, &used);
            if (used != f.size() || v < 1) throw std::invalid_argument(f);
            out.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError("bad --s-net '" + text + "' (expected e.g. 8-4-7-1)");
        }
    }
    if (out.empty()) throw ConfigError("empty --s-net");
    return out;
}

std::vector<double> parse_rates(const std::string& text) {
    std::vector<double> out;
    for (const auto& f : split(text, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(f, &used));
            if (used != f.size()) throw std::invalid_argument(f);
        } catch (const std::exception&) {
            throw ConfigError("bad rate '" + f + "'");
        }
    }
    return out;
}

void load_config_file(const std::string& path, RunConfig& c) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    json j;
    try {
        in >> j;
        if (j.contains("hardware")) c.hardware = j["hardware"].get<std::string>();
        if (j.contains("network")) c.network = j["network"].get<std::string>();
        if (j.contains("resolution")) c.resolution = j["resolution"].get<int>();
        if (j.contains("s_net")) c.s_net = j["s_net"].get<std::vector<int>>();
        if (j.contains("rate")) c.rate = j["rate"].get<double>();
        if (j.contains("rates")) c.rates = j["rates"].get<std::vector<double>>();
        if (j.contains("target")) c.target = j["target"].get<double>();
        if (j.contains("fusion")) c.fusion = j["fusion"].get<std::string>();
        if (j.contains("maskers")) c.maskers = j["maskers"].get<bool>();
        if (j.contains("output")) c.output = j["output"].get<std::string>();
        if (j.contains("format")) c.format = j["format"].get<std::string>();
    } catch (const json::exception& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
}

HardwareSpec resolve_hardware(const std::string& key) {
    if (std::filesystem::is_regular_file(key)) return load_hardware(key);
    try {
        return preset_hardware(key);
    } catch (const NotFound&) {
        throw ConfigError("unknown hardware '" + key + "' (not a preset or a file)");
    }
}

NetworkSpec resolve_network(const RunConfig& c) {
    NetworkSpec net;
    if (std::filesystem::is_regular_file(c.network)) {
        net = load_network(c.network);
    } else {
        try {
            net = preset_network(c.network, c.resolution);
        } catch (const NotFound&) {
            throw ConfigError("unknown network '" + c.network + "' (not a preset or a file)");
        }
    }
    if (c.s_net) {
        net = net.with_s_net(*c.s_net);
        net.validate();
    }
    return net;
}

std::string format_or(const RunConfig& c, const std::string& fallback) {
    const std::string f = c.format.empty() ? fallback : c.format;
    if (f != "csv" && f != "json") throw ConfigError("format must be csv or json, got '" + f + "'");
    return f;
}

void emit(const RunConfig& c, const std::string& text) {
    if (c.output.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(c.output, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + c.output);
    out << text;
}

std::string s_net_text(const std::vector<int>& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "-" : "") + std::to_string(s[i]);
    return out;
}

json breakdown_json(const LatencyBreakdown& l) {
    return {{"off2on_us", us3(l.off2on)},
            {"global2local_us", us3(l.global2local)},
            {"compute_us", us3(l.compute)},
            {"local2global_us", us3(l.local2global)},
            {"on2off_us", us3(l.on2off)},
            {"total_us", us3(l.total)},
            {"tile", l.chosen_tile}};
}

LatencyBreakdown sum_ops(const std::vector<OpLatency>& ops) {
    LatencyBreakdown s;
    for (const auto& o : ops) {
        s.off2on += o.latency.off2on;
        s.global2local += o.latency.global2local;
        s.compute += o.latency.compute;
        s.local2global += o.latency.local2global;
        s.on2off += o.latency.on2off;
        s.total += o.latency.total;
    }
    return s;
}

int cmd_predict(const RunConfig& c) {
    const HardwareSpec hw = resolve_hardware(c.hardware);
    const NetworkSpec net = resolve_network(c);
    const std::size_t n = net.block_count();

    const int given = (c.rate ? 1 : 0) + (c.rates ? 1 : 0) + (c.target ? 1 : 0);
    if (given != 1) throw ConfigError("exactly one of --rate, --rates, --target is required");

    std::optional<FusionPlan> fixed;
    if (c.fusion != "auto") {
        try {
            fixed = parse_fusion_plan(c.fusion);
        } catch (const Error& e) {
            throw ConfigError(e.what());
        }
    }

    std::vector<double> rates;
    if (c.rate) rates.assign(n, *c.rate);
    if (c.rates) {
        rates = *c.rates;
        if (rates.size() != n)
            throw ConfigError(net.name + " has " + std::to_string(n) + " blocks, got " +
                              std::to_string(rates.size()) + " rates");
    }
    if (c.target) {
        if (!(*c.target > 0.0 && std::isfinite(*c.target))) throw ConfigError("target must be positive");
        const std::vector<FusionPlan> unfused(n, FusionPlan{false, true, true});
        try {
            rates.assign(n, solve_uniform_rate(net, *c.target, unfused));
        } catch (const DomainError& e) {
            throw TargetError(e.what());
        }
    }
    for (double r : rates)
        if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("rates must lie in [0, 1]");

    const NetworkLatency lat = network_latency(net, rates, hw, c.maskers, fixed);
    std::vector<FusionPlan> plans;
    std::vector<double> flop_rates = rates;
    for (std::size_t i = 0; i < n; ++i) {
        plans.push_back(lat.per_block[i].plan);
        if (!c.maskers) flop_rates[i] = 1.0;
    }
    const FlopsReport flops = network_flops(net, flop_rates, plans, c.maskers);
    const auto stages = net.block_stages();

    if (format_or(c, "json") == "csv") {
        std::ostringstream os;
        os << "id,stage,s,rate,plan,off2on_us,g2l_us,compute_us,l2g_us,on2off_us,latency_us,"
              "static_latency_us\n";
        char rbuf[48];
        for (std::size_t i = 0; i < n; ++i) {
            const auto& b = lat.per_block[i];
            const auto t = sum_ops(b.per_op);
            std::snprintf(rbuf, sizeof rbuf, "%.17g", b.rate);
            os << "block" << i + 1 << ',' << stages[i] + 1 << ',' << b.s << ',' << rbuf << ','
               << (c.maskers ? to_string(b.plan) : "static") << ',' << fmt3(t.off2on) << ','
               << fmt3(t.global2local) << ',' << fmt3(t.compute) << ',' << fmt3(t.local2global)
               << ',' << fmt3(t.on2off) << ',' << fmt3(b.latency) << ','
               << fmt3(b.static_latency) << '\n';
        }
        os << "stem_head,,,,,,,,,," << fmt3(lat.stem_head) << ',' << fmt3(lat.stem_head) << '\n';
        os << "total,,,,,,,,,," << fmt3(lat.total) << ',' << fmt3(lat.static_total) << '\n';
        emit(c, os.str());
        return 0;
    }

    json blocks = json::array();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& b = lat.per_block[i];
        json ops = json::array();
        for (const auto& o : b.per_op) {
            json e = breakdown_json(o.latency);
            e["op"] = o.op;
            ops.push_back(e);
        }
        blocks.push_back({{"index", i + 1},
                          {"stage", stages[i] + 1},
                          {"s", b.s},
                          {"rate", b.rate},
                          {"plan", c.maskers ? to_string(b.plan) : "static"},
                          {"latency_us", us3(b.latency)},
                          {"static_latency_us", us3(b.static_latency)},
                          {"breakdown", breakdown_json(sum_ops(b.per_op))},
                          {"per_op", ops}});
    }
    json report = {{"hardware", hw.name},
                   {"network", net.name},
                   {"s_net", s_net_text(net.s_net)},
                   {"maskers", c.maskers},
                   {"fusion", c.fusion},
                   {"blocks", blocks},
                   {"stem_head_us", us3(lat.stem_head)},
                   {"total_us", us3(lat.total)},
                   {"static_total_us", us3(lat.static_total)},
                   {"speedup", lat.speedup},
                   {"flops",
                    {{"f_dyn", flops.f_dyn}, {"f_stat", flops.f_stat}, {"ratio", flops.ratio}}}};
    if (c.target) {
        report["target"] = *c.target;
        report["solved_rate"] = rates.front();
    }
    emit(c, report.dump(2) + "\n");
    return 0;
}

struct Selector {
    int block = 1;  // 1-based stage
    std::optional<int> s;
    std::optional<double> rate;
    double step = 0.05;
    std::string axis = "r";
};

BlockSpec select_block(const NetworkSpec& net, int stage_1based) {
    const int n = static_cast<int>(net.stages.size());
    if (stage_1based < 1 || stage_1based > n)
        throw ConfigError("--block must be a stage in 1.." + std::to_string(n));
    return stage_block(net, stage_1based - 1);
}

int checked_granularity(const BlockSpec& b, int s) {
    const auto valid = valid_granularities(std::min(b.out_h(), b.out_w()));
    const bool ok = std::find(valid.begin(), valid.end(), s) != valid.end() && b.out_h() % s == 0 &&
                    b.out_w() % s == 0;
    if (!ok)
        throw ConfigError("S=" + std::to_string(s) + " is not a valid granularity for a " +
                          std::to_string(b.out_h()) + "x" + std::to_string(b.out_w()) + " block");
    return s;
}

double checked_rate(double r) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("rate must lie in [0, 1]");
    return r;
}

int cmd_sweep(const RunConfig& c, const Selector& sel) {
    const HardwareSpec hw = resolve_hardware(c.hardware);
    const NetworkSpec net = resolve_network(c);
    const BlockSpec block = select_block(net, sel.block);

    SweepResult res;
    if (sel.axis == "r") {
        const int s = checked_granularity(block, sel.s.value_or(block.granularity));
        if (!(sel.step > 0.0 && sel.step <= 1.0)) throw ConfigError("--step must lie in (0, 1]");
        const long steps = std::lround(1.0 / sel.step);
        if (std::abs(steps * sel.step - 1.0) > 1e-9) throw ConfigError("--step must divide 1");
        std::vector<double> grid;
        for (long i = 0; i <= steps; ++i) grid.push_back(static_cast<double>(i) / steps);
        res = sweep_r(block, s, hw, grid);
    } else if (sel.axis == "S") {
        res = sweep_s(block, checked_rate(sel.rate.value_or(0.5)), hw);
    } else {
        throw ConfigError("--axis must be r or S");
    }
    emit(c, format_or(c, "csv") == "csv" ? sweep_csv(res) : json(res).dump(2) + "\n");
    return 0;
}

int cmd_ablate(const RunConfig& c, const Selector& sel) {
    const HardwareSpec hw = resolve_hardware(c.hardware);
    const NetworkSpec net = resolve_network(c);
    const BlockSpec block = select_block(net, sel.block);
    const int s = checked_granularity(block, sel.s.value_or(4));
    const auto rows = fusion_ablation(block, s, checked_rate(sel.rate.value_or(0.6)), hw);
    emit(c, format_or(c, "csv") == "csv" ? ablation_csv(rows) : json(rows).dump(2) + "\n");
    return 0;
}

std::string traffic_row(const char* term, std::int64_t model, std::int64_t traced) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "    %-13s model=%lld traced=%lld%s\n", term,
                  static_cast<long long>(model), static_cast<long long>(traced),
                  model == traced ? "" : "  MISMATCH");
    return buf;
}

int cmd_validate(const RunConfig& c, std::uint64_t seed, std::int64_t element_bytes) {
    const HardwareSpec hw = resolve_hardware(c.hardware);
    if (element_bytes < 1) throw ConfigError("--corrupt-element-bytes must be positive");
    VerifyOptions opt;
    opt.seed = seed;
    opt.model_element_bytes = element_bytes;

    std::ostringstream os;
    int failed = 0;
    const auto suite = default_verify_suite(seed);
    for (const auto& vc : suite) {
        const TrafficReport rep = verify_traffic(vc.block, vc.mask, vc.fusion, hw, opt);
        if (rep.ok()) continue;
        ++failed;
        os << "FAIL " << vc.name << '\n';
        for (const auto& d : rep.per_op) {
            if (d.match()) continue;
            os << "  " << d.op << '\n';
            os << traffic_row("off2on", d.model.off2on_bytes, d.traced.off2on_bytes);
            os << traffic_row("global2local", d.model.global2local_bytes,
                              d.traced.global2local_bytes);
            os << traffic_row("local2global", d.model.local2global_bytes,
                              d.traced.local2global_bytes);
            os << traffic_row("on2off", d.model.on2off_bytes, d.traced.on2off_bytes);
            os << traffic_row("mac_count", d.model.mac_count, d.traced.mac_count);
            os << traffic_row("n_tiles", d.model.n_tiles, d.traced.n_tiles);
        }
    }
    os << suite.size() - failed << '/' << suite.size() << " cases match (seed " << seed << ", "
       << hw.name << ")\n";
    emit(c, os.str());
    return failed == 0 ? 0 : kExitMismatch;
}

int cmd_presets(const RunConfig& c) {
    if (format_or(c, "csv") == "json") {
        json j = {{"hardware", json::array()}, {"networks", json::array()}};
        for (const auto& n : hardware_preset_names()) j["hardware"].push_back(preset_hardware(n));
        for (const auto& n : network_preset_names()) {
            const auto net = preset_network(n);
            j["networks"].push_back({{"name", n},
                                     {"blocks", net.block_count()},
                                     {"s_net", s_net_text(net.s_net)}});
        }
        emit(c, j.dump(2) + "\n");
        return 0;
    }
    std::ostringstream os;
    os << "kind,name,detail\n";
    for (const auto& n : hardware_preset_names()) {
        const auto h = preset_hardware(n);
        char buf[160];
        std::snprintf(buf, sizeof buf, "%lld PE x %lld FP32 @ %.0f MHz; %.1f GB/s",
                      static_cast<long long>(h.num_pe), static_cast<long long>(h.fp32_lanes_per_pe),
                      h.frequency / 1e6, h.offchip_bandwidth / 1e9);
        os << "hardware," << n << ',' << buf << '\n';
    }
    for (const auto& n : network_preset_names()) {
        const auto net = preset_network(n);
        os << "network," << n << ',' << net.block_count() << " blocks; S_net "
           << s_net_text(net.s_net) << '\n';
    }
    emit(c, os.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latency prediction and scheduling for spatially sparse convolution blocks"};
    app.require_subcommand(1);

    RunConfig cfg;
    std::string config_path;
    std::string s_net_flag;
    std::string rates_flag;
    double rate_flag = 0.0;
    double target_flag = 0.0;
    bool no_maskers = false;
    Selector sel;
    int s_flag = 1;
    double sel_rate = 0.0;
    std::uint64_t seed = 1;
    std::int64_t element_bytes = kElementBytes;

    struct Flags {
        CLI::Option* hw = nullptr;
        CLI::Option* net = nullptr;
        CLI::Option* res = nullptr;
        CLI::Option* s_net = nullptr;
        CLI::Option* out = nullptr;
        CLI::Option* format = nullptr;
    };
    auto common = [&](CLI::App* sub, Flags& f) {
        sub->add_option("--config", config_path, "JSON run config; flags override it");
        f.hw = sub->add_option("--hw", cfg.hardware, "hardware preset or JSON file");
        f.net = sub->add_option("--net", cfg.network, "network preset or JSON file");
        f.res = sub->add_option("--resolution", cfg.resolution, "input resolution for presets");
        f.s_net = sub->add_option("--s-net", s_net_flag, "per-stage granularity, e.g. 8-4-7-1");
        f.out = sub->add_option("--out", cfg.output, "output file (default stdout)");
        f.format = sub->add_option("--format", cfg.format, "csv or json");
    };

    Flags fp, fs, fa, fv, fl;
    auto* predict = app.add_subcommand("predict", "block and network latency report");
    common(predict, fp);
    auto* o_rate = predict->add_option("--rate", rate_flag, "uniform activation rate");
    auto* o_rates = predict->add_option("--rates", rates_flag, "comma-separated per-block rates");
    auto* o_target = predict->add_option("--target", target_flag, "FLOPs ratio target t");
    auto* o_fusion = predict->add_option("--fusion", cfg.fusion, "auto or a plan like MGS, M--, ---");
    auto* o_nomask = predict->add_flag("--no-maskers", no_maskers, "run every block statically");

    auto* sweep = app.add_subcommand("sweep", "r_l versus r or S for one stage block");
    common(sweep, fs);
    sweep->add_option("--axis", sel.axis, "r or S");
    sweep->add_option("--block", sel.block, "stage index, 1-based");
    auto* sw_s = sweep->add_option("--s", s_flag, "granularity for the r axis");
    auto* sw_rate = sweep->add_option("--rate", sel_rate, "activation rate for the S axis");
    sweep->add_option("--step", sel.step, "r grid step");

    auto* ablate = app.add_subcommand("ablate", "cumulative fusion table");
    common(ablate, fa);
    ablate->add_option("--block", sel.block, "stage index, 1-based");
    auto* ab_s = ablate->add_option("--s", s_flag, "granularity (default 4)");
    auto* ab_rate = ablate->add_option("--rate", sel_rate, "activation rate (default 0.6)");

    auto* validate = app.add_subcommand("validate", "check modelled traffic against the executor");
    common(validate, fv);
    validate->add_option("--seed", seed, "suite seed");
    validate->add_option("--corrupt-element-bytes", element_bytes,
                         "fault injection: element size the model assumes");

    auto* presets = app.add_subcommand("presets", "list built-in hardware and networks");
    common(presets, fl);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    Flags* flags = predict->parsed()    ? &fp
                   : sweep->parsed()    ? &fs
                   : ablate->parsed()   ? &fa
                   : validate->parsed() ? &fv
                                        : &fl;
    try {
        // Flags win over the file: reload the file, then reapply given flags.
        if (!config_path.empty()) {
            RunConfig flagged = cfg;
            cfg = RunConfig{};
            load_config_file(config_path, cfg);
            if (flags->hw->count()) cfg.hardware = flagged.hardware;
            if (flags->net->count()) cfg.network = flagged.network;
            if (flags->res->count()) cfg.resolution = flagged.resolution;
            if (flags->out->count()) cfg.output = flagged.output;
            if (flags->format->count()) cfg.format = flagged.format;
            if (predict->parsed() && o_fusion->count()) cfg.fusion = flagged.fusion;
        }
        if (flags->s_net->count()) cfg.s_net = parse_s_net(s_net_flag);
        if (predict->parsed()) {
            if (o_rate->count() || o_rates->count() || o_target->count()) {
                cfg.rate.reset();
                cfg.rates.reset();
                cfg.target.reset();
            }
            if (o_rate->count()) cfg.rate = rate_flag;
            if (o_rates->count()) cfg.rates = parse_rates(rates_flag);
            if (o_target->count()) cfg.target = target_flag;
            if (o_nomask->count()) cfg.maskers = !no_maskers;
            return cmd_predict(cfg);
        }
        if (sweep->parsed()) {
            if (sw_s->count()) sel.s = s_flag;
            if (sw_rate->count()) sel.rate = sel_rate;
            return cmd_sweep(cfg, sel);
        }
        if (ablate->parsed()) {
            if (ab_s->count()) sel.s = s_flag;
            if (ab_rate->count()) sel.rate = sel_rate;
            return cmd_ablate(cfg, sel);
        }
        if (validate->parsed()) return cmd_validate(cfg, seed, element_bytes);
        return cmd_presets(cfg);
    } catch (const TargetError& e) {
        std::cerr << "error: unachievable target: " << e.what() << '\n';
        return kExitTarget;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NotFound& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const InvalidShape& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DomainError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const Error& e) {
        // invalid specs, unknown presets and out-of-domain values
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    }
}
