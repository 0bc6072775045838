// Copyright (C) 2026 The dynlat Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynlat/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "dynlat/error.hpp"

namespace dynlat {

namespace {

constexpr std::int64_t kBytesPerElement = 4;

void require(bool ok, const std::string& what) {
    if (!ok) throw InvalidShape(what);
}

bool positive(double v) { return v > 0.0 && !std::isnan(v); }

}  // namespace

void HardwareSpec::validate() const {
    require(num_pe > 0, name + ": num_pe must be positive");
    require(fp32_lanes_per_pe > 0, name + ": fp32_lanes_per_pe must be positive");
    require(positive(frequency), name + ": frequency must be positive");
    require(positive(offchip_bandwidth), name + ": offchip_bandwidth must be positive");
    require(positive(onchip_global_bandwidth), name + ": onchip_global_bandwidth must be positive");
    require(positive(local_bandwidth_per_pe), name + ": local_bandwidth_per_pe must be positive");
    require(txn_bytes > 0, name + ": txn_bytes must be positive");
    require(fma_per_lane_per_cycle > 0, name + ": fma_per_lane_per_cycle must be positive");
    require(onchip_global_bandwidth >= offchip_bandwidth,
            name + ": on-chip bandwidth below off-chip bandwidth");
}

double HardwareSpec::global_to_local_bandwidth() const {
    return std::min(onchip_global_bandwidth,
                    static_cast<double>(num_pe) * local_bandwidth_per_pe);
}

void ConvLayerSpec::validate() const {
    require(c_in > 0 && c_out > 0 && groups > 0, "conv: channels and groups must be positive");
    require(kernel == 1 || kernel == 3, "conv: kernel must be 1 or 3");
    require(stride == 1 || stride == 2, "conv: stride must be 1 or 2");
    require(c_in % groups == 0 && c_out % groups == 0,
            "conv: channels not divisible by groups");
}

int BlockSpec::se_channels() const {
    if (!se_reduction) return 0;
    return std::max(1, static_cast<int>(conv1.c_in * *se_reduction));
}

void BlockSpec::validate() const {
    conv1.validate();
    conv2.validate();
    conv3.validate();
    require(conv1.kernel == 1 && conv1.stride == 1, "block: conv1 must be a stride-1 1x1 conv");
    require(conv3.kernel == 1 && conv3.stride == 1, "block: conv3 must be a stride-1 1x1 conv");
    require(conv1.groups == 1, "block: grouped conv1 is not supported");
    require(conv1.c_out == conv2.c_in && conv2.c_out == conv3.c_in,
            "block: channel chain conv1 -> conv2 -> conv3 is inconsistent");
    require(input_h > 0 && input_w > 0, "block: input resolution must be positive");
    require(granularity > 0, "block: granularity must be positive");
    require(out_h() > 0 && out_w() > 0, "block: empty output");
    require(out_h() % granularity == 0 && out_w() % granularity == 0,
            "block: granularity " + std::to_string(granularity) +
                " does not divide output " + std::to_string(out_h()) + "x" +
                std::to_string(out_w()));
    require(masker_pool == "average", "block: only average masker pooling is supported");
    if (downsample) {
        downsample->validate();
        require(downsample->kernel == 1, "block: downsample must be 1x1");
        require(downsample->c_in == conv1.c_in && downsample->c_out == conv3.c_out &&
                    downsample->stride == conv2.stride,
                "block: downsample shape does not match the main branch");
    } else if (has_residual) {
        require(conv1.c_in == conv3.c_out && conv2.stride == 1,
                "block: identity residual needs matching shapes");
    }
    if (se_reduction) require(*se_reduction > 0.0, "block: se_reduction must be positive");
}

void NetworkSpec::validate() const {
    require(!stages.empty(), name + ": no stages");
    require(s_net.size() == stages.size(), name + ": s_net length differs from stage count");
    for (std::size_t i = 0; i < stages.size(); ++i) {
        require(stages[i].block_count >= 1, name + ": empty stage");
        stages[i].first.with_granularity(s_net[i]).validate();
        if (stages[i].block_count > 1) stages[i].repeated.with_granularity(s_net[i]).validate();
    }
}

std::vector<BlockSpec> NetworkSpec::blocks() const {
    std::vector<BlockSpec> out;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const int s = i < s_net.size() ? s_net[i] : 1;
        out.push_back(stages[i].first.with_granularity(s));
        for (int b = 1; b < stages[i].block_count; ++b)
            out.push_back(stages[i].repeated.with_granularity(s));
    }
    return out;
}

std::vector<int> NetworkSpec::block_stages() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < stages.size(); ++i)
        out.insert(out.end(), stages[i].block_count, static_cast<int>(i));
    return out;
}

std::size_t NetworkSpec::block_count() const {
    std::size_t n = 0;
    for (const auto& s : stages) n += static_cast<std::size_t>(s.block_count);
    return n;
}

NetworkSpec NetworkSpec::with_s_net(std::vector<int> s) const {
    NetworkSpec n = *this;
    n.s_net = std::move(s);
    return n;
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

namespace {

HardwareSpec make_hw(std::string name, std::int64_t pe, std::int64_t lanes, double mhz,
                     double gbps) {
    HardwareSpec h;
    h.name = std::move(name);
    h.num_pe = pe;
    h.fp32_lanes_per_pe = lanes;
    h.frequency = mhz * 1e6;
    h.offchip_bandwidth = gbps * 1e9;
    h.onchip_global_bandwidth = 10.0 * h.offchip_bandwidth;
    h.local_bandwidth_per_pe = static_cast<double>(lanes) * 8.0 * h.frequency;
    h.txn_bytes = 128;
    h.fma_per_lane_per_cycle = 1;
    return h;
}

ConvLayerSpec conv(int cin, int cout, int k, int stride = 1, int groups = 1, bool act = true) {
    return ConvLayerSpec{cin, cout, k, stride, groups, act};
}

StaticLayer static_conv_layer(std::string name, int cin, int cout, int k, int out_side,
                              int in_side) {
    StaticLayer l;
    l.name = std::move(name);
    l.macs = static_cast<std::int64_t>(out_side) * out_side * cout * cin * k * k;
    l.input_bytes = kBytesPerElement * cin * in_side * in_side;
    l.weight_bytes = kBytesPerElement * static_cast<std::int64_t>(cout) * cin * k * k;
    l.output_bytes = kBytesPerElement * static_cast<std::int64_t>(cout) * out_side * out_side;
    return l;
}

StaticLayer pool_layer(std::string name, int channels, int in_side, int out_side) {
    StaticLayer l;
    l.name = std::move(name);
    l.input_bytes = kBytesPerElement * static_cast<std::int64_t>(channels) * in_side * in_side;
    l.output_bytes = kBytesPerElement * static_cast<std::int64_t>(channels) * out_side * out_side;
    return l;
}

StaticLayer fc_layer(std::string name, int in, int out) {
    StaticLayer l;
    l.name = std::move(name);
    l.macs = static_cast<std::int64_t>(in) * out;
    l.input_bytes = kBytesPerElement * in;
    l.weight_bytes = kBytesPerElement * static_cast<std::int64_t>(in) * out;
    l.output_bytes = kBytesPerElement * out;
    return l;
}

constexpr int kDefaultSNet[] = {8, 4, 7, 1};

std::vector<int> default_s_net(int first_side) {
    std::vector<int> s;
    int side = first_side;
    for (int v : kDefaultSNet) {
        s.push_back(side % v == 0 ? v : 1);
        side /= 2;
    }
    return s;
}

NetworkSpec resnet(std::string name, const std::vector<int>& counts, int res) {
    NetworkSpec n;
    n.name = std::move(name);
    const int mids[] = {64, 128, 256, 512};
    const int stem_side = res / 2;
    const int side1 = res / 4;
    n.stem_and_head.push_back(static_conv_layer("stem_conv7x7", 3, 64, 7, stem_side, res));
    n.stem_and_head.push_back(pool_layer("stem_maxpool", 64, stem_side, side1));

    int c_in = 64;
    int in_side = side1;
    for (int i = 0; i < 4; ++i) {
        const int mid = mids[i];
        const int out = 4 * mid;
        const int stride = i == 0 ? 1 : 2;
        Stage st;
        st.block_count = counts[static_cast<std::size_t>(i)];

        BlockSpec& f = st.first;
        f.conv1 = conv(c_in, mid, 1);
        f.conv2 = conv(mid, mid, 3, stride);
        f.conv3 = conv(mid, out, 1, 1, 1, false);
        f.input_h = f.input_w = in_side;
        f.downsample = conv(c_in, out, 1, stride, 1, false);

        const int out_side = in_side / stride;
        BlockSpec& r = st.repeated;
        r.conv1 = conv(out, mid, 1);
        r.conv2 = conv(mid, mid, 3, 1);
        r.conv3 = conv(mid, out, 1, 1, 1, false);
        r.input_h = r.input_w = out_side;

        n.stages.push_back(st);
        c_in = out;
        in_side = out_side;
    }
    n.stem_and_head.push_back(pool_layer("head_avgpool", c_in, in_side, 1));
    n.stem_and_head.push_back(fc_layer("head_fc", c_in, 1000));
    n.s_net = default_s_net(side1);
    return n;
}

NetworkSpec regnety(std::string name, const std::vector<int>& depths,
                    const std::vector<int>& widths, int group_width, int res) {
    NetworkSpec n;
    n.name = std::move(name);
    constexpr int kStemWidth = 32;
    constexpr double kSe = 0.25;
    const int stem_side = res / 2;
    n.stem_and_head.push_back(static_conv_layer("stem_conv3x3", 3, kStemWidth, 3, stem_side, res));

    int w_in = kStemWidth;
    int in_side = stem_side;
    for (std::size_t i = 0; i < depths.size(); ++i) {
        const int w = widths[i];
        const int groups = w / group_width;
        Stage st;
        st.block_count = depths[i];

        BlockSpec& f = st.first;
        f.conv1 = conv(w_in, w, 1);
        f.conv2 = conv(w, w, 3, 2, groups);
        f.conv3 = conv(w, w, 1, 1, 1, false);
        f.input_h = f.input_w = in_side;
        f.downsample = conv(w_in, w, 1, 2, 1, false);
        f.se_reduction = kSe;

        const int out_side = in_side / 2;
        BlockSpec& r = st.repeated;
        r.conv1 = conv(w, w, 1);
        r.conv2 = conv(w, w, 3, 1, groups);
        r.conv3 = conv(w, w, 1, 1, 1, false);
        r.input_h = r.input_w = out_side;
        r.se_reduction = kSe;

        n.stages.push_back(st);
        w_in = w;
        in_side = out_side;
    }
    n.stem_and_head.push_back(pool_layer("head_avgpool", w_in, in_side, 1));
    n.stem_and_head.push_back(fc_layer("head_fc", w_in, 1000));
    n.s_net = default_s_net(res / 4);
    return n;
}

}  // namespace

HardwareSpec preset_hardware(std::string_view name) {
    HardwareSpec h;
    if (name == "v100") {
        h = make_hw("v100", 80, 64, 1500, 700);
    } else if (name == "gtx1080") {
        h = make_hw("gtx1080", 20, 64, 1700, 320);
    } else if (name == "tx2") {
        h = make_hw("tx2", 2, 128, 1300, 59.7);
    } else if (name == "nano") {
        h = make_hw("nano", 1, 128, 921, 25.6);
    } else {
        throw NotFound("unknown hardware preset '" + std::string(name) + "'");
    }
    h.validate();
    return h;
}

std::vector<std::string> hardware_preset_names() { return {"v100", "gtx1080", "tx2", "nano"}; }

NetworkSpec preset_network(std::string_view name, int input_resolution) {
    const bool known = name == "resnet50" || name == "resnet101" || name == "regnety400mf" ||
                       name == "regnety800mf";
    if (!known) throw NotFound("unknown network preset '" + std::string(name) + "'");
    if (input_resolution <= 0 || input_resolution % 32 != 0)
        throw InvalidShape("input resolution " + std::to_string(input_resolution) +
                           " is not a positive multiple of 32");
    NetworkSpec n;
    if (name == "resnet50") {
        n = resnet("resnet50", {3, 4, 6, 3}, input_resolution);
    } else if (name == "resnet101") {
        n = resnet("resnet101", {3, 4, 23, 3}, input_resolution);
    } else if (name == "regnety400mf") {
        n = regnety("regnety400mf", {1, 3, 6, 6}, {48, 104, 208, 440}, 8, input_resolution);
    } else {
        n = regnety("regnety800mf", {1, 3, 8, 2}, {64, 128, 320, 768}, 16, input_resolution);
    }
    n.validate();
    return n;
}

std::vector<std::string> network_preset_names() {
    return {"resnet50", "resnet101", "regnety400mf", "regnety800mf"};
}

std::vector<int> valid_granularities(int feature_side) {
    std::vector<int> out;
    for (int s = 1; s < feature_side; ++s)
        if (feature_side % s == 0) out.push_back(s);
    return out;
}

BlockSpec stage_block(const NetworkSpec& net, int stage) {
    if (stage < 0 || static_cast<std::size_t>(stage) >= net.stages.size())
        throw NotFound("stage " + std::to_string(stage) + " out of range");
    const Stage& st = net.stages[static_cast<std::size_t>(stage)];
    const int s = net.s_net[static_cast<std::size_t>(stage)];
    return (st.block_count > 1 ? st.repeated : st.first).with_granularity(s);
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const HardwareSpec& h) {
    j = {{"name", h.name},
         {"num_pe", h.num_pe},
         {"fp32_lanes_per_pe", h.fp32_lanes_per_pe},
         {"frequency", h.frequency},
         {"offchip_bandwidth", h.offchip_bandwidth},
         {"onchip_global_bandwidth", h.onchip_global_bandwidth},
         {"local_bandwidth_per_pe", h.local_bandwidth_per_pe},
         {"txn_bytes", h.txn_bytes},
         {"fma_per_lane_per_cycle", h.fma_per_lane_per_cycle}};
}

void from_json(const nlohmann::json& j, HardwareSpec& h) {
    j.at("name").get_to(h.name);
    j.at("num_pe").get_to(h.num_pe);
    j.at("fp32_lanes_per_pe").get_to(h.fp32_lanes_per_pe);
    j.at("frequency").get_to(h.frequency);
    j.at("offchip_bandwidth").get_to(h.offchip_bandwidth);
    // Extension fields fall back to the documented defaults.
    h.onchip_global_bandwidth = j.value("onchip_global_bandwidth", 10.0 * h.offchip_bandwidth);
    h.local_bandwidth_per_pe =
        j.value("local_bandwidth_per_pe",
                static_cast<double>(h.fp32_lanes_per_pe) * 8.0 * h.frequency);
    h.txn_bytes = j.value("txn_bytes", std::int64_t{128});
    h.fma_per_lane_per_cycle = j.value("fma_per_lane_per_cycle", std::int64_t{1});
}

void to_json(nlohmann::json& j, const ConvLayerSpec& c) {
    j = {{"c_in", c.c_in},       {"c_out", c.c_out},   {"kernel", c.kernel},
         {"stride", c.stride},   {"groups", c.groups}, {"has_bn_act_fused", c.has_bn_act_fused}};
}

void from_json(const nlohmann::json& j, ConvLayerSpec& c) {
    j.at("c_in").get_to(c.c_in);
    j.at("c_out").get_to(c.c_out);
    j.at("kernel").get_to(c.kernel);
    c.stride = j.value("stride", 1);
    c.groups = j.value("groups", 1);
    c.has_bn_act_fused = j.value("has_bn_act_fused", true);
}

void to_json(nlohmann::json& j, const BlockSpec& b) {
    j = {{"layers", {b.conv1, b.conv2, b.conv3}},
         {"input_h", b.input_h},
         {"input_w", b.input_w},
         {"has_residual", b.has_residual},
         {"downsample", nullptr},
         {"se_reduction", nullptr},
         {"masker_pool", b.masker_pool},
         {"granularity", b.granularity}};
    if (b.downsample) j["downsample"] = *b.downsample;
    if (b.se_reduction) j["se_reduction"] = *b.se_reduction;
}

void from_json(const nlohmann::json& j, BlockSpec& b) {
    const auto& layers = j.at("layers");
    if (!layers.is_array() || layers.size() != 3)
        throw InvalidShape("block: 'layers' must hold exactly three convolutions");
    layers[0].get_to(b.conv1);
    layers[1].get_to(b.conv2);
    layers[2].get_to(b.conv3);
    j.at("input_h").get_to(b.input_h);
    j.at("input_w").get_to(b.input_w);
    b.has_residual = j.value("has_residual", true);
    b.downsample.reset();
    if (j.contains("downsample") && !j["downsample"].is_null())
        b.downsample = j["downsample"].get<ConvLayerSpec>();
    b.se_reduction.reset();
    if (j.contains("se_reduction") && !j["se_reduction"].is_null())
        b.se_reduction = j["se_reduction"].get<double>();
    b.masker_pool = j.value("masker_pool", std::string("average"));
    b.granularity = j.value("granularity", 1);
}

void to_json(nlohmann::json& j, const StaticLayer& l) {
    j = {{"name", l.name},
         {"macs", l.macs},
         {"input_bytes", l.input_bytes},
         {"weight_bytes", l.weight_bytes},
         {"output_bytes", l.output_bytes}};
}

void from_json(const nlohmann::json& j, StaticLayer& l) {
    j.at("name").get_to(l.name);
    l.macs = j.value("macs", std::int64_t{0});
    l.input_bytes = j.value("input_bytes", std::int64_t{0});
    l.weight_bytes = j.value("weight_bytes", std::int64_t{0});
    l.output_bytes = j.value("output_bytes", std::int64_t{0});
}

void to_json(nlohmann::json& j, const Stage& s) {
    j = {{"first", s.first}, {"template", s.repeated}, {"block_count", s.block_count}};
}

void from_json(const nlohmann::json& j, Stage& s) {
    j.at("template").get_to(s.repeated);
    s.first = j.contains("first") ? j["first"].get<BlockSpec>() : s.repeated;
    j.at("block_count").get_to(s.block_count);
}

void to_json(nlohmann::json& j, const NetworkSpec& n) {
    j = {{"name", n.name},
         {"stages", n.stages},
         {"s_net", n.s_net},
         {"stem_and_head", n.stem_and_head}};
}

void from_json(const nlohmann::json& j, NetworkSpec& n) {
    j.at("name").get_to(n.name);
    j.at("stages").get_to(n.stages);
    j.at("s_net").get_to(n.s_net);
    n.stem_and_head = j.value("stem_and_head", std::vector<StaticLayer>{});
}

namespace {

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidShape("'" + path + "': " + e.what());
    }
}

template <typename T>
T parse_spec(const std::string& path) {
    const auto j = read_json_file(path);
    try {
        T v = j.get<T>();
        v.validate();
        return v;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidShape("'" + path + "': " + e.what());
    }
}

}  // namespace

HardwareSpec load_hardware(const std::string& path) { return parse_spec<HardwareSpec>(path); }

NetworkSpec load_network(const std::string& path) { return parse_spec<NetworkSpec>(path); }

}  // namespace dynlat
