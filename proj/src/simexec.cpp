// Copyright (C) 2026 The dynlat Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynlat/simexec.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <random>

#include <json.hpp>

#include "dynlat/error.hpp"

namespace dynlat {

Tensor::Tensor(int c_, int h_, int w_, float fill)
    : c(c_), h(h_), w(w_),
      data(static_cast<std::size_t>(c_) * static_cast<std::size_t>(h_) * static_cast<std::size_t>(w_),
           fill) {}

Tensor random_tensor(int c, int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    Tensor t(c, h, w);
    for (auto& v : t.data) v = dist(rng);
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.c != b.c || a.h != b.h || a.w != b.w) throw ShapeError("tensor shapes differ");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
    return m;
}

void save_tensor(const Tensor& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path + " for writing");
    const nlohmann::json header = {{"shape", {t.c, t.h, t.w}}, {"dtype", "float32"}};
    os << header.dump() << '\n';
    for (float v : t.data) {
        std::uint32_t bits = 0;
        std::memcpy(&bits, &v, sizeof bits);
        const unsigned char le[4] = {static_cast<unsigned char>(bits),
                                     static_cast<unsigned char>(bits >> 8),
                                     static_cast<unsigned char>(bits >> 16),
                                     static_cast<unsigned char>(bits >> 24)};
        os.write(reinterpret_cast<const char*>(le), 4);
    }
    if (!os) throw Error("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw NotFound("cannot open " + path);
    std::string line;
    std::getline(is, line);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw Error(path + ": bad tensor header: " + e.what());
    }
    if (header.value("dtype", "") != "float32") throw Error(path + ": dtype must be float32");
    const auto shape = header.at("shape").get<std::vector<int>>();
    if (shape.size() != 3 || shape[0] < 0 || shape[1] < 0 || shape[2] < 0)
        throw ShapeError(path + ": shape must be [c, h, w]");
    Tensor t(shape[0], shape[1], shape[2]);
    for (auto& v : t.data) {
        unsigned char le[4];
        if (!is.read(reinterpret_cast<char*>(le), 4)) throw ShapeError(path + ": payload too short");
        const std::uint32_t bits = static_cast<std::uint32_t>(le[0]) |
                                   (static_cast<std::uint32_t>(le[1]) << 8) |
                                   (static_cast<std::uint32_t>(le[2]) << 16) |
                                   (static_cast<std::uint32_t>(le[3]) << 24);
        std::memcpy(&v, &bits, sizeof v);
    }
    if (is.peek() != std::char_traits<char>::eof()) throw ShapeError(path + ": trailing bytes");
    return t;
}

ConvWeights random_conv_weights(const ConvLayerSpec& layer, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int fan_in = (layer.c_in / layer.groups) * layer.kernel * layer.kernel;
    const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
    std::uniform_real_distribution<float> dist(-bound, bound);
    ConvWeights cw{layer, std::vector<float>(static_cast<std::size_t>(layer.weight_count()))};
    for (auto& v : cw.w) v = dist(rng);
    return cw;
}

std::vector<float> masker_reduce_weights(const std::vector<float>& w2, int c_in) {
    if (c_in <= 0 || w2.size() != 2 * static_cast<std::size_t>(c_in))
        throw ShapeError("masker weights must be [2][c_in]");
    std::vector<float> w(static_cast<std::size_t>(c_in));
    for (int c = 0; c < c_in; ++c) w[c] = w2[c] - w2[c_in + c];
    return w;
}

BlockWeights random_block_weights(const BlockSpec& block, std::uint64_t seed) {
    BlockWeights b;
    b.conv1 = random_conv_weights(block.conv1, seed * 8 + 1);
    b.conv2 = random_conv_weights(block.conv2, seed * 8 + 2);
    b.conv3 = random_conv_weights(block.conv3, seed * 8 + 3);
    if (block.downsample) b.downsample = random_conv_weights(*block.downsample, seed * 8 + 4);
    std::mt19937_64 rng(seed * 8 + 5);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    std::vector<float> w2(2 * static_cast<std::size_t>(block.conv1.c_in));
    for (auto& v : w2) v = dist(rng);
    b.masker = masker_reduce_weights(w2, block.conv1.c_in);
    return b;
}

Tensor dense_conv(const Tensor& x, const ConvWeights& weights, const ConvLayerSpec& layer) {
    if (x.c != layer.c_in) throw ShapeError("dense_conv: input has " + std::to_string(x.c) +
                                            " channels, layer expects " + std::to_string(layer.c_in));
    if (weights.w.size() != static_cast<std::size_t>(layer.weight_count()))
        throw ShapeError("dense_conv: weight count does not match the layer");
    const int k = layer.kernel;
    const int pad = layer.padding();
    const int oh = layer.out_size(x.h);
    const int ow = layer.out_size(x.w);
    const int cpg = layer.c_in / layer.groups;
    const int opg = layer.c_out / layer.groups;
    Tensor y(layer.c_out, oh, ow);
    for (int co = 0; co < layer.c_out; ++co) {
        const int ci0 = (co / opg) * cpg;
        for (int i = 0; i < oh; ++i) {
            for (int j = 0; j < ow; ++j) {
                double acc = 0.0;
                for (int ci = 0; ci < cpg; ++ci) {
                    for (int dy = 0; dy < k; ++dy) {
                        const int r = i * layer.stride - pad + dy;
                        if (r < 0 || r >= x.h) continue;
                        for (int dx = 0; dx < k; ++dx) {
                            const int c = j * layer.stride - pad + dx;
                            if (c < 0 || c >= x.w) continue;
                            acc += static_cast<double>(weights.at(co, ci, dy, dx)) *
                                   x.at(ci0 + ci, r, c);
                        }
                    }
                }
                y.at(co, i, j) = static_cast<float>(acc);
            }
        }
    }
    return y;
}

namespace {

void relu_inplace(Tensor& t) {
    for (auto& v : t.data) v = std::max(v, 0.0f);
}

void require_executable(const BlockSpec& block) {
    block.validate();
    if (block.se_reduction) throw ShapeError("squeeze-excitation blocks are not executable");
}

}  // namespace

Tensor dense_block_forward(const Tensor& x, const BlockWeights& wts, const BlockSpec& block) {
    require_executable(block);
    if (x.c != block.conv1.c_in || x.h != block.input_h || x.w != block.input_w)
        throw ShapeError("input tensor does not match the block");
    Tensor y1 = dense_conv(x, wts.conv1, block.conv1);
    if (block.conv1.has_bn_act_fused) relu_inplace(y1);
    Tensor y2 = dense_conv(y1, wts.conv2, block.conv2);
    if (block.conv2.has_bn_act_fused) relu_inplace(y2);
    Tensor y3 = dense_conv(y2, wts.conv3, block.conv3);
    if (block.conv3.has_bn_act_fused) relu_inplace(y3);
    if (!block.has_residual) return y3;
    const Tensor res = block.downsample ? dense_conv(x, *wts.downsample, *block.downsample) : x;
    for (std::size_t i = 0; i < y3.data.size(); ++i) y3.data[i] += res.data[i];
    return y3;
}

namespace {

// N x C x H x W storage; N is the patch count for packed tensors, 1 otherwise.
struct Buffer {
    int n = 1, c = 1, h = 1, w = 1;
    std::vector<float> v;
    // Input-map position of each spatial site of a gathered buffer, -1 for padding.
    std::vector<long> origin;

    Buffer() = default;
    Buffer(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          v(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0f) {}

    std::size_t idx(int p, int ch, int r, int col) const {
        return ((static_cast<std::size_t>(p) * c + ch) * h + r) * w + col;
    }
};

// Weight lookup of one operator, [out channel][local in channel][dy][dx].
struct WeightView {
    int cpg = 0;
    int k = 1;
    const ConvWeights* conv = nullptr;
    const std::vector<float>* extra_row = nullptr;  // masker logit row
    int extra_channel = -1;

    bool present() const { return conv != nullptr || extra_row != nullptr; }
    std::int64_t per_channel() const { return static_cast<std::int64_t>(cpg) * k * k; }
    std::size_t flat(int co, int ci, int dy, int dx) const {
        return ((static_cast<std::size_t>(co) * cpg + ci) * k + dy) * k + dx;
    }
    float at(int co, int ci, int dy, int dx) const {
        if (co == extra_channel || conv == nullptr) return (*extra_row)[ci];
        return conv->at(co, ci, dy, dx);
    }
};

WeightView weights_for(const Operator& op, const BlockWeights& wts) {
    WeightView v;
    auto use = [&v](const ConvWeights& cw) {
        v.conv = &cw;
        v.cpg = cw.layer.c_in / cw.layer.groups;
        v.k = cw.layer.kernel;
    };
    if (op.name == "conv1") use(wts.conv1);
    else if (op.name == "conv2") use(wts.conv2);
    else if (op.name == "conv3") use(wts.conv3);
    else if (op.name == "downsample") use(*wts.downsample);
    else if (op.name == "masker_conv1") {
        use(wts.conv1);
        v.extra_row = &wts.masker;
        v.extra_channel = op.split_channel;
    } else if (op.name == "masker") {
        v.extra_row = &wts.masker;
        v.cpg = static_cast<int>(wts.masker.size());
        v.k = 1;
        v.extra_channel = 0;
    }
    return v;
}

// Per-tile record of what one input access pulled into local memory.
struct TileReads {
    std::vector<char> channels;
    long rmin = std::numeric_limits<long>::max(), rmax = std::numeric_limits<long>::min();
    long cmin = std::numeric_limits<long>::max(), cmax = std::numeric_limits<long>::min();

    void reset(int n_channels) {
        channels.assign(static_cast<std::size_t>(n_channels), 0);
        rmin = cmin = std::numeric_limits<long>::max();
        rmax = cmax = std::numeric_limits<long>::min();
    }
    std::int64_t elements_per_patch() const {
        if (rmax < rmin) return 0;
        const auto nch = std::count(channels.begin(), channels.end(), 1);
        return static_cast<std::int64_t>(nch) * (rmax - rmin + 1) * (cmax - cmin + 1);
    }
};

class OpRunner {
public:
    OpRunner(const Operator& op, std::map<std::string, Buffer>& bufs,
             const std::vector<PatchIndex>& patches, const BlockWeights& wts)
        : op_(op), bufs_(bufs), patches_(patches), wv_(weights_for(op, wts)) {}

    OpTraffic run(const TileShape& tile, const HardwareSpec& hw) {
        const auto n_p = static_cast<int>(op_.gathered ? patches_.size() : 1);
        prepare_output(n_p);
        for (const auto& a : op_.inputs) {
            const Buffer& b = bufs_.at(a.tensor);
            touched_.emplace_back(b.v.size(), 0);
        }
        if (wv_.present()) w_touched_.assign(static_cast<std::size_t>(op_.out_c * wv_.per_channel()), 0);

        if (n_p > 0) run_tiles(tile, hw, n_p);
        epilogue();

        std::int64_t in_unique = 0;
        for (const auto& t : touched_) in_unique += std::count(t.begin(), t.end(), 1);
        in_unique += std::count(w_touched_.begin(), w_touched_.end(), 1);
        tr_.off2on_bytes = in_unique * kElementBytes;
        tr_.on2off_bytes = std::count(written_.begin(), written_.end(), 1) * kElementBytes;
        tr_.global2local_bytes *= kElementBytes;
        tr_.local2global_bytes *= kElementBytes;
        return tr_;
    }

private:
    void prepare_output(int n_p) {
        const Output& o = op_.output;
        Buffer out;
        switch (o.layout) {
            case Layout::dense: out = Buffer(1, op_.out_c, o.map_h, o.map_w); break;
            case Layout::packed: out = Buffer(n_p, op_.out_c, o.map_h, o.map_w); break;
            case Layout::patches:
                if (o.zero_init) {
                    out = Buffer(1, op_.out_c, o.map_h, o.map_w);
                } else {
                    // in place on the map the op reads through patches
                    const auto it = std::find_if(op_.inputs.begin(), op_.inputs.end(),
                                                 [](const Access& a) { return a.layout == Layout::patches; });
                    if (it == op_.inputs.end()) throw ShapeError(op_.name + ": no map to update in place");
                    out = bufs_.at(it->tensor);
                }
                break;
        }
        if (op_.kind == OpKind::gather && o.layout == Layout::packed)
            out.origin.assign(static_cast<std::size_t>(out.n) * out.h * out.w, -1);
        written_.assign(out.v.size(), 0);
        if (o.zero_init) std::fill(written_.begin(), written_.end(), 1);
        out_name_ = o.tensor;
        staged_ = std::move(out);
    }

    float read(std::size_t input, int p, int ch, long rr, long cc) {
        const Access& a = op_.inputs[input];
        TileReads& tr = reads_[input];
        tr.channels[static_cast<std::size_t>(ch)] = 1;
        tr.rmin = std::min(tr.rmin, rr);
        tr.rmax = std::max(tr.rmax, rr);
        tr.cmin = std::min(tr.cmin, cc);
        tr.cmax = std::max(tr.cmax, cc);

        long r = rr;
        long c = cc;
        int bp = 0;
        if (a.layout == Layout::packed) {
            bp = p;
        } else if (a.layout == Layout::patches) {
            r += static_cast<long>(a.pitch) * patches_[static_cast<std::size_t>(p)].row;
            c += static_cast<long>(a.pitch) * patches_[static_cast<std::size_t>(p)].col;
        }
        last_origin_ = -1;
        if (r < 0 || r >= a.src_h || c < 0 || c >= a.src_w) return 0.0f;
        const Buffer& b = bufs_.at(a.tensor);
        const std::size_t i = b.idx(bp, ch, static_cast<int>(r), static_cast<int>(c));
        last_origin_ = b.origin.empty()
                           ? r * a.src_w + c
                           : b.origin[(static_cast<std::size_t>(bp) * b.h + r) * b.w + c];
        touched_[input][i] = 1;
        return b.v[i];
    }

    float weight(int co, int ci, int dy, int dx) {
        w_touched_[wv_.flat(co, ci, dy, dx)] = 1;
        return wv_.at(co, ci, dy, dx);
    }

    void write(int p, int ch, int i, int j, float value) {
        const Output& o = op_.output;
        std::size_t idx = 0;
        switch (o.layout) {
            case Layout::dense: idx = staged_.idx(0, ch, i, j); break;
            case Layout::packed: idx = staged_.idx(p, ch, i, j); break;
            case Layout::patches: {
                const auto& pi = patches_[static_cast<std::size_t>(p)];
                idx = staged_.idx(0, ch, o.pitch * pi.row + i, o.pitch * pi.col + j);
                break;
            }
        }
        staged_.v[idx] = value;
        written_[idx] = 1;
        if (!staged_.origin.empty())
            staged_.origin[(static_cast<std::size_t>(p) * staged_.h + i) * staged_.w + j] = last_origin_;
        ++tr_.local2global_bytes;
    }

    float compute(int p, int c, int i, int j) {
        switch (op_.kind) {
            case OpKind::static_conv:
            case OpKind::dyn_conv: return conv_value(p, c, i, j);
            case OpKind::masker: return masker_value(p, i, j);
            case OpKind::gather:
            case OpKind::scatter: {
                const Access& a = op_.inputs[0];
                return read(0, p, c, a.offset + a.stride * i, a.offset + a.stride * j);
            }
            case OpKind::scatter_add:
            case OpKind::elementwise: {
                if (op_.inputs.size() != 2) throw ShapeError(op_.name + ": not executable");
                const Access& a = op_.inputs[0];
                const Access& b = op_.inputs[1];
                return read(0, p, c, a.offset + a.stride * i, a.offset + a.stride * j) +
                       read(1, p, c, b.offset + b.stride * i, b.offset + b.stride * j);
            }
        }
        return 0.0f;
    }

    float conv_value(int p, int c, int i, int j) {
        const Access& a = op_.inputs[0];
        int ci0 = 0;
        int n_ci = a.channels;
        if (a.cmap == ChannelMap::grouped) {
            const int opg = op_.out_c / a.groups;
            n_ci = a.channels / a.groups;
            ci0 = (c / opg) * n_ci;
        } else if (a.cmap == ChannelMap::identity) {
            ci0 = c;
            n_ci = 1;
        }
        double acc = 0.0;
        for (int ci = 0; ci < n_ci; ++ci) {
            for (int dy = 0; dy < a.kernel; ++dy) {
                for (int dx = 0; dx < a.kernel; ++dx) {
                    const float x = read(0, p, ci0 + ci, a.offset + a.stride * i + dy,
                                         a.offset + a.stride * j + dx);
                    acc += static_cast<double>(weight(c, ci, dy, dx)) * x;
                    ++tr_.mac_count;
                }
            }
        }
        if (op_.name == "conv1") count_distinct(c, static_cast<std::int64_t>(n_ci) * a.kernel * a.kernel);
        float y = static_cast<float>(acc);
        if (op_.relu && (op_.split_channel < 0 || c < op_.split_channel)) y = std::max(y, 0.0f);
        return y;
    }

    float masker_value(int p, int i, int j) {
        const Access& a = op_.inputs[0];
        const double area = static_cast<double>(a.kernel) * a.kernel;
        double logit = 0.0;
        for (int ci = 0; ci < a.channels; ++ci) {
            double pooled = 0.0;
            for (int dy = 0; dy < a.kernel; ++dy) {
                for (int dx = 0; dx < a.kernel; ++dx) {
                    pooled += read(0, p, ci, a.offset + a.stride * i + dy, a.offset + a.stride * j + dx);
                    ++tr_.mac_count;
                }
            }
            logit += static_cast<double>(weight(0, ci, 0, 0)) * (pooled / area);
            ++tr_.mac_count;
        }
        return static_cast<float>(logit);
    }

    // The gathered conv1 recomputes overlapping halos and padding; only the
    // first in-bounds evaluation of a (channel, position) is distinct work.
    void count_distinct(int c, std::int64_t macs) {
        if (seen_.empty()) {
            const Buffer& x = bufs_.at("x");
            seen_.assign(static_cast<std::size_t>(op_.out_c) * x.h * x.w, 0);
            map_area_ = static_cast<std::size_t>(x.h) * x.w;
        }
        if (last_origin_ >= 0) {
            char& s = seen_[static_cast<std::size_t>(c) * map_area_ + static_cast<std::size_t>(last_origin_)];
            if (!s) {
                s = 1;
                return;
            }
        }
        repeated_macs_ += macs;
    }

    void run_tiles(const TileShape& t, const HardwareSpec& hw, int n_p) {
        const auto tp = static_cast<int>(t.t_p), tc = static_cast<int>(t.t_c);
        const auto t1 = static_cast<int>(t.t_s1), t2 = static_cast<int>(t.t_s2);
        auto count = [](int extent, int step) { return (extent + step - 1) / step; };
        const std::int64_t n_tiles = static_cast<std::int64_t>(count(op_.out_c, tc)) *
                                     count(n_p, tp) * count(op_.e1, t1) * count(op_.e2, t2);
        const std::int64_t pes = std::min<std::int64_t>(hw.num_pe, n_tiles);
        const std::int64_t q = n_tiles / pes;
        const std::int64_t rem = n_tiles % pes;
        auto pe_of = [&](std::int64_t k) {
            const std::int64_t big = rem * (q + 1);
            return k < big ? k / (q + 1) : rem + (k - big) / q;
        };
        std::vector<std::vector<char>> loaded(static_cast<std::size_t>(pes),
                                              std::vector<char>(static_cast<std::size_t>(count(op_.out_c, tc)), 0));

        reads_.resize(op_.inputs.size());
        std::int64_t k = 0;
        for (int c0 = 0; c0 < op_.out_c; c0 += tc) {
            const int c1 = std::min(op_.out_c, c0 + tc);
            for (int p0 = 0; p0 < n_p; p0 += tp) {
                const int p1 = std::min(n_p, p0 + tp);
                for (int i0 = 0; i0 < op_.e1; i0 += t1) {
                    for (int j0 = 0; j0 < op_.e2; j0 += t2, ++k) {
                        const auto pe = static_cast<std::size_t>(pe_of(k));
                        auto& chunk_loaded = loaded[pe][static_cast<std::size_t>(c0 / tc)];
                        if (wv_.present() && !chunk_loaded) {
                            chunk_loaded = 1;
                            tr_.global2local_bytes += (c1 - c0) * wv_.per_channel();
                        }
                        for (std::size_t in = 0; in < op_.inputs.size(); ++in)
                            reads_[in].reset(op_.inputs[in].channels);
                        for (int c = c0; c < c1; ++c)
                            for (int p = p0; p < p1; ++p)
                                for (int i = i0; i < std::min(op_.e1, i0 + t1); ++i)
                                    for (int j = j0; j < std::min(op_.e2, j0 + t2); ++j)
                                        write(p, c, i, j, compute(p, c, i, j));
                        for (const auto& r : reads_)
                            tr_.global2local_bytes += r.elements_per_patch() * (p1 - p0);
                    }
                }
            }
        }
        tr_.n_tiles = n_tiles;
    }

    // Work outside the tiled loop: pooling the fused mask channel.
    void epilogue() {
        if (op_.split_channel < 0) return;
        double sum = 0.0;
        for (int r = 0; r < staged_.h; ++r)
            for (int c = 0; c < staged_.w; ++c) {
                sum += staged_.v[staged_.idx(0, op_.split_channel, r, c)];
                ++tr_.mac_count;
            }
        mask_logit_sum_ = sum;
    }

public:
    std::int64_t repeated_macs() const { return repeated_macs_; }
    Buffer take_output() { return std::move(staged_); }
    const std::string& output_name() const { return out_name_; }

private:
    const Operator& op_;
    std::map<std::string, Buffer>& bufs_;
    const std::vector<PatchIndex>& patches_;
    WeightView wv_;
    OpTraffic tr_;
    Buffer staged_;
    std::string out_name_;
    std::vector<char> written_;
    std::vector<std::vector<char>> touched_;
    std::vector<char> w_touched_;
    std::vector<TileReads> reads_;
    double mask_logit_sum_ = 0.0;
    long last_origin_ = -1;
    std::vector<char> seen_;
    std::size_t map_area_ = 0;
    std::int64_t repeated_macs_ = 0;
};

}  // namespace

Tensor dynamic_block_forward(const Tensor& x, const BlockWeights& wts, const BlockSpec& block,
                             const CoarseMask& coarse, const FusionPlan& fusion,
                             const HardwareSpec& hw, TrafficTrace* trace) {
    require_executable(block);
    if (x.c != block.conv1.c_in || x.h != block.input_h || x.w != block.input_w)
        throw ShapeError("input tensor does not match the block");
    if (coarse.grid.rows() != block.cells_h() || coarse.grid.cols() != block.cells_w())
        throw ShapeError("mask grid " + std::to_string(coarse.grid.rows()) + "x" +
                         std::to_string(coarse.grid.cols()) + " does not match block cells " +
                         std::to_string(block.cells_h()) + "x" + std::to_string(block.cells_w()));

    const auto patches = patch_indices(coarse).indices;
    const Workload w = Workload::from_mask(block, coarse);

    std::map<std::string, Buffer> bufs;
    Buffer xb(1, x.c, x.h, x.w);
    xb.v = x.data;
    bufs["x"] = std::move(xb);

    TrafficTrace local;
    for (const auto& op : rewrite_block(block, fusion)) {
        const TileShape tile = predict_op_latency(op, w, hw).chosen_tile;
        OpRunner runner(op, bufs, patches, wts);
        const OpTraffic t = runner.run(tile, hw);
        local.per_op.emplace_back(op.name, t);
        local.total += t;
        local.distinct_macs += t.mac_count - runner.repeated_macs();
        bufs[runner.output_name()] = runner.take_output();
    }
    if (trace != nullptr) *trace = std::move(local);

    const Buffer& out = bufs.at("out");
    Tensor y(out.c, out.h, out.w);
    y.data = out.v;
    return y;
}

bool TrafficReport::ok() const {
    return std::all_of(per_op.begin(), per_op.end(), [](const TrafficDelta& d) { return d.match(); });
}

TrafficReport verify_traffic(const BlockSpec& block, const CoarseMask& coarse,
                             const FusionPlan& fusion, const HardwareSpec& hw,
                             const VerifyOptions& opt) {
    const Tensor x = random_tensor(block.conv1.c_in, block.input_h, block.input_w, opt.seed);
    const BlockWeights wts = random_block_weights(block, opt.seed + 1);
    TrafficTrace trace;
    dynamic_block_forward(x, wts, block, coarse, fusion, hw, &trace);

    const Workload w = Workload::from_mask(block, coarse);
    const auto ops = rewrite_block(block, fusion);
    auto rescale = [&opt](std::int64_t bytes) { return bytes / kElementBytes * opt.model_element_bytes; };

    TrafficReport rep;
    for (std::size_t i = 0; i < ops.size(); ++i) {
        const TileShape tile = predict_op_latency(ops[i], w, hw).chosen_tile;
        OpTraffic m = op_traffic(ops[i], tile, w, hw);
        m.off2on_bytes = rescale(m.off2on_bytes);
        m.global2local_bytes = rescale(m.global2local_bytes);
        m.local2global_bytes = rescale(m.local2global_bytes);
        m.on2off_bytes = rescale(m.on2off_bytes);
        rep.per_op.push_back({ops[i].name, m, trace.per_op[i].second});
        rep.model_total += m;
        rep.traced_total += trace.per_op[i].second;
    }
    return rep;
}

BlockSpec random_desk_block(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto pick = [&rng](std::initializer_list<int> v) {
        std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
        return *(v.begin() + static_cast<std::ptrdiff_t>(d(rng)));
    };
    BlockSpec b;
    const int stride = pick({1, 1, 2});
    const int out = stride == 1 ? pick({4, 6, 8, 12, 16}) : pick({4, 6, 8});
    const int c_in = pick({4, 8, 16, 32});
    const int mid = pick({4, 8, 16});
    const int groups = pick({1, 1, 2, mid});
    const bool residual = pick({1, 1, 1, 0}) == 1;
    const bool widen = stride == 2 || pick({0, 0, 1}) == 1;
    const int c_out = residual && !widen ? c_in : pick({8, 16, 32});

    b.input_h = b.input_w = out * stride;
    b.conv1 = {c_in, mid, 1, 1, 1, true};
    b.conv2 = {mid, mid, 3, stride, groups, true};
    b.conv3 = {mid, c_out, 1, 1, 1, false};
    b.has_residual = residual;
    if (residual && (c_out != c_in || stride != 1)) b.downsample = ConvLayerSpec{c_in, c_out, 1, stride, 1, false};

    std::vector<int> s_opts;
    for (int s = 1; s <= out; ++s)
        if (out % s == 0) s_opts.push_back(s);
    std::uniform_int_distribution<std::size_t> ds(0, s_opts.size() - 1);
    b.granularity = s_opts[ds(rng)];
    b.validate();
    return b;
}

std::vector<VerifyCase> default_verify_suite(std::uint64_t seed) {
    std::vector<VerifyCase> cases;
    const double rates[] = {0.0, 0.3, 0.6, 1.0};
    for (int bi = 0; bi < 4; ++bi) {
        const BlockSpec block = random_desk_block(seed * 101 + bi);
        for (int ri = 0; ri < 4; ++ri) {
            const CoarseMask mask = synth_mask(block.cells_h(), block.cells_w(), rates[ri],
                                               seed * 1009 + bi * 4 + ri, block.granularity);
            for (int f = 0; f < 8; ++f) {
                const FusionPlan plan{(f & 4) != 0, (f & 2) != 0, (f & 1) != 0};
                cases.push_back({"b" + std::to_string(bi) + "-r" + std::to_string(rates[ri]).substr(0, 3) +
                                     "-" + to_string(plan),
                                 block, mask, plan});
            }
        }
    }
    return cases;
}

}  // namespace dynlat
