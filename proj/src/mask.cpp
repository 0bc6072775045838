// Copyright (C) 2026 The dynlat Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynlat/mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "dynlat/error.hpp"

namespace dynlat {

BinaryGrid::BinaryGrid(int rows, int cols, std::uint8_t fill)
    : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) throw DomainError("negative grid size");
    if (fill > 1) throw DomainError("grid entries must be 0 or 1");
    cells_.assign(static_cast<std::size_t>(size()), fill);
}

BinaryGrid::BinaryGrid(int rows, int cols, std::vector<std::uint8_t> cells)
    : rows_(rows), cols_(cols), cells_(std::move(cells)) {
    if (rows < 0 || cols < 0) throw DomainError("negative grid size");
    if (static_cast<std::int64_t>(cells_.size()) != size())
        throw DomainError("grid data length does not match its shape");
    if (std::any_of(cells_.begin(), cells_.end(), [](std::uint8_t v) { return v > 1; }))
        throw DomainError("grid entries must be 0 or 1");
}

std::int64_t BinaryGrid::count() const {
    return std::accumulate(cells_.begin(), cells_.end(), std::int64_t{0});
}

double activation_rate(const BinaryGrid& grid) {
    if (grid.empty()) throw DomainError("activation rate of an empty mask");
    return static_cast<double>(grid.count()) / static_cast<double>(grid.size());
}

SpatialMask upsample(const CoarseMask& coarse) {
    const int s = coarse.s;
    if (s < 1) throw DomainError("granularity must be positive");
    const auto& g = coarse.grid;
    BinaryGrid out(g.rows() * s, g.cols() * s);
    for (int r = 0; r < out.rows(); ++r)
        for (int c = 0; c < out.cols(); ++c) out.set(r, c, g.at(r / s, c / s) != 0);
    return SpatialMask{std::move(out)};
}

PatchIndexList patch_indices(const CoarseMask& coarse) {
    PatchIndexList list;
    list.total_cells = coarse.grid.size();
    for (int r = 0; r < coarse.grid.rows(); ++r)
        for (int c = 0; c < coarse.grid.cols(); ++c)
            if (coarse.grid.at(r, c)) list.indices.push_back({r, c});
    return list;
}

std::vector<double> gumbel_forward(const SoftMask& soft) {
    const auto n = static_cast<std::size_t>(soft.rows) * static_cast<std::size_t>(soft.cols);
    if (soft.probs.size() != 2 * n || soft.gumbel_noise.size() != 2 * n)
        throw ShapeError("soft mask buffers do not match rows x cols x 2");
    if (!(soft.tau > 0.0)) throw DomainError("temperature must be positive");

    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double p0 = soft.probs[2 * i];
        const double p1 = soft.probs[2 * i + 1];
        if (!(p0 > 0.0) || !(p1 > 0.0))
            throw DomainError("soft mask probabilities must be strictly positive");
        const double a = (std::log(p0) + soft.gumbel_noise[2 * i]) / soft.tau;
        const double b = (std::log(p1) + soft.gumbel_noise[2 * i + 1]) / soft.tau;
        // exp(a) / (exp(a) + exp(b)) evaluated without overflow.
        out[i] = 1.0 / (1.0 + std::exp(b - a));
    }
    return out;
}

std::vector<double> sample_gumbel(int rows, int cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::extreme_value_distribution<double> gumbel(0.0, 1.0);
    std::vector<double> g(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * 2);
    for (auto& v : g) v = gumbel(rng);
    return g;
}

double tau_schedule(std::int64_t step, std::int64_t total_steps) {
    constexpr double kStart = 5.0;
    constexpr double kEnd = 0.1;
    if (total_steps < 2) throw DomainError("tau schedule needs at least two steps");
    if (step < 0 || step >= total_steps) throw DomainError("tau schedule step out of range");
    if (step == 0) return kStart;
    if (step == total_steps - 1) return kEnd;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps - 1);
    return kStart * std::pow(kEnd / kStart, frac);
}

CoarseMask synth_mask(int h_cells, int w_cells, double target_r, std::uint64_t seed, int s) {
    if (!(target_r >= 0.0 && target_r <= 1.0)) throw DomainError("target rate outside [0, 1]");
    BinaryGrid grid(h_cells, w_cells);
    const auto cells = static_cast<std::size_t>(grid.size());
    const auto ones = static_cast<std::size_t>(std::llround(target_r * static_cast<double>(cells)));

    std::vector<std::size_t> order(cells);
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Partial Fisher-Yates with an explicit engine so results do not depend
    // on the standard library's shuffle implementation.
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < ones; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (cells - i));
        std::swap(order[i], order[j]);
        const int idx = static_cast<int>(order[i]);
        grid.set(idx / w_cells, idx % w_cells, true);
    }
    return CoarseMask{std::move(grid), s};
}

std::string to_rle(const BinaryGrid& grid) {
    std::ostringstream os;
    os << grid.rows() << 'x' << grid.cols() << ':';
    const auto& c = grid.cells();
    std::size_t i = 0;
    while (i < c.size()) {
        std::size_t j = i;
        while (j < c.size() && c[j] == c[i]) ++j;
        os << ' ' << static_cast<int>(c[i]) << '*' << (j - i);
        i = j;
    }
    return os.str();
}

BinaryGrid from_rle(const std::string& text) {
    std::istringstream is(text);
    int rows = 0;
    int cols = 0;
    char x = 0;
    char colon = 0;
    if (!(is >> rows >> x >> cols >> colon) || x != 'x' || colon != ':')
        throw DomainError("malformed run-length header");
    std::vector<std::uint8_t> cells;
    std::string tok;
    while (is >> tok) {
        const auto star = tok.find('*');
        if (star == std::string::npos || star == 0) throw DomainError("malformed run '" + tok + "'");
        int bit = 0;
        long long run = 0;
        try {
            bit = std::stoi(tok.substr(0, star));
            run = std::stoll(tok.substr(star + 1));
        } catch (const std::exception&) {
            throw DomainError("malformed run '" + tok + "'");
        }
        if ((bit != 0 && bit != 1) || run <= 0) throw DomainError("malformed run '" + tok + "'");
        cells.insert(cells.end(), static_cast<std::size_t>(run), static_cast<std::uint8_t>(bit));
    }
    return BinaryGrid(rows, cols, std::move(cells));
}

void to_json(nlohmann::json& j, const BinaryGrid& g) {
    j = nlohmann::json::array();
    for (int r = 0; r < g.rows(); ++r) {
        auto row = nlohmann::json::array();
        for (int c = 0; c < g.cols(); ++c) row.push_back(static_cast<int>(g.at(r, c)));
        j.push_back(std::move(row));
    }
}

void from_json(const nlohmann::json& j, BinaryGrid& g) {
    if (!j.is_array()) throw DomainError("mask JSON must be an array of rows");
    const int rows = static_cast<int>(j.size());
    const int cols = rows > 0 ? static_cast<int>(j[0].size()) : 0;
    std::vector<std::uint8_t> cells;
    cells.reserve(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
    for (const auto& row : j) {
        if (!row.is_array() || static_cast<int>(row.size()) != cols)
            throw DomainError("mask JSON rows have unequal length");
        for (const auto& v : row) {
            const int bit = v.get<int>();
            if (bit != 0 && bit != 1) throw DomainError("mask entries must be 0 or 1");
            cells.push_back(static_cast<std::uint8_t>(bit));
        }
    }
    g = BinaryGrid(rows, cols, std::move(cells));
}

void to_json(nlohmann::json& j, const CoarseMask& m) { j = {{"s", m.s}, {"grid", m.grid}}; }

void from_json(const nlohmann::json& j, CoarseMask& m) {
    j.at("s").get_to(m.s);
    j.at("grid").get_to(m.grid);
}

}  // namespace dynlat
