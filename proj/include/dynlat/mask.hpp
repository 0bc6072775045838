// Copyright (C) 2026 The dynlat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace dynlat {

// Row-major binary grid.
class BinaryGrid {
public:
    BinaryGrid() = default;
    BinaryGrid(int rows, int cols, std::uint8_t fill = 0);
    // Throws DomainError if any entry is not 0/1 or the size is wrong.
    BinaryGrid(int rows, int cols, std::vector<std::uint8_t> cells);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::int64_t size() const { return static_cast<std::int64_t>(rows_) * cols_; }
    bool empty() const { return size() == 0; }

    std::uint8_t at(int r, int c) const { return cells_[index(r, c)]; }
    void set(int r, int c, bool v) { cells_[index(r, c)] = v ? 1 : 0; }

    std::int64_t count() const;
    const std::vector<std::uint8_t>& cells() const { return cells_; }

    bool operator==(const BinaryGrid&) const = default;

private:
    std::size_t index(int r, int c) const {
        return static_cast<std::size_t>(r) * static_cast<std::size_t>(cols_) +
               static_cast<std::size_t>(c);
    }

    int rows_ = 0;
    int cols_ = 0;
    std::vector<std::uint8_t> cells_;
};

// One decision per S x S output patch.
struct CoarseMask {
    BinaryGrid grid;
    int s = 1;

    bool operator==(const CoarseMask&) const = default;
};

// Pixel-level mask on the block output grid.
struct SpatialMask {
    BinaryGrid grid;

    bool operator==(const SpatialMask&) const = default;
};

// Per-location two-way distribution plus explicit Gumbel noise. Layout is
// (row, col, channel) with channel fastest.
struct SoftMask {
    int rows = 0;
    int cols = 0;
    std::vector<double> probs;
    std::vector<double> gumbel_noise;
    double tau = 1.0;
};

struct PatchIndex {
    int row = 0;
    int col = 0;
    bool operator==(const PatchIndex&) const = default;
    auto operator<=>(const PatchIndex&) const = default;
};

struct PatchIndexList {
    std::vector<PatchIndex> indices;
    std::int64_t total_cells = 0;
};

// Fraction of ones. Throws DomainError on an empty mask.
double activation_rate(const BinaryGrid& grid);
inline double activation_rate(const CoarseMask& m) { return activation_rate(m.grid); }
inline double activation_rate(const SpatialMask& m) { return activation_rate(m.grid); }

// Nearest-neighbour replication by the mask's granularity.
SpatialMask upsample(const CoarseMask& coarse);

PatchIndexList patch_indices(const CoarseMask& coarse);

// Relaxed decision for channel 0 at every location, row-major.
std::vector<double> gumbel_forward(const SoftMask& soft);

// Standard Gumbel(0, 1) samples, rows x cols x 2, from a seeded generator.
std::vector<double> sample_gumbel(int rows, int cols, std::uint64_t seed);

// Exponential decay from 5.0 at step 0 to 0.1 at the last step.
double tau_schedule(std::int64_t step, std::int64_t total_steps);

// Uniformly placed mask with round(target_r * cells) ones.
CoarseMask synth_mask(int h_cells, int w_cells, double target_r, std::uint64_t seed, int s = 1);

// Run-length text: "<rows>x<cols>:" followed by space-separated "<bit>*<run>".
std::string to_rle(const BinaryGrid& grid);
BinaryGrid from_rle(const std::string& text);

void to_json(nlohmann::json& j, const BinaryGrid& g);
void from_json(const nlohmann::json& j, BinaryGrid& g);
void to_json(nlohmann::json& j, const CoarseMask& m);
void from_json(const nlohmann::json& j, CoarseMask& m);

}  // namespace dynlat
