#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "qkalign/tensor.hpp"

namespace qkalign {

enum class PeKind { FixedSinusoidal, Learnable };

std::string to_string(PeKind kind);
PeKind parse_pe_kind(const std::string& text);

struct GridSize {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t count() const { return height * width; }
  bool operator==(const GridSize&) const = default;
};

std::string to_string(const GridSize& grid);
// "HxW"
GridSize parse_grid(const std::string& text);

struct GridCell {
  std::size_t row = 0;
  std::size_t col = 0;
};

// Table rows follow row-major grid order: row index r*width + c.
struct PosEncoding {
  PeKind kind = PeKind::FixedSinusoidal;
  GridSize grid;
  std::size_t dim = 0;
  Tensor table;  // [H*W x D]
};

// First D/2 channels encode the row coordinate, the last D/2 the column.
// Within a half, channels (2i, 2i+1) hold sin/cos of coord * 10000^(-4i/D).
PosEncoding build_sinusoidal_2d(GridSize grid, std::size_t dim);

PosEncoding make_learnable_encoding(GridSize grid, std::size_t dim, std::mt19937_64& rng,
                                    double stddev = 0.02);

// Both inputs are the same tensor, tokens + table. Value projections take
// the raw tokens.
struct QueryKeyInputs {
  Tensor query;
  Tensor key;
};

QueryKeyInputs add_positional(const Tensor& tokens, const PosEncoding& pe);

struct DistanceMap {
  GridSize grid;
  GridCell anchor;
  std::vector<double> values;  // row-major over the grid

  double at(std::size_t row, std::size_t col) const { return values[row * grid.width + col]; }
};

DistanceMap pe_distance_map(const PosEncoding& pe, GridCell anchor);

// Mean distance over cells sharing the anchor's row or column (anchor
// excluded) versus all remaining cells.
struct AxisContrast {
  double on_axis_mean = 0.0;
  double off_axis_mean = 0.0;
};

AxisContrast axis_contrast(const DistanceMap& map);

}  // namespace qkalign
