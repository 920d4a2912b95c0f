#include "qkalign/positional.hpp"

#include <cmath>
#include <sstream>

#include "qkalign/error.hpp"

namespace qkalign {

std::string to_string(PeKind kind) {
  return kind == PeKind::FixedSinusoidal ? "fixed" : "learnable";
}

PeKind parse_pe_kind(const std::string& text) {
  if (text == "fixed" || text == "fixed-sinusoidal" || text == "sinusoidal") return PeKind::FixedSinusoidal;
  if (text == "learnable") return PeKind::Learnable;
  throw ConfigError("unknown positional encoding kind '" + text + "' (expected fixed|learnable)");
}

std::string to_string(const GridSize& grid) {
  return std::to_string(grid.height) + "x" + std::to_string(grid.width);
}

GridSize parse_grid(const std::string& text) {
  auto x = text.find('x');
  if (x == std::string::npos) throw ConfigError("grid '" + text + "' is not of the form HxW");
  try {
    std::size_t used = 0;
    GridSize g;
    g.height = std::stoul(text.substr(0, x), &used);
    if (used != x) throw std::invalid_argument("height");
    const std::string w = text.substr(x + 1);
    g.width = std::stoul(w, &used);
    if (used != w.size()) throw std::invalid_argument("width");
    if (g.height == 0 || g.width == 0) throw std::invalid_argument("zero");
    return g;
  } catch (const std::exception&) {
    throw ConfigError("grid '" + text + "' is not of the form HxW");
  }
}

PosEncoding build_sinusoidal_2d(GridSize grid, std::size_t dim) {
  if (dim == 0 || dim % 4 != 0) {
    throw ContractError("sinusoidal encoding needs a dimension divisible by 4, got " + std::to_string(dim));
  }
  if (grid.count() == 0) throw ContractError("sinusoidal encoding needs a non-empty grid");
  const std::size_t half = dim / 2;
  const std::size_t pairs = dim / 4;
  std::vector<double> freq(pairs);
  for (std::size_t i = 0; i < pairs; ++i) {
    freq[i] = std::pow(10000.0, -4.0 * static_cast<double>(i) / static_cast<double>(dim));
  }
  std::vector<double> table(grid.count() * dim);
  for (std::size_t r = 0; r < grid.height; ++r) {
    for (std::size_t c = 0; c < grid.width; ++c) {
      double* row = table.data() + (r * grid.width + c) * dim;
      for (std::size_t i = 0; i < pairs; ++i) {
        const double ar = static_cast<double>(r) * freq[i];
        const double ac = static_cast<double>(c) * freq[i];
        row[2 * i] = std::sin(ar);
        row[2 * i + 1] = std::cos(ar);
        row[half + 2 * i] = std::sin(ac);
        row[half + 2 * i + 1] = std::cos(ac);
      }
    }
  }
  return {PeKind::FixedSinusoidal, grid, dim, Tensor({grid.count(), dim}, std::move(table))};
}

PosEncoding make_learnable_encoding(GridSize grid, std::size_t dim, std::mt19937_64& rng,
                                    double stddev) {
  if (dim == 0 || grid.count() == 0) throw ContractError("learnable encoding needs a non-empty table");
  std::normal_distribution<double> normal(0.0, stddev);
  std::vector<double> table(grid.count() * dim);
  for (auto& v : table) v = normal(rng);
  return {PeKind::Learnable, grid, dim, Tensor({grid.count(), dim}, std::move(table), true)};
}

QueryKeyInputs add_positional(const Tensor& tokens, const PosEncoding& pe) {
  if (tokens.rank() != 2 || tokens.rows() != pe.grid.count() || tokens.cols() != pe.dim) {
    throw DimensionError("add_positional: tokens " + shape_str(tokens.shape()) +
                         " do not match encoding grid " + to_string(pe.grid) + " x " +
                         std::to_string(pe.dim));
  }
  Tensor shifted = add(tokens, pe.table);
  return {shifted, shifted};
}

DistanceMap pe_distance_map(const PosEncoding& pe, GridCell anchor) {
  if (anchor.row >= pe.grid.height || anchor.col >= pe.grid.width) {
    throw ContractError("pe_distance_map: anchor (" + std::to_string(anchor.row) + "," +
                        std::to_string(anchor.col) + ") outside grid " + to_string(pe.grid));
  }
  const auto table = pe.table.data();
  const std::size_t d = pe.dim;
  const double* a = table.data() + (anchor.row * pe.grid.width + anchor.col) * d;
  DistanceMap map{pe.grid, anchor, std::vector<double>(pe.grid.count())};
  for (std::size_t k = 0; k < pe.grid.count(); ++k) {
    const double* b = table.data() + k * d;
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    map.values[k] = std::sqrt(s);
  }
  return map;
}

AxisContrast axis_contrast(const DistanceMap& map) {
  double on = 0.0, off = 0.0;
  std::size_t n_on = 0, n_off = 0;
  for (std::size_t r = 0; r < map.grid.height; ++r) {
    for (std::size_t c = 0; c < map.grid.width; ++c) {
      if (r == map.anchor.row && c == map.anchor.col) continue;
      if (r == map.anchor.row || c == map.anchor.col) {
        on += map.at(r, c);
        ++n_on;
      } else {
        off += map.at(r, c);
        ++n_off;
      }
    }
  }
  return {n_on ? on / static_cast<double>(n_on) : 0.0, n_off ? off / static_cast<double>(n_off) : 0.0};
}

}  // namespace qkalign
