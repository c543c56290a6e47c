#pragma once

#include <Eigen/Core>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "quadloco/config.hpp"
#include "quadloco/rng.hpp"

// Tiled procedural heightfield. The map is a tile_rows x tile_cols grid of
// square tiles; every row holds a single terrain family and difficulty grows
// along the row (column index -> level 0..9). Tiles are pyramid-shaped
// (rising toward a flat central platform) so both ascent and descent are
// present and tiles meet at zero elevation on their borders.

namespace quadloco {

enum class TerrainType { Slope = 0, RoughSlope = 1, Stairs = 2, DiscreteObstacles = 3 };

inline const char* terrain_name(TerrainType t) {
  switch (t) {
    case TerrainType::Slope: return "slope";
    case TerrainType::RoughSlope: return "rough";
    case TerrainType::Stairs: return "stairs";
    case TerrainType::DiscreteObstacles: return "obstacles";
  }
  return "?";
}

struct TileParams {
  double slope_rad = 0.0;      // slopes and rough slopes
  double noise_amp = 0.0;      // rough slopes, m
  double step_height = 0.0;    // stairs, m
  Interval step_width{0.20, 0.40};  // stairs tread, sampled per tile
  double obstacle_amp = 0.0;   // discrete obstacles, m
};

// Difficulty-level parameterization of the four terrain families.
inline TileParams tile_params(TerrainType type, int level) {
  if (level < 0 || level > 9)
    throw std::out_of_range("terrain level must be in 0..9");
  const double l = static_cast<double>(level) / 9.0;
  TileParams p;
  switch (type) {
    case TerrainType::Slope:
      p.slope_rad = 40.0 * l * M_PI / 180.0;
      break;
    case TerrainType::RoughSlope:
      p.slope_rad = 40.0 * l * M_PI / 180.0;
      p.noise_amp = (1.0 + 7.0 * l) * 0.01;
      break;
    case TerrainType::Stairs:
      p.step_height = (5.0 + 18.0 * l) * 0.01;
      break;
    case TerrainType::DiscreteObstacles:
      p.obstacle_amp = (5.0 + 10.0 * l) * 0.01;
      break;
  }
  return p;
}

struct TileMeta {
  TerrainType type = TerrainType::Slope;
  int level = 0;
};

class HeightField {
 public:
  int node_rows = 0, node_cols = 0;   // grid nodes along x and y
  double cell_size = 0.05;
  int tile_rows = 0, tile_cols = 0;
  double tile_side = 10.0;
  std::vector<float> grid;            // node-major: grid[i * node_cols + j]
  std::vector<TileMeta> meta;         // tile-major: meta[r * tile_cols + c]

  double size_x() const { return (node_rows - 1) * cell_size; }
  double size_y() const { return (node_cols - 1) * cell_size; }

  float& node(int i, int j) { return grid[static_cast<size_t>(i) * node_cols + j]; }
  float node(int i, int j) const { return grid[static_cast<size_t>(i) * node_cols + j]; }

  const TileMeta& tile(int r, int c) const { return meta[static_cast<size_t>(r) * tile_cols + c]; }

  Eigen::Vector2d tile_center(int r, int c) const {
    return {(r + 0.5) * tile_side, (c + 0.5) * tile_side};
  }

  // Bilinear interpolation of the four surrounding nodes.
  double height_at(double x, double y) const {
    if (x < 0 || y < 0 || x > size_x() || y > size_y())
      throw std::out_of_range("height query outside field bounds");
    return sample(x, y);
  }

  // Out-of-field queries clamp to the field edge; non-finite queries
  // (blown-up envs) read as flat ground.
  double height_at_clamped(double x, double y) const {
    if (!std::isfinite(x) || !std::isfinite(y)) return 0.0;
    x = std::clamp(x, 0.0, size_x());
    y = std::clamp(y, 0.0, size_y());
    return sample(x, y);
  }

 private:
  double sample(double x, double y) const {
    double fx = x / cell_size, fy = y / cell_size;
    int i = std::min(static_cast<int>(fx), node_rows - 2);
    int j = std::min(static_cast<int>(fy), node_cols - 2);
    i = std::max(i, 0);
    j = std::max(j, 0);
    double tx = fx - i, ty = fy - j;
    double h00 = node(i, j), h10 = node(i + 1, j);
    double h01 = node(i, j + 1), h11 = node(i + 1, j + 1);
    return h00 * (1 - tx) * (1 - ty) + h10 * tx * (1 - ty) +
           h01 * (1 - tx) * ty + h11 * tx * ty;
  }
};

namespace detail {

// Largest-remainder apportionment of rows to the four families.
inline std::array<int, 4> row_counts(const std::array<double, 4>& proportions,
                                     int rows) {
  std::array<int, 4> n{};
  std::array<double, 4> frac{};
  int used = 0;
  for (int k = 0; k < 4; ++k) {
    double exact = proportions[k] * rows;
    n[k] = static_cast<int>(std::floor(exact + 1e-12));
    frac[k] = exact - n[k];
    used += n[k];
  }
  while (used < rows) {
    int best = 0;
    for (int k = 1; k < 4; ++k)
      if (frac[k] > frac[best] + 1e-15) best = k;
    n[best] += 1;
    frac[best] = -1;
    ++used;
  }
  return n;
}

constexpr double kPlatformHalf = 1.0;  // flat center square, half side in m

inline void generate_tile(HeightField& f, int r, int c, std::uint64_t seed) {
  const TileMeta& m = f.tile(r, c);
  const TileParams p = tile_params(m.type, m.level);
  const int n = static_cast<int>(std::lround(f.tile_side / f.cell_size));
  const double half = 0.5 * f.tile_side;
  const double d_plat = half - kPlatformHalf;
  rng::Stream rs(seed, rng::Tag::Terrain,
                 static_cast<std::uint64_t>(r) * 4096 + c);

  auto edge_dist = [&](double u, double v) {
    return std::min(std::min(u, f.tile_side - u), std::min(v, f.tile_side - v));
  };

  const int i0 = r * n, j0 = c * n;
  switch (m.type) {
    case TerrainType::Slope:
    case TerrainType::RoughSlope: {
      const double g = std::tan(p.slope_rad);
      for (int i = 0; i <= n; ++i)
        for (int j = 0; j <= n; ++j) {
          double u = i * f.cell_size, v = j * f.cell_size;
          double z = g * std::min(edge_dist(u, v), d_plat);
          if (m.type == TerrainType::RoughSlope)
            z += rs.uniform(-p.noise_amp, p.noise_amp);
          f.node(i0 + i, j0 + j) = static_cast<float>(z);
        }
      break;
    }
    case TerrainType::Stairs: {
      const double tread = rs.uniform(p.step_width.lo, p.step_width.hi);
      const int top = static_cast<int>(std::floor(d_plat / tread));
      for (int i = 0; i <= n; ++i)
        for (int j = 0; j <= n; ++j) {
          double u = i * f.cell_size, v = j * f.cell_size;
          int ring = static_cast<int>(std::floor(edge_dist(u, v) / tread));
          f.node(i0 + i, j0 + j) =
              static_cast<float>(p.step_height * std::min(ring, top));
        }
      break;
    }
    case TerrainType::DiscreteObstacles: {
      for (int i = 0; i <= n; ++i)
        for (int j = 0; j <= n; ++j) f.node(i0 + i, j0 + j) = 0.0f;
      const int num_rects = 40;
      for (int k = 0; k < num_rects; ++k) {
        double w = rs.uniform(0.5, 2.0);
        double h = rs.uniform(0.5, 2.0);
        double cx = rs.uniform(0.0, f.tile_side - w);
        double cy = rs.uniform(0.0, f.tile_side - h);
        double z = rs.uniform(-p.obstacle_amp, p.obstacle_amp);
        int ia = std::max(0, static_cast<int>(std::ceil(cx / f.cell_size)));
        int ib = std::min(n, static_cast<int>(std::floor((cx + w) / f.cell_size)));
        int ja = std::max(0, static_cast<int>(std::ceil(cy / f.cell_size)));
        int jb = std::min(n, static_cast<int>(std::floor((cy + h) / f.cell_size)));
        for (int i = ia; i <= ib; ++i)
          for (int j = ja; j <= jb; ++j) {
            double u = i * f.cell_size, v = j * f.cell_size;
            if (std::abs(u - half) <= kPlatformHalf &&
                std::abs(v - half) <= kPlatformHalf)
              continue;  // keep the spawn platform flat
            f.node(i0 + i, j0 + j) = static_cast<float>(z);
          }
      }
      break;
    }
  }
}

}  // namespace detail

inline HeightField build_field(const TerrainConfig& cfg, std::uint64_t seed) {
  double psum = 0;
  for (double p : cfg.proportions) psum += p;
  if (std::abs(psum - 1.0) > 1e-9)
    throw std::invalid_argument("terrain proportions must sum to 1");
  double cells = cfg.tile_side / cfg.cell_size;
  if (std::abs(cells - std::lround(cells)) > 1e-9)
    throw std::invalid_argument("tile_side must be a multiple of cell_size");

  HeightField f;
  f.cell_size = cfg.cell_size;
  f.tile_rows = cfg.tile_rows;
  f.tile_cols = cfg.tile_cols;
  f.tile_side = cfg.tile_side;
  const int n = static_cast<int>(std::lround(cells));
  f.node_rows = cfg.tile_rows * n + 1;
  f.node_cols = cfg.tile_cols * n + 1;
  f.grid.assign(static_cast<size_t>(f.node_rows) * f.node_cols, 0.0f);
  f.meta.resize(static_cast<size_t>(cfg.tile_rows) * cfg.tile_cols);

  auto counts = detail::row_counts(cfg.proportions, cfg.tile_rows);
  int row = 0;
  for (int fam = 0; fam < 4; ++fam)
    for (int k = 0; k < counts[fam]; ++k, ++row)
      for (int c = 0; c < cfg.tile_cols; ++c) {
        int level = cfg.tile_cols > 1
                        ? static_cast<int>(std::lround(9.0 * c / (cfg.tile_cols - 1)))
                        : 0;
        f.meta[static_cast<size_t>(row) * cfg.tile_cols + c] =
            TileMeta{static_cast<TerrainType>(fam), level};
      }

  for (int r = 0; r < cfg.tile_rows; ++r)
    for (int c = 0; c < cfg.tile_cols; ++c) detail::generate_tile(f, r, c, seed);
  return f;
}

// Critic height scan: a pts x pts square of span x span meters in the
// yaw-rotated body frame, elevations relative to base height.
inline void height_samples(const HeightField& f, const Eigen::Vector3d& base_pos,
                           double yaw, int pts, double span, double* out) {
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  const double step = span / (pts - 1);
  int k = 0;
  for (int i = 0; i < pts; ++i)
    for (int j = 0; j < pts; ++j) {
      double bx = -0.5 * span + i * step;
      double by = -0.5 * span + j * step;
      double x = base_pos.x() + cy * bx - sy * by;
      double y = base_pos.y() + sy * bx + cy * by;
      out[k++] = f.height_at_clamped(x, y) - base_pos.z();
    }
}

// Plain-text export: one row of elevations per line, preceded by a header
// describing the grid, then the per-tile metadata.
inline void export_text(const HeightField& f, std::ostream& os) {
  os << "# heightfield " << f.node_rows << " x " << f.node_cols
     << " cell " << f.cell_size << "\n";
  for (int i = 0; i < f.node_rows; ++i) {
    for (int j = 0; j < f.node_cols; ++j) {
      if (j) os << ' ';
      os << f.node(i, j);
    }
    os << '\n';
  }
  os << "# tiles " << f.tile_rows << " x " << f.tile_cols << " (type level)\n";
  for (int r = 0; r < f.tile_rows; ++r) {
    for (int c = 0; c < f.tile_cols; ++c) {
      if (c) os << ' ';
      const auto& m = f.tile(r, c);
      os << '#' << terrain_name(m.type) << ':' << m.level;
    }
    os << '\n';
  }
}

}  // namespace quadloco
