#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "tinytiler/ir.hpp"

namespace tinytiler::tiling {

struct TileDims;

/// Three-level hierarchy description plus the backend-overhead hook
/// (im2col and scratch bytes a kernel needs on top of its tile buffers).
struct MemoryHierarchy {
  std::uint64_t l1_bytes{64 * 1024};
  std::uint64_t l2_bytes{512 * 1024};
  std::uint64_t l3_bytes{8ull * 1024 * 1024};
  double l2l1_bandwidth{8.0};          // bytes/cycle
  std::uint64_t l2l1_latency{8};       // cycles
  double l3l2_bandwidth{2.0};
  std::uint64_t l3l2_latency{100};
  int cores{8};
  std::function<std::uint64_t(const ir::LayerSpec&, const TileDims&)> backend_overhead;

  std::uint64_t l1_budget() const { return l1_bytes / 2; }
  std::uint64_t overhead_bytes(const ir::LayerSpec& l, const TileDims& t) const;
};

std::uint64_t default_backend_overhead(const ir::LayerSpec& layer, const TileDims& tile,
                                       int cores);

/// Eq. 8 weights. Defaults: alpha = 0.5, beta_i2c = 1e2, other betas = 1e6.
struct ObjectiveWeights {
  Rational alpha{1, 2};
  Rational beta_i2c{100};
  Rational beta_par{1000000};
  Rational beta_mm_w{1000000};
  Rational beta_mm_ch{1000000};
};

struct TileDims {
  int c_y{1}, h_y{1}, w_y{1};
  int c_x{1};          // always the full layer C_x
  int h_x{1}, w_x{1};  // derived input extents with halo, clipped to the layer
  std::uint64_t l1_x{0}, l1_w{0}, l1_y{0};

  std::uint64_t occupancy() const { return l1_x + l1_w + l1_y; }
  bool operator==(const TileDims&) const = default;
};

/// Builds a tile for the given output extents, deriving halo'd input extents
/// and L1 byte sizes (full input channel depth; add counts both branches).
TileDims make_tile(const ir::LayerSpec& layer, int c_y, int h_y, int w_y);

bool tile_feasible(const ir::LayerSpec& layer, const TileDims& tile, const MemoryHierarchy& mem);

struct L3Decision {
  int stage{0};
  bool tile_x{false}, tile_w{false}, tile_y{false};
  int stripe_h_x{0};   // stage 1: input rows per stripe
  int weight_c_y{0};   // stages 2/4: output channels per weight slice
  int stripe_h_y{0};   // stages 3/4: output rows per stripe
  bool l2w_double{false};
  bool next_w_reserved{true};  // Eq. 6 budget included the next layer's full weights

  bool operator==(const L3Decision&) const = default;
};

/// Five-stage cascade: first stage (0..4) whose residual L2 footprint fits
/// l2_budget (Eq. 6 with the next-weights term already subtracted by the
/// caller). Throws when even stage 4 cannot fit.
L3Decision l3_cascade(const ir::LayerSpec& layer, bool prev_output_in_l3,
                      std::uint64_t l2_budget);

/// L2 residual footprint of the layer under a given decision
/// (x + y + weight terms, weight slices doubled when streamed).
std::uint64_t l2_footprint(const ir::LayerSpec& layer, const L3Decision& d);

struct TilingSolution {
  std::string layer_id;
  L3Decision l3;
  TileDims main_tile;
  std::vector<TileDims> border_tiles;  // distinct leftover variants, main excluded
  int grid_c{1}, grid_h{1}, grid_w{1};
  Rational objective_score{0};
  std::uint64_t l1_usage{0};  // main tile occupancy + backend overhead

  // L2 footprints after the L3 decision, consumed by the allocator.
  std::uint64_t l2_x_bytes{0}, l2_w_bytes{0}, l2_y_bytes{0};
  bool w_double_buffered{false};

  int grid_size() const { return grid_c * grid_h * grid_w; }
};

/// Solve the L2-L1 tiling problem for a (post-L3) layer: maximize Eq. 8 over
/// {C_y^t, h_y^t, w_y^t} under the L1/2 budget; branch and bound certified
/// against exhaustive enumeration. Throws when no tile fits.
TilingSolution solve_l2l1(const ir::LayerSpec& layer, const MemoryHierarchy& mem,
                          const ObjectiveWeights& w);

Rational score_tile(const TileDims& tile, const ir::LayerSpec& layer, const ObjectiveWeights& w);

/// Exhaustive generator over all feasible tiles, used to certify the solver.
class FeasibleEnumerator {
 public:
  FeasibleEnumerator(const ir::LayerSpec& layer, const MemoryHierarchy& mem,
                     std::uint64_t cap = 10'000'000);
  std::optional<TileDims> next();

 private:
  const ir::LayerSpec& layer_;
  const MemoryHierarchy& mem_;
  int c_{1}, h_{1}, w_{0};
};

/// Post-L3 sub-layer: the layer restricted to one stripe/slice of the
/// decision (main variant; leftovers are handled at schedule time).
ir::LayerSpec sub_layer_for_stage(const ir::LayerSpec& layer, const L3Decision& d);

/// Output rows produced by one stage-1 input stripe.
int stage1_out_rows(const ir::LayerSpec& layer, int stripe_h_x);

/// Network pass: threads predecessor L3 residency and the Eq. 6 next-weights
/// reserve through the cascade, then solves every layer.
std::vector<TilingSolution> tile_network(const ir::NetworkGraph& graph,
                                         const MemoryHierarchy& mem,
                                         const ObjectiveWeights& w);

std::string tiling_report_json(const std::vector<TilingSolution>& sols);

}  // namespace tinytiler::tiling
