#include "tinytiler/tiler.hpp"

#include <algorithm>
#include <sstream>

#include <json.hpp>

namespace tinytiler::tiling {

using nlohmann::json;

namespace {

std::uint64_t x_full_bytes(const ir::LayerSpec& l) {
  std::uint64_t b = static_cast<std::uint64_t>(l.h_x()) * l.w_x() * l.c_x();
  if (l.kind == ir::LayerKind::Add) b *= 2;  // both branches resident
  return b;
}

std::uint64_t y_full_bytes(const ir::LayerSpec& l) {
  return static_cast<std::uint64_t>(l.h_y()) * l.w_y() * l.c_y();
}

int clip_input_extent(int out_tile, int stride, int kernel, int in_full) {
  return std::min((out_tile - 1) * stride + kernel, in_full);
}

}  // namespace

std::uint64_t default_backend_overhead(const ir::LayerSpec& layer, const TileDims& tile,
                                       int cores) {
  switch (layer.kind) {
    case ir::LayerKind::Conv:
      // per-core im2col buffer covering one receptive field
      return static_cast<std::uint64_t>(cores) * layer.kernel_h * layer.kernel_w * layer.c_x();
    case ir::LayerKind::Depthwise:
      // per-core vertical stripe of width K_w over the tile's input rows
      return static_cast<std::uint64_t>(cores) * layer.kernel_w * tile.h_x;
    default:
      return 0;  // pointwise needs no im2col; linear/pool/add read contiguously
  }
}

std::uint64_t MemoryHierarchy::overhead_bytes(const ir::LayerSpec& l, const TileDims& t) const {
  if (backend_overhead) return backend_overhead(l, t);
  return default_backend_overhead(l, t, cores);
}

TileDims make_tile(const ir::LayerSpec& layer, int c_y, int h_y, int w_y) {
  TileDims t;
  t.c_y = c_y;
  t.h_y = h_y;
  t.w_y = w_y;
  t.c_x = layer.c_x();
  t.h_x = clip_input_extent(h_y, layer.stride, layer.kernel_h, layer.h_x());
  t.w_x = clip_input_extent(w_y, layer.stride, layer.kernel_w, layer.w_x());
  t.l1_x = static_cast<std::uint64_t>(t.h_x) * t.w_x * t.c_x;
  if (layer.kind == ir::LayerKind::Add) t.l1_x *= 2;
  t.l1_w = static_cast<std::uint64_t>(c_y) * layer.weight_record_bytes();
  t.l1_y = static_cast<std::uint64_t>(h_y) * w_y * c_y;
  return t;
}

bool tile_feasible(const ir::LayerSpec& layer, const TileDims& tile, const MemoryHierarchy& mem) {
  if (tile.c_y < 1 || tile.h_y < 1 || tile.w_y < 1) return false;
  if (tile.c_y > layer.c_y() || tile.h_y > layer.h_y() || tile.w_y > layer.w_y()) return false;
  if (tile.c_x != layer.c_x()) return false;
  // depthwise tiles stay full-width so the HWC->CHW marshalling is one affine
  // descriptor per channel
  if (layer.kind == ir::LayerKind::Depthwise && tile.w_y != layer.w_y()) return false;
  return tile.occupancy() + mem.overhead_bytes(layer, tile) < mem.l1_budget();
}

Rational score_tile(const TileDims& tile, const ir::LayerSpec& layer, const ObjectiveWeights& w) {
  Rational occ = Rational(BigInt(tile.occupancy()), 1);
  int h_i2c = tile.c_y;
  int h_par;
  if (layer.h_y() < 8) {
    h_par = (tile.h_y * tile.w_y - 1) % 16;
  } else {
    h_par = (tile.h_y - 1) % 8;
  }
  int h_mm_w = (tile.w_y - 1) % 2;
  int h_mm_ch = (tile.c_y - 1) % 4;
  return w.alpha * occ + w.beta_i2c * Rational(h_i2c) + w.beta_par * Rational(h_par) +
         w.beta_mm_w * Rational(h_mm_w) + w.beta_mm_ch * Rational(h_mm_ch);
}

FeasibleEnumerator::FeasibleEnumerator(const ir::LayerSpec& layer, const MemoryHierarchy& mem,
                                       std::uint64_t cap)
    : layer_(layer), mem_(mem) {
  std::uint64_t space = static_cast<std::uint64_t>(layer.c_y()) * layer.h_y() * layer.w_y();
  if (space > cap)
    throw Error("enumeration cap exceeded: " + std::to_string(space) + " candidates > cap " +
                std::to_string(cap));
}

std::optional<TileDims> FeasibleEnumerator::next() {
  while (true) {
    if (++w_ > layer_.w_y()) {
      w_ = 1;
      if (++h_ > layer_.h_y()) {
        h_ = 1;
        if (++c_ > layer_.c_y()) return std::nullopt;
      }
    }
    TileDims t = make_tile(layer_, c_, h_, w_);
    if (tile_feasible(layer_, t, mem_)) return t;
  }
}

namespace {

struct Candidate {
  Rational score{0};
  TileDims tile;
  bool valid{false};

  // lexicographic preference: score, then larger h, c, w
  bool better_than(const Candidate& o) const {
    if (!o.valid) return true;
    if (score != o.score) return score > o.score;
    if (tile.h_y != o.tile.h_y) return tile.h_y > o.tile.h_y;
    if (tile.c_y != o.tile.c_y) return tile.c_y > o.tile.c_y;
    return tile.w_y > o.tile.w_y;
  }
};

void append_border_variants(TilingSolution& sol, const ir::LayerSpec& layer) {
  const TileDims& m = sol.main_tile;
  sol.grid_c = static_cast<int>(ceil_div(layer.c_y(), m.c_y));
  sol.grid_h = static_cast<int>(ceil_div(layer.h_y(), m.h_y));
  sol.grid_w = static_cast<int>(ceil_div(layer.w_y(), m.w_y));
  int left_c = layer.c_y() - (sol.grid_c - 1) * m.c_y;
  int left_h = layer.h_y() - (sol.grid_h - 1) * m.h_y;
  int left_w = layer.w_y() - (sol.grid_w - 1) * m.w_y;
  bool bc = left_c != m.c_y;
  bool bh = left_h != m.h_y;
  bool bw = left_w != m.w_y;
  for (int mask = 1; mask < 8; ++mask) {
    bool use_c = mask & 1, use_h = mask & 2, use_w = mask & 4;
    if ((use_c && !bc) || (use_h && !bh) || (use_w && !bw)) continue;
    sol.border_tiles.push_back(make_tile(layer, use_c ? left_c : m.c_y, use_h ? left_h : m.h_y,
                                         use_w ? left_w : m.w_y));
  }
}

}  // namespace

TilingSolution solve_l2l1(const ir::LayerSpec& layer, const MemoryHierarchy& mem,
                          const ObjectiveWeights& w) {
  const int C = layer.c_y(), H = layer.h_y(), W = layer.w_y();
  const Rational p_max(layer.h_y() < 8 ? 15 : 7);
  const std::uint64_t budget = mem.l1_budget();

  Candidate best;
  for (int c = C; c >= 1; --c) {
    // envelope: every smaller c can only do worse than this bound
    {
      TileDims full_c = make_tile(layer, c, H, W);
      Rational occ_ub(BigInt(std::min<std::uint64_t>(full_c.occupancy(), budget)), 1);
      Rational env = w.alpha * occ_ub + w.beta_i2c * Rational(c) + w.beta_par * p_max +
                     w.beta_mm_w * Rational(1) + w.beta_mm_ch * Rational(3);
      if (best.valid && env <= best.score) break;
    }
    for (int h = H; h >= 1; --h) {
      {
        TileDims full_h = make_tile(layer, c, h, W);
        Rational occ_ub(BigInt(std::min<std::uint64_t>(full_h.occupancy(), budget)), 1);
        Rational env = w.alpha * occ_ub + w.beta_i2c * Rational(c) + w.beta_par * p_max +
                       w.beta_mm_w * Rational(1) + w.beta_mm_ch * Rational((c - 1) % 4);
        if (best.valid && env <= best.score) break;
      }
      for (int wt = W; wt >= 1; --wt) {
        TileDims t = make_tile(layer, c, h, wt);
        if (!tile_feasible(layer, t, mem)) {
          if (layer.kind == ir::LayerKind::Depthwise) break;  // width is fixed for dw
          continue;  // shrink w until the tile fits
        }
        Rational s = score_tile(t, layer, w);
        Candidate cand{s, t, true};
        if (cand.better_than(best)) best = cand;
        // occupancy shrinks with w; once even maximal heuristics cannot win, stop
        Rational env = w.alpha * Rational(BigInt(t.occupancy()), 1) + w.beta_i2c * Rational(c) +
                       w.beta_par * p_max + w.beta_mm_w * Rational(1) +
                       w.beta_mm_ch * Rational((c - 1) % 4);
        if (env <= best.score && layer.h_y() >= 8) break;
        if (layer.kind == ir::LayerKind::Depthwise) break;
      }
    }
  }

  if (!best.valid) {
    TileDims smallest = make_tile(layer, 1, 1, layer.kind == ir::LayerKind::Depthwise ? W : 1);
    std::uint64_t fp = smallest.occupancy() + mem.overhead_bytes(layer, smallest);
    throw Error("layer " + layer.id + ": no feasible L2-L1 tile; smallest candidate needs " +
                std::to_string(fp) + " bytes but the usable L1 budget is " +
                std::to_string(budget));
  }

  TilingSolution sol;
  sol.layer_id = layer.id;
  sol.main_tile = best.tile;
  sol.objective_score = best.score;
  sol.l1_usage = best.tile.occupancy() + mem.overhead_bytes(layer, best.tile);
  append_border_variants(sol, layer);
  sol.l2_x_bytes = x_full_bytes(layer);
  sol.l2_w_bytes = layer.weight_image_bytes();
  sol.l2_y_bytes = y_full_bytes(layer);
  return sol;
}

std::uint64_t l2_footprint(const ir::LayerSpec& l, const L3Decision& d) {
  std::uint64_t x = d.stage == 1 ? static_cast<std::uint64_t>(d.stripe_h_x) * l.w_x() * l.c_x()
                                 : x_full_bytes(l);
  std::uint64_t wb;
  if (d.stage == 2 || d.stage == 4)
    wb = 2ull * d.weight_c_y * l.weight_record_bytes();
  else
    wb = l.weight_image_bytes();
  std::uint64_t y = (d.stage == 3 || d.stage == 4)
                        ? static_cast<std::uint64_t>(d.stripe_h_y) * l.w_y() * l.c_y()
                        : y_full_bytes(l);
  return x + wb + y;
}

int stage1_out_rows(const ir::LayerSpec& layer, int stripe_h_x) {
  return (stripe_h_x - layer.kernel_h) / layer.stride + 1;
}

namespace {

int align_down_stride(int rows, int stride, int floor_rows) {
  int aligned = rows - rows % stride;
  return aligned >= floor_rows ? aligned : rows;
}

}  // namespace

L3Decision l3_cascade(const ir::LayerSpec& l, bool prev_output_in_l3, std::uint64_t l2_budget) {
  if (l2_budget == 0) throw Error("layer " + l.id + ": zero L2 budget");
  const std::uint64_t x = x_full_bytes(l);
  const std::uint64_t y = y_full_bytes(l);
  const std::uint64_t w_img = l.weight_image_bytes();
  const std::uint64_t rec = l.weight_record_bytes();
  const bool weighted = ir::is_weighted(l.kind);

  // stage 0: everything resident
  if (x + w_img + y < l2_budget) return L3Decision{};

  // stage 1: input streamed in h_x stripes (single-input layers only)
  if (prev_output_in_l3 && l.kind != ir::LayerKind::Add) {
    std::uint64_t row = static_cast<std::uint64_t>(l.w_x()) * l.c_x();
    for (int rows = l.h_x() - 1; rows >= l.kernel_h; --rows) {
      if (row * rows + w_img + y < l2_budget) {
        L3Decision d;
        d.stage = 1;
        d.tile_x = true;
        d.stripe_h_x = align_down_stride(rows, l.stride, l.kernel_h);
        return d;
      }
    }
  }

  // stage 2: weights streamed in C_y slices, double-buffered
  if (!prev_output_in_l3 && weighted && rec > 0) {
    for (int cy = l.c_y() - 1; cy >= 1; --cy) {
      if (x + 2ull * cy * rec + y < l2_budget) {
        L3Decision d;
        d.stage = 2;
        d.tile_w = true;
        d.weight_c_y = cy;
        d.l2w_double = true;
        return d;
      }
    }
  }

  // stage 3: output streamed in h_y stripes
  {
    std::uint64_t row = static_cast<std::uint64_t>(l.w_y()) * l.c_y();
    for (int rows = l.h_y() - 1; rows >= 1; --rows) {
      if (x + w_img + row * rows < l2_budget) {
        L3Decision d;
        d.stage = 3;
        d.tile_y = true;
        d.stripe_h_y = align_down_stride(rows, l.stride, 1);
        return d;
      }
    }
  }

  // stage 4: weights and output both streamed; stripes outer, slices re-streamed
  if (weighted && rec > 0) {
    std::uint64_t row = static_cast<std::uint64_t>(l.w_y()) * l.c_y();
    int best_rows = 0;
    for (int rows = l.h_y(); rows >= 1; --rows) {
      if (x + row * rows + 2ull * rec < l2_budget) {
        best_rows = rows;
        break;
      }
    }
    if (best_rows > 0) {
      L3Decision d;
      d.stage = 4;
      d.tile_w = true;
      d.tile_y = true;
      d.l2w_double = true;
      d.stripe_h_y = align_down_stride(best_rows, l.stride, 1);
      std::uint64_t stripe = row * d.stripe_h_y;
      for (int cy = l.c_y(); cy >= 1; --cy) {
        if (x + stripe + 2ull * cy * rec < l2_budget) {
          d.weight_c_y = cy;
          return d;
        }
      }
    }
  }

  throw Error("layer " + l.id + ": infeasible even at stage 4 (L2 budget " +
              std::to_string(l2_budget) + " bytes, x=" + std::to_string(x) + " w=" +
              std::to_string(w_img) + " y=" + std::to_string(y) + ")");
}

ir::LayerSpec sub_layer_for_stage(const ir::LayerSpec& layer, const L3Decision& d) {
  ir::LayerSpec sub = layer;
  if (d.stage == 0) return sub;
  // sub-layers are sizing/solving views; payloads are not sliced here
  if (d.stage == 1) {
    int out_rows = stage1_out_rows(layer, d.stripe_h_x);
    sub.input = ir::QTensorSpec::activation(d.stripe_h_x, layer.w_x(), layer.c_x(),
                                            layer.input.quantum);
    sub.output = ir::QTensorSpec::activation(out_rows, layer.w_y(), layer.c_y(),
                                             layer.output.quantum);
    sub.pad.top = sub.pad.bottom = 0;
    return sub;
  }
  int c = (d.stage == 2 || d.stage == 4) ? d.weight_c_y : layer.c_y();
  int out_rows = (d.stage == 3 || d.stage == 4) ? d.stripe_h_y : layer.h_y();
  int in_rows = (d.stage == 3 || d.stage == 4)
                    ? clip_input_extent(out_rows, layer.stride, layer.kernel_h, layer.h_x())
                    : layer.h_x();
  sub.output = ir::QTensorSpec::activation(out_rows, layer.w_y(), c, layer.output.quantum);
  if (d.stage == 3 || d.stage == 4) {
    sub.input = ir::QTensorSpec::activation(in_rows, layer.w_x(), layer.c_x(),
                                            layer.input.quantum);
    sub.pad.top = sub.pad.bottom = 0;
  }
  if (c != layer.c_y()) {
    if (sub.weights)
      sub.weights = ir::QTensorSpec::weight(c, layer.kernel_h, layer.kernel_w,
                                            sub.weights->extent("c_x"), sub.weights->quantum,
                                            sub.weights->zero_point);
    if (sub.has_bn) {
      sub.bn_kappa.resize(c);
      sub.bn_lambda.resize(c);
    }
    sub.weight_data.clear();
  }
  return sub;
}

std::vector<TilingSolution> tile_network(const ir::NetworkGraph& graph,
                                         const MemoryHierarchy& mem,
                                         const ObjectiveWeights& w) {
  std::vector<TilingSolution> out;
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    const ir::LayerSpec& l = graph.layers[i];
    std::uint64_t reserve =
        i + 1 < graph.layers.size() ? graph.layers[i + 1].weight_image_bytes() : 0;

    // the flag holds when this layer consumes the predecessor's output and
    // that output was streamed to L3 (the network input starts in L2)
    bool prev_in_l3 = false;
    if (i > 0) {
      bool consumes_prev = false;
      for (const std::string& in : l.inputs) consumes_prev |= in == graph.layers[i - 1].id;
      int ps = out[i - 1].l3.stage;
      prev_in_l3 = consumes_prev && (ps == 3 || ps == 4);
    }

    L3Decision d;
    bool reserved = reserve > 0;
    try {
      std::uint64_t budget = mem.l2_bytes > reserve ? mem.l2_bytes - reserve : 0;
      if (budget == 0) throw Error("no budget after next-weights reserve");
      d = l3_cascade(l, prev_in_l3, budget);
    } catch (const Error&) {
      if (reserve == 0) throw;
      d = l3_cascade(l, prev_in_l3, mem.l2_bytes);  // drop the prefetch reserve
      reserved = false;
    }
    d.next_w_reserved = reserved;

    ir::LayerSpec sub = sub_layer_for_stage(l, d);
    TilingSolution sol = solve_l2l1(sub, mem, w);
    sol.layer_id = l.id;
    sol.l3 = d;
    sol.l2_x_bytes = d.stage == 1
                         ? static_cast<std::uint64_t>(d.stripe_h_x) * l.w_x() * l.c_x()
                         : x_full_bytes(l);
    sol.l2_w_bytes = (d.stage == 2 || d.stage == 4) ? 2ull * d.weight_c_y * l.weight_record_bytes()
                                                    : l.weight_image_bytes();
    sol.l2_y_bytes = (d.stage == 3 || d.stage == 4)
                         ? static_cast<std::uint64_t>(d.stripe_h_y) * l.w_y() * l.c_y()
                         : y_full_bytes(l);
    sol.w_double_buffered = d.l2w_double;
    out.push_back(std::move(sol));
  }
  return out;
}

namespace {

json tile_json(const TileDims& t) {
  return {{"c_y", t.c_y}, {"h_y", t.h_y}, {"w_y", t.w_y}, {"c_x", t.c_x},
          {"h_x", t.h_x}, {"w_x", t.w_x}, {"l1_x", t.l1_x}, {"l1_w", t.l1_w}, {"l1_y", t.l1_y}};
}

}  // namespace

std::string tiling_report_json(const std::vector<TilingSolution>& sols) {
  json arr = json::array();
  for (const TilingSolution& s : sols) {
    json borders = json::array();
    for (const TileDims& b : s.border_tiles) borders.push_back(tile_json(b));
    json j = {{"layer", s.layer_id},
              {"stage", s.l3.stage},
              {"main_tile", tile_json(s.main_tile)},
              {"border_tiles", borders},
              {"grid", {{"c", s.grid_c}, {"h", s.grid_h}, {"w", s.grid_w}}},
              {"score", rational_to_string(s.objective_score)},
              {"l1_usage", s.l1_usage},
              {"l2", {{"x", s.l2_x_bytes}, {"w", s.l2_w_bytes}, {"y", s.l2_y_bytes},
                      {"w_double", s.w_double_buffered}}}};
    if (s.l3.stage == 1) j["stripe_h_x"] = s.l3.stripe_h_x;
    if (s.l3.stage == 2 || s.l3.stage == 4) j["weight_c_y"] = s.l3.weight_c_y;
    if (s.l3.stage == 3 || s.l3.stage == 4) j["stripe_h_y"] = s.l3.stripe_h_y;
    arr.push_back(j);
  }
  return arr.dump(2);
}

}  // namespace tinytiler::tiling
