#include "tinytiler/alloc.hpp"

#include <algorithm>
#include <optional>

#include <json.hpp>

namespace tinytiler::alloc {

using nlohmann::json;

namespace {

void retreat(StackState& s, bool low) {
  auto& stack = low ? s.low_stack : s.high_stack;
  while (!stack.empty() && s.buffers[stack.back()].dead) {
    const LiveBuffer& b = s.buffers[stack.back()];
    if (low)
      s.low_ptr = b.offset;
    else
      s.high_ptr = b.offset + b.aligned_size;
    stack.pop_back();
  }
}

void mark_dead(StackState& s, int idx, const std::string& layer) {
  LiveBuffer& b = s.buffers[idx];
  b.dead = true;
  s.index.erase(b.id);
  s.events.push_back({false, b.id, b.offset, b.size, layer, b.low});
  retreat(s, b.low);
}

std::uint64_t push(StackState& s, const std::string& id, std::uint64_t size, bool low,
                   const std::string& layer_name, int layer_pos, bool is_weight, bool counted,
                   int counter) {
  std::uint64_t asize = align4(size);
  if (s.low_ptr + asize > s.high_ptr || s.low_ptr + asize < s.low_ptr) {
    std::uint64_t avail = s.high_ptr - s.low_ptr;
    throw Error("L2 stack overflow at layer " + layer_name + ": buffer '" + id + "' needs " +
                std::to_string(asize) + " bytes, " + std::to_string(avail) +
                " available (short by " + std::to_string(asize - avail) + ")");
  }
  LiveBuffer b;
  b.id = id;
  b.size = size;
  b.aligned_size = asize;
  b.low = low;
  b.layer = layer_pos;
  b.is_weight = is_weight;
  b.counted = counted;
  b.counter = counter;
  if (low) {
    b.offset = s.low_ptr;
    s.low_ptr += asize;
  } else {
    s.high_ptr -= asize;
    b.offset = s.high_ptr;
  }
  s.buffers.push_back(b);
  int idx = static_cast<int>(s.buffers.size()) - 1;
  (low ? s.low_stack : s.high_stack).push_back(idx);
  if (s.index.count(id)) throw Error("duplicate live buffer id: " + id);
  s.index[id] = idx;
  s.events.push_back({true, id, b.offset, size, layer_name, low});
  s.peak = std::max(s.peak, s.low_ptr + (s.capacity - s.high_ptr));
  return b.offset;
}

}  // namespace

LayerOffsets allocate_layer(StackState& s, const ir::LayerSpec& layer, const LayerSizes& sizes) {
  // step 1: corner select
  bool low = !s.begin_end;

  // step 2: dealloc the corner's most recent weight buffer (skipped when none,
  // e.g. the previous occupant of this corner carried no weights)
  auto& corner_stack = low ? s.low_stack : s.high_stack;
  for (auto it = corner_stack.rbegin(); it != corner_stack.rend(); ++it) {
    LiveBuffer& b = s.buffers[*it];
    if (b.dead || !b.is_weight) continue;
    mark_dead(s, *it, layer.id);
    break;
  }

  // step 3: dealloc expired activation buffers
  for (std::size_t i = 0; i < s.buffers.size(); ++i) {
    LiveBuffer& b = s.buffers[i];
    if (!b.dead && b.counted && b.counter <= 0 && s.index.count(b.id))
      mark_dead(s, static_cast<int>(i), layer.id);
  }
  retreat(s, true);
  retreat(s, false);

  // step 4: alloc y then w at the corner, w nearest the pointer; residual and
  // stripe/reload buffers follow
  LayerOffsets out;
  std::vector<int> fresh;
  if (sizes.y > 0) {
    out.y_offset = push(s, "L2.y." + layer.id, sizes.y, low, layer.id, s.step, false, !sizes.pin_y,
                        /*counter*/ 1);
    fresh.push_back(s.index["L2.y." + layer.id]);
  }
  if (sizes.w > 0) {
    out.w_offset =
        push(s, "L2.w." + layer.id, sizes.w, low, layer.id, s.step, true, false, 0);
    out.has_w = true;
    fresh.push_back(s.index["L2.w." + layer.id]);
  }
  if (sizes.x2 > 0) {
    out.x2_offset = push(s, "L2.x2." + layer.id, sizes.x2, low, layer.id, s.step, false, true,
                         sizes.x2_lifetime);
    out.has_x2 = true;
    fresh.push_back(s.index["L2.x2." + layer.id]);
  }
  if (sizes.x_stripe > 0 || sizes.x_reload > 0) {
    std::uint64_t sz = sizes.x_stripe > 0 ? sizes.x_stripe : sizes.x_reload;
    out.x_aux_offset = push(s, "L2.xa." + layer.id, sz, low, layer.id, s.step, false, true, 0);
    out.has_x_aux = true;
    fresh.push_back(s.index["L2.xa." + layer.id]);
  }

  // step 6: decrement every counter except the ones set in this call
  for (std::size_t i = 0; i < s.buffers.size(); ++i) {
    LiveBuffer& b = s.buffers[i];
    if (b.dead || !b.counted) continue;
    if (std::find(fresh.begin(), fresh.end(), static_cast<int>(i)) != fresh.end()) continue;
    --b.counter;
  }

  if (sizes.weighted && sizes.w > 0) s.begin_end = !s.begin_end;
  ++s.step;
  return out;
}

const PlanLayer& AllocationPlan::layer(const std::string& id) const {
  for (const PlanLayer& l : layers)
    if (l.id == id) return l;
  throw Error("allocation plan has no layer " + id);
}

namespace {

struct ResidualNeed {
  bool needed{false};
  int lifetime{0};
};

ResidualNeed residual_need(const ir::NetworkGraph& g, int pos) {
  ResidualNeed r;
  const std::string& id = g.layers[pos].id;
  for (std::size_t j = pos + 1; j < g.layers.size(); ++j)
    for (const std::string& in : g.layers[j].inputs)
      if (in == id && static_cast<int>(j) > pos + 1) {
        r.needed = true;
        r.lifetime = std::max(r.lifetime, static_cast<int>(j) - pos);
      }
  return r;
}

std::optional<AllocationPlan> try_plan(const ir::NetworkGraph& g,
                                       const std::vector<tiling::TilingSolution>& tilings,
                                       std::uint64_t capacity, const PlanOptions& opt,
                                       std::string* error) {
  try {
    StackState s(capacity);
    AllocationPlan plan;
    plan.capacity = capacity;
    plan.input_id = "L2.in";
    plan.input_size = g.input.byte_size();

    int input_last_use = 0;
    for (std::size_t i = 0; i < g.layers.size(); ++i)
      for (const std::string& in : g.layers[i].inputs)
        if (in.empty()) input_last_use = static_cast<int>(i);
    plan.input_offset = push(s, plan.input_id, plan.input_size, /*low*/ true, "<input>", -1,
                             false, !opt.keep_input_alive, input_last_use + 1);

    for (std::size_t i = 0; i < g.layers.size(); ++i) {
      const ir::LayerSpec& l = g.layers[i];
      const tiling::TilingSolution& sol = tilings.at(i);
      LayerSizes sizes;
      sizes.y = sol.l2_y_bytes;
      sizes.w = sol.l2_w_bytes;
      sizes.weighted = ir::is_weighted(l.kind);
      sizes.pin_y = i + 1 == g.layers.size();
      ResidualNeed res = residual_need(g, static_cast<int>(i));
      if (res.needed) {
        sizes.x2 = static_cast<std::uint64_t>(l.h_y()) * l.w_y() * l.c_y();
        sizes.x2_lifetime = res.lifetime;
      }
      // an input produced by the direct predecessor may live in L3 (stage 3/4)
      auto producer_in_l3 = [&](const std::string& p) {
        if (p.empty()) return false;
        int pp = g.index_of(p);
        if (pp != static_cast<int>(i) - 1) return false;
        int ps = tilings[pp].l3.stage;
        return ps == 3 || ps == 4;
      };
      if (sol.l3.stage == 1) {
        sizes.x_stripe = sol.l2_x_bytes;
      } else if (!l.inputs.empty() && producer_in_l3(l.inputs[0])) {
        sizes.x_reload = static_cast<std::uint64_t>(l.h_x()) * l.w_x() * l.c_x();
      }
      if (l.inputs.size() > 1 && producer_in_l3(l.inputs[1]))
        throw Error("layer " + l.id +
                    ": second residual input produced in L3 by the direct predecessor is "
                    "unsupported");

      PlanLayer pl;
      pl.id = l.id;
      pl.offsets = allocate_layer(s, l, sizes);
      pl.y_id = sizes.y > 0 ? "L2.y." + l.id : "";
      pl.w_id = sizes.w > 0 ? "L2.w." + l.id : "";
      pl.x2_id = sizes.x2 > 0 ? "L2.x2." + l.id : "";
      pl.x_aux_id = (sizes.x_stripe > 0 || sizes.x_reload > 0) ? "L2.xa." + l.id : "";
      pl.y_size = sizes.y;
      pl.w_size = sizes.w;
      pl.x2_size = sizes.x2;
      pl.x_aux_size = sizes.x_stripe > 0 ? sizes.x_stripe : sizes.x_reload;

      // resolve input bindings
      auto bind_input = [&](const std::string& producer) -> std::string {
        if (!pl.x_aux_id.empty()) return pl.x_aux_id;  // stripe or reload buffer
        if (producer.empty()) return plan.input_id;
        int p = g.index_of(producer);
        if (p == static_cast<int>(i) - 1) return "L2.y." + producer;
        return "L2.x2." + producer;
      };
      pl.x_src = bind_input(l.inputs.empty() ? "" : l.inputs[0]);
      if (l.inputs.size() > 1) {
        const std::string& b2 = l.inputs[1];
        if (b2.empty())
          pl.x2_src = plan.input_id;
        else if (g.index_of(b2) == static_cast<int>(i) - 1)
          pl.x2_src = "L2.y." + b2;
        else
          pl.x2_src = "L2.x2." + b2;
      }
      plan.layers.push_back(std::move(pl));
    }

    // epilogue: release everything except the network output buffer
    std::string keep = g.layers.empty() ? "" : "L2.y." + g.layers.back().id;
    for (std::size_t i = 0; i < s.buffers.size(); ++i)
      if (!s.buffers[i].dead && s.buffers[i].id != keep)
        mark_dead(s, static_cast<int>(i), "<epilogue>");

    plan.peak_usage = s.peak;
    plan.events = std::move(s.events);
    return plan;
  } catch (const Error& e) {
    if (error) *error = e.what();
    return std::nullopt;
  }
}

}  // namespace

AllocationPlan plan_allocation(const ir::NetworkGraph& g,
                               const std::vector<tiling::TilingSolution>& tilings,
                               std::uint64_t capacity, const PlanOptions& opt) {
  if (tilings.size() != g.layers.size())
    throw Error("plan_allocation: tilings must cover all layers");
  std::string err;
  if (auto plan = try_plan(g, tilings, capacity, opt, &err)) return *plan;

  // find the minimal capacity that would succeed, for the error report
  std::uint64_t lo = capacity, hi = capacity ? capacity : 4;
  while (!try_plan(g, tilings, hi, opt, nullptr)) {
    if (hi > (std::uint64_t{1} << 40)) break;
    lo = hi;
    hi *= 2;
  }
  std::uint64_t need = hi;
  while (lo + 1 < hi) {
    std::uint64_t mid = lo + (hi - lo) / 2;
    if (try_plan(g, tilings, mid, opt, nullptr)) {
      hi = mid;
      need = mid;
    } else {
      lo = mid;
    }
  }
  throw Error(err + "; minimal L2 capacity that would succeed: " + std::to_string(need) +
              " bytes");
}

std::vector<Diagnostic> verify_plan(const AllocationPlan& plan) {
  std::vector<Diagnostic> out;
  struct Live {
    std::uint64_t offset, size;
  };
  std::map<std::string, Live> live;
  for (const AllocEvent& e : plan.events) {
    if (e.alloc) {
      if (live.count(e.id)) {
        out.push_back({e.id, "allocated twice without dealloc"});
        continue;
      }
      if (e.offset + align4(e.size) > plan.capacity)
        out.push_back({e.id, "allocation beyond capacity"});
      for (const auto& [id, b] : live) {
        std::uint64_t lo = std::max(e.offset, b.offset);
        std::uint64_t hi = std::min(e.offset + align4(e.size), b.offset + align4(b.size));
        if (lo < hi)
          out.push_back({e.id, "overlaps live buffer '" + id + "' in [" + std::to_string(lo) +
                                   ", " + std::to_string(hi) + ")"});
      }
      live[e.id] = {e.offset, e.size};
    } else {
      auto it = live.find(e.id);
      if (it == live.end()) {
        out.push_back({e.id, "dealloc of a buffer that is not live"});
        continue;
      }
      live.erase(it);
    }
  }
  return out;
}

std::string allocation_report_json(const AllocationPlan& plan) {
  json events = json::array();
  for (const AllocEvent& e : plan.events)
    events.push_back({{"op", e.alloc ? "alloc" : "dealloc"},
                      {"id", e.id},
                      {"offset", e.offset},
                      {"size", e.size},
                      {"layer", e.layer}});
  json j = {{"capacity", plan.capacity},
            {"peak_usage", plan.peak_usage},
            {"input", {{"id", plan.input_id}, {"offset", plan.input_offset},
                       {"size", plan.input_size}}},
            {"events", events}};
  return j.dump(2);
}

}  // namespace tinytiler::alloc
