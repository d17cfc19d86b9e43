#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tinytiler/ir.hpp"
#include "tinytiler/tiler.hpp"

namespace tinytiler::alloc {

struct LiveBuffer {
  std::string id;
  std::uint64_t offset{0};
  std::uint64_t size{0};          // requested size
  std::uint64_t aligned_size{0};  // stack advance (4-byte aligned)
  int counter{0};                 // lifetime counter (activation buffers)
  bool counted{false};            // participates in the lifetime mechanism
  bool is_weight{false};
  bool low{true};
  int layer{-1};
  bool dead{false};  // marked for reclamation, pending lazy pop
};

struct AllocEvent {
  bool alloc{true};
  std::string id;
  std::uint64_t offset{0};
  std::uint64_t size{0};
  std::string layer;
  bool low{true};
};

/// Bidirectional allocation stack: two LIFO fronts growing toward each other,
/// the active corner switching at each weight allocation.
struct StackState {
  std::uint64_t capacity{0};
  std::uint64_t low_ptr{0};
  std::uint64_t high_ptr{0};
  bool begin_end{false};  // false: next weighted layer allocates at the low corner
  std::vector<LiveBuffer> buffers;
  std::vector<int> low_stack, high_stack;  // indices into buffers, push order
  std::map<std::string, int> index;        // live id -> buffer index
  std::vector<AllocEvent> events;
  std::uint64_t peak{0};
  int step{0};  // allocate_layer calls performed

  explicit StackState(std::uint64_t cap) : capacity(cap), high_ptr(cap) {}

  bool alive(const std::string& id) const { return index.count(id) != 0; }
  const LiveBuffer& buffer(const std::string& id) const { return buffers[index.at(id)]; }
};

struct LayerSizes {
  std::uint64_t y{0};
  std::uint64_t w{0};
  std::uint64_t x2{0};        // residual copy of the (full) output
  std::uint64_t x_stripe{0};  // stage-1 input stripe buffer
  std::uint64_t x_reload{0};  // full input reload when the producer output lives in L3
  int x2_lifetime{0};
  bool weighted{false};       // toggles the corner flag
  bool pin_y{false};          // network output: never reclaimed
};

struct LayerOffsets {
  std::uint64_t y_offset{0};
  std::uint64_t w_offset{0};
  std::uint64_t x2_offset{0};
  std::uint64_t x_aux_offset{0};  // stripe or reload buffer
  bool has_w{false}, has_x2{false}, has_x_aux{false};
};

/// The six-step procedure: corner select, dealloc the corner's previous weight
/// buffer, dealloc expired activations, alloc y then w (w nearest the
/// pointer), set the new lifetime, decrement counters.
LayerOffsets allocate_layer(StackState& state, const ir::LayerSpec& layer,
                            const LayerSizes& sizes);

struct PlanLayer {
  std::string id;
  LayerOffsets offsets;
  std::string y_id, w_id, x2_id, x_aux_id;
  std::string x_src;   // buffer bound as the layer input
  std::string x2_src;  // add: buffer bound as the second input
  std::uint64_t y_size{0}, w_size{0}, x2_size{0}, x_aux_size{0};
};

struct AllocationPlan {
  std::uint64_t capacity{0};
  std::uint64_t peak_usage{0};
  std::string input_id;  // "L2.in"
  std::uint64_t input_offset{0};
  std::uint64_t input_size{0};
  std::vector<PlanLayer> layers;
  std::vector<AllocEvent> events;

  const PlanLayer& layer(const std::string& id) const;
};

struct PlanOptions {
  bool keep_input_alive{true};
};

AllocationPlan plan_allocation(const ir::NetworkGraph& graph,
                               const std::vector<tiling::TilingSolution>& tilings,
                               std::uint64_t capacity, const PlanOptions& opt = {});

/// Pairwise disjointness of simultaneously live intervals over the whole event
/// trace; empty iff sound.
std::vector<Diagnostic> verify_plan(const AllocationPlan& plan);

std::string allocation_report_json(const AllocationPlan& plan);

}  // namespace tinytiler::alloc
