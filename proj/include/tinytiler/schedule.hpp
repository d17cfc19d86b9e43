#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tinytiler/alloc.hpp"
#include "tinytiler/ir.hpp"
#include "tinytiler/tiler.hpp"

namespace tinytiler::sched {

enum class EventKind { DmaAsync, DmaWait, KernelCall, Swap, StackAlloc, StackDealloc };
enum class Channel { None, L3L2, L2L1 };
enum class Level { L1, L2, L3 };
enum class Role { XExec, XLoad, X2Exec, X2Load, WExec, WLoad, YExec, YLoad, Scratch, L2Slot, L3Region };

std::string to_string(EventKind k);
std::string to_string(Channel c);
std::string to_string(Level l);
std::string to_string(Role r);

struct Buffer {
  std::string id;
  Level level{Level::L1};
  std::uint64_t size{0};
  Role role{Role::L2Slot};
  int layer{-1};          // owning layer position (-1: network-level)
  std::uint64_t offset{0};  // within its level's address space
  bool preinit{false};      // content valid before the first event (weights, input)
};

/// One 1D/2D transfer: `count` runs of `length` bytes, strides advancing the
/// source and destination between runs. count == 1 means plain 1D.
struct Xfer {
  std::string src, dst;
  std::uint64_t src_offset{0}, dst_offset{0};
  std::uint64_t length{0};
  std::uint64_t src_stride{0}, dst_stride{0};
  std::uint64_t count{1};

  std::uint64_t bytes() const { return length * count; }
};

/// Output-region binding of one kernel call, in (sub-)layer coordinates, plus
/// the padding the tile sees at its edges.
struct TileBinding {
  int oc0{0}, oc1{0};
  int oy0{0}, oy1{0};
  int ow0{0}, ow1{0};
  int pad_t{0}, pad_b{0}, pad_l{0}, pad_r{0};
  int iy0{0}, iy1{0}, ix0{0}, ix1{0};  // loaded input rows/cols (layer coords)

  bool operator==(const TileBinding&) const = default;
};

struct Event {
  EventKind kind{EventKind::DmaAsync};
  Channel channel{Channel::None};
  int seq{-1};
  int layer{-1};     // layer position this event belongs to
  int tile{-1};      // tile index within the layer's grid
  int wait_on{-1};   // DmaWait: seq of the awaited DmaAsync
  Xfer xfer;         // DmaAsync
  std::string a, b;  // Swap operands / StackAlloc/Dealloc buffer id (in a)
  // KernelCall:
  std::vector<std::string> inputs;  // L1 buffer ids (x, and x2 for add)
  std::string weights;              // L1 buffer id ("" when none)
  std::string output;               // L1 buffer id
  TileBinding bind;
};

struct LayerTrips {
  int lto{1}, lth{1}, ltw{1}, lti{1};
};

struct Schedule {
  std::vector<Buffer> buffers;
  std::vector<Event> events;
  std::map<std::string, LayerTrips> trips;  // layer id -> main sub-layer trip counts
  std::map<int, std::string> layer_names;   // position -> id

  const Buffer& buffer(const std::string& id) const;
  bool has_buffer(const std::string& id) const;
};

/// L2 residency bindings one layer needs to build its tile loop.
struct LayerL2Bindings {
  std::string x_buf;            // L2 buffer holding the input
  std::uint64_t x_offset{0};    // byte offset of input row 0 inside x_buf
  int x_rows_base{0};           // layer-coordinate row stored at x_offset
  std::string x2_buf;           // add: second input
  std::uint64_t x2_offset{0};
  std::string w_buf;            // weight image (or slot region)
  std::uint64_t w_offset{0};
  int w_chan_base{0};           // first output channel stored at w_offset
  std::string y_buf;
  std::uint64_t y_offset{0};
  int y_rows_base{0};           // layer-coordinate row stored at y_offset
  int y_chan_count{0};          // channels per pixel in the y buffer (C_y of the buffer)
  int x_chan_count{0};          // channels per pixel in the x buffer
};

/// Region of a layer one tile loop covers (a whole layer at stage 0, one
/// stripe/slice otherwise).
struct SubRegion {
  int oy0{0}, oy1{0};  // output rows, layer coordinates
  int oc0{0}, oc1{0};  // output channels
};

/// Listing-1 double-buffered tile loop for one (sub-)layer, appended to `out`.
void append_tile_loop(Schedule& out, const ir::LayerSpec& layer, int layer_pos,
                      const tiling::TileDims& tile, const SubRegion& region,
                      const LayerL2Bindings& bind, int tile_index_base);

/// Standalone single-layer schedule (inputs/weights/outputs resident in L2).
Schedule build_layer_schedule(const ir::LayerSpec& layer, const tiling::TilingSolution& tiling,
                              const alloc::PlanLayer& offsets);

/// Full-network schedule: per-layer tile loops, L3 weight prefetch (Listing 2),
/// stage 1-4 stripe/slice streaming, residual copies, stack events.
Schedule build_network_schedule(const ir::NetworkGraph& graph,
                                const std::vector<tiling::TilingSolution>& tilings,
                                const alloc::AllocationPlan& plan,
                                const tiling::MemoryHierarchy& mem);

std::string schedule_to_json(const Schedule& s);

/// Per-tile input geometry shared by the scheduler and the simulator.
struct TileGeom {
  int iy0, iy1, ix0, ix1;          // loaded input rows/cols (clipped)
  int pad_t, pad_b, pad_l, pad_r;  // tile-local padding
};
TileGeom tile_input_geom(const ir::LayerSpec& layer, int oy0, int oy1, int ow0, int ow1);

}  // namespace tinytiler::sched
