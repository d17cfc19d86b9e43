#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tinytiler/common.hpp"

namespace tinytiler::ir {

enum class Layout { HWC, CHW, CoHWCi };
enum class LayerKind { Conv, Depthwise, Pointwise, Linear, PoolAvg, PoolMax, Add };

std::string to_string(Layout l);
std::string to_string(LayerKind k);
LayerKind layer_kind_from_string(const std::string& s);
Layout layout_from_string(const std::string& s);

bool is_weighted(LayerKind k);  // carries a weight tensor (conv/depthwise/pointwise/linear)
bool is_pool(LayerKind k);

/// Shape, layout, bit-width and quantum of one tensor.
struct QTensorSpec {
  std::vector<std::pair<std::string, int>> dims;  // names among {C_y,h,w,C_x,K_h,K_w}
  Layout layout{Layout::HWC};
  int bits{8};
  bool is_signed{false};
  Rational quantum{1};
  Rational zero_point{0};  // always 0 for activations

  int extent(const std::string& name) const;
  std::int64_t elem_count() const;
  std::uint64_t byte_size() const;

  static QTensorSpec activation(int h, int w, int c, const Rational& eps);
  static QTensorSpec accumulator(int h, int w, int c);
  static QTensorSpec weight(int c_y, int k_h, int k_w, int c_x, const Rational& eps,
                            const Rational& alpha = Rational(0));

  bool operator==(const QTensorSpec&) const = default;
};

struct Padding {
  int top{0}, bottom{0}, left{0}, right{0};
  bool operator==(const Padding&) const = default;
};

struct RequantParams {
  std::int32_t m{1};
  int d{0};
  bool operator==(const RequantParams&) const = default;
};

/// One fused canonical layer: linear op + optional BN + requantization.
struct LayerSpec {
  std::string id;
  LayerKind kind{LayerKind::Conv};
  QTensorSpec input;   // h_x, w_x, C_x
  std::optional<QTensorSpec> input2;   // add only: second branch
  QTensorSpec output;  // h_y, w_y, C_y
  std::optional<QTensorSpec> weights;  // C_y, K_h, K_w, C_x
  int kernel_h{1}, kernel_w{1};
  int stride{1};
  Padding pad;
  bool has_bn{false};
  std::vector<std::int32_t> bn_kappa, bn_lambda;  // length C_y
  RequantParams requant;
  std::array<RequantParams, 2> branch_requant{};  // add only: per-branch matching
  // Producer wiring. in_tensors/out_tensor are document tensor names;
  // inputs are producer layer ids ("" for the network input).
  std::vector<std::string> in_tensors;
  std::string out_tensor;
  std::vector<std::string> inputs;
  std::vector<std::int8_t> weight_data;  // CoHWCi order
  int activation_lifetime{1};  // layers executed before the output may be freed

  int h_x() const { return input.extent("h"); }
  int w_x() const { return input.extent("w"); }
  int c_x() const { return input.extent("c"); }
  int h_y() const { return output.extent("h"); }
  int w_y() const { return output.extent("w"); }
  int c_y() const { return output.extent("c"); }
  const std::vector<std::string>& residual_inputs() const { return inputs; }

  /// Size in bytes of one output channel's record in the packed weight image
  /// (CoHWCi bytes, then kappa/lambda when BN is present).
  std::uint64_t weight_record_bytes() const;
  std::uint64_t weight_channel_bytes() const;  // record without the BN tail
  std::uint64_t weight_image_bytes() const { return weight_record_bytes() * c_y(); }

  bool operator==(const LayerSpec&) const = default;
};

int expected_out_extent(int in, int kernel, int pad_lo, int pad_hi, int stride);

struct NetworkGraph {
  std::vector<LayerSpec> layers;  // topological order, longer residual branch first
  std::map<std::string, std::vector<std::string>> consumers;  // producer id -> consumer ids
  QTensorSpec input;
  QTensorSpec output;

  int index_of(const std::string& layer_id) const;
  const LayerSpec& layer(const std::string& id) const { return layers[index_of(id)]; }
  bool operator==(const NetworkGraph&) const = default;
};

/// Raw network-description node before fusion (linear op, bn, or quant).
struct RawNode {
  std::string id;
  std::string kind;  // conv|depthwise|pointwise|linear|pool_avg|pool_max|add|bn|quant
  std::vector<std::string> inputs;  // tensor names (linear ops only)
  std::string output;               // tensor name (linear ops only)
  int kernel_h{1}, kernel_w{1};
  int stride{1};
  Padding pad;
  std::string weights_file;
  Rational eps_w{1};
  Rational alpha_w{0};
  std::vector<std::int32_t> kappa, lambda;       // bn nodes
  std::int32_t m{1};
  int d{0};                                      // quant nodes
  std::array<RequantParams, 2> branch_requant{}; // add nodes: m1/d1, m2/d2
};

using BlobProvider = std::function<std::vector<std::uint8_t>(const std::string&)>;

NetworkGraph parse_network(const std::string& document, const BlobProvider& blobs);

/// Fuse raw nodes in producer order: each linear op absorbs at most one
/// following bn and exactly one quant node.
std::vector<LayerSpec> fuse_nodes(const std::vector<RawNode>& nodes,
                                  const std::map<std::string, QTensorSpec>& tensors,
                                  const BlobProvider& blobs);

std::vector<Diagnostic> validate_graph(const NetworkGraph& graph);

struct SerializedNetwork {
  std::string document;
  std::map<std::string, std::vector<std::uint8_t>> blobs;
};

SerializedNetwork serialize_network(const NetworkGraph& graph);

BlobProvider directory_blob_provider(const std::string& dir);

}  // namespace tinytiler::ir
