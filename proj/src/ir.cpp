#include "tinytiler/ir.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace tinytiler::ir {

using nlohmann::json;

std::string to_string(Layout l) {
  switch (l) {
    case Layout::HWC: return "HWC";
    case Layout::CHW: return "CHW";
    case Layout::CoHWCi: return "CoHWCi";
  }
  return "?";
}

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Depthwise: return "depthwise";
    case LayerKind::Pointwise: return "pointwise";
    case LayerKind::Linear: return "linear";
    case LayerKind::PoolAvg: return "pool_avg";
    case LayerKind::PoolMax: return "pool_max";
    case LayerKind::Add: return "add";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "conv") return LayerKind::Conv;
  if (s == "depthwise") return LayerKind::Depthwise;
  if (s == "pointwise") return LayerKind::Pointwise;
  if (s == "linear") return LayerKind::Linear;
  if (s == "pool_avg") return LayerKind::PoolAvg;
  if (s == "pool_max") return LayerKind::PoolMax;
  if (s == "add") return LayerKind::Add;
  throw Error("unknown layer kind: " + s);
}

Layout layout_from_string(const std::string& s) {
  if (s == "HWC") return Layout::HWC;
  if (s == "CHW") return Layout::CHW;
  if (s == "CoHWCi") return Layout::CoHWCi;
  throw Error("unknown layout: " + s);
}

bool is_weighted(LayerKind k) {
  return k == LayerKind::Conv || k == LayerKind::Depthwise || k == LayerKind::Pointwise ||
         k == LayerKind::Linear;
}

bool is_pool(LayerKind k) { return k == LayerKind::PoolAvg || k == LayerKind::PoolMax; }

int QTensorSpec::extent(const std::string& name) const {
  for (const auto& [n, e] : dims)
    if (n == name) return e;
  throw Error("tensor has no dimension named " + name);
}

std::int64_t QTensorSpec::elem_count() const {
  std::int64_t n = 1;
  for (const auto& [name, e] : dims) n *= e;
  return n;
}

std::uint64_t QTensorSpec::byte_size() const {
  return static_cast<std::uint64_t>(elem_count()) * (bits / 8);
}

QTensorSpec QTensorSpec::activation(int h, int w, int c, const Rational& eps) {
  QTensorSpec t;
  t.dims = {{"h", h}, {"w", w}, {"c", c}};
  t.layout = Layout::HWC;
  t.bits = 8;
  t.is_signed = false;
  t.quantum = eps;
  return t;
}

QTensorSpec QTensorSpec::accumulator(int h, int w, int c) {
  QTensorSpec t;
  t.dims = {{"h", h}, {"w", w}, {"c", c}};
  t.layout = Layout::HWC;
  t.bits = 32;
  t.is_signed = true;
  return t;
}

QTensorSpec QTensorSpec::weight(int c_y, int k_h, int k_w, int c_x, const Rational& eps,
                                const Rational& alpha) {
  QTensorSpec t;
  t.dims = {{"c_y", c_y}, {"k_h", k_h}, {"k_w", k_w}, {"c_x", c_x}};
  t.layout = Layout::CoHWCi;
  t.bits = 8;
  t.is_signed = true;
  t.quantum = eps;
  t.zero_point = alpha;
  return t;
}

std::uint64_t LayerSpec::weight_channel_bytes() const {
  if (!weights) return 0;
  return static_cast<std::uint64_t>(weights->extent("k_h")) * weights->extent("k_w") *
         weights->extent("c_x");
}

std::uint64_t LayerSpec::weight_record_bytes() const {
  std::uint64_t chan = weight_channel_bytes();
  if (!has_bn) return chan;  // bn-only layers still get an 8-byte record
  return align4(chan) + 8;   // kappa + lambda, int32 each
}

int expected_out_extent(int in, int kernel, int pad_lo, int pad_hi, int stride) {
  int span = in - kernel + pad_lo + pad_hi;
  if (span < 0 || stride < 1) return 0;
  return span / stride + 1;
}

int NetworkGraph::index_of(const std::string& layer_id) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].id == layer_id) return static_cast<int>(i);
  throw Error("no layer named " + layer_id);
}

namespace {

const json& require(const json& j, const char* key, const std::string& path) {
  if (!j.contains(key)) throw Error(path + ": missing required field '" + key + "'");
  return j.at(key);
}

int require_int(const json& j, const char* key, const std::string& path) {
  const json& v = require(j, key, path);
  if (!v.is_number_integer()) throw Error(path + "." + key + ": expected integer");
  return v.get<int>();
}

Rational get_rational(const json& v, const std::string& path) {
  if (v.is_string()) return rational_from_string(v.get<std::string>());
  if (v.is_number_integer()) return Rational(BigInt(v.get<long long>()), 1);
  if (v.is_number_float()) return rational_from_double(v.get<double>());
  throw Error(path + ": expected rational (string \"p/q\", decimal, or number)");
}

std::vector<std::int32_t> get_i32_array(const json& v, const std::string& path) {
  if (!v.is_array()) throw Error(path + ": expected array of integers");
  std::vector<std::int32_t> out;
  out.reserve(v.size());
  for (const auto& e : v) {
    if (!e.is_number_integer()) throw Error(path + ": expected array of integers");
    out.push_back(e.get<std::int32_t>());
  }
  return out;
}

std::map<std::string, QTensorSpec> parse_tensors(const json& doc) {
  std::map<std::string, QTensorSpec> tensors;
  const json& jt = require(doc, "tensors", "document");
  if (!jt.is_object()) throw Error("tensors: expected object");
  for (auto it = jt.begin(); it != jt.end(); ++it) {
    const std::string path = "tensors." + it.key();
    const json& t = it.value();
    int h = require_int(t, "h", path);
    int w = require_int(t, "w", path);
    int c = require_int(t, "c", path);
    Rational eps = t.contains("eps") ? get_rational(t.at("eps"), path + ".eps") : Rational(1);
    QTensorSpec spec = QTensorSpec::activation(h, w, c, eps);
    if (t.contains("bits")) spec.bits = t.at("bits").get<int>();
    if (t.contains("signed")) spec.is_signed = t.at("signed").get<bool>();
    if (spec.bits != 8 && spec.bits != 32)
      throw Error(path + ".bits: must be 8 or 32, got " + std::to_string(spec.bits));
    if (h <= 0 || w <= 0 || c <= 0) throw Error(path + ": extents must be positive");
    if (eps <= Rational(0)) throw Error(path + ".eps: quantum must be > 0");
    tensors.emplace(it.key(), std::move(spec));
  }
  return tensors;
}

std::vector<RawNode> parse_raw_nodes(const json& doc) {
  std::vector<RawNode> nodes;
  const json& jn = require(doc, "nodes", "document");
  if (!jn.is_array()) throw Error("nodes: expected array");
  for (std::size_t i = 0; i < jn.size(); ++i) {
    const std::string path = "nodes[" + std::to_string(i) + "]";
    const json& n = jn[i];
    RawNode raw;
    raw.kind = require(n, "kind", path).get<std::string>();
    if (n.contains("id")) raw.id = n.at("id").get<std::string>();
    if (raw.kind == "bn") {
      raw.kappa = get_i32_array(require(n, "kappa", path), path + ".kappa");
      raw.lambda = get_i32_array(require(n, "lambda", path), path + ".lambda");
      nodes.push_back(std::move(raw));
      continue;
    }
    if (raw.kind == "quant") {
      raw.m = require_int(n, "m", path);
      raw.d = require_int(n, "d", path);
      nodes.push_back(std::move(raw));
      continue;
    }
    // linear-op node
    if (raw.id.empty()) throw Error(path + ": linear-op node requires an 'id'");
    const json& inputs = require(n, "inputs", path);
    if (!inputs.is_array() || inputs.empty()) throw Error(path + ".inputs: expected tensor list");
    for (const auto& e : inputs) raw.inputs.push_back(e.get<std::string>());
    raw.output = require(n, "output", path).get<std::string>();
    if (n.contains("kernel")) {
      const json& k = n.at("kernel");
      if (!k.is_array() || k.size() != 2) throw Error(path + ".kernel: expected [K_h, K_w]");
      raw.kernel_h = k[0].get<int>();
      raw.kernel_w = k[1].get<int>();
    }
    if (n.contains("stride")) raw.stride = n.at("stride").get<int>();
    if (n.contains("padding")) {
      const json& p = n.at("padding");
      if (!p.is_array() || p.size() != 4)
        throw Error(path + ".padding: expected [top, bottom, left, right]");
      raw.pad = {p[0].get<int>(), p[1].get<int>(), p[2].get<int>(), p[3].get<int>()};
      if (raw.pad.top < 0 || raw.pad.bottom < 0 || raw.pad.left < 0 || raw.pad.right < 0)
        throw Error(path + ".padding: must be non-negative");
    }
    if (n.contains("weights")) raw.weights_file = n.at("weights").get<std::string>();
    if (n.contains("eps_w")) raw.eps_w = get_rational(n.at("eps_w"), path + ".eps_w");
    if (n.contains("alpha_w")) raw.alpha_w = get_rational(n.at("alpha_w"), path + ".alpha_w");
    if (raw.kind == "add") {
      raw.branch_requant[0].m = n.contains("m1") ? n.at("m1").get<std::int32_t>() : 1;
      raw.branch_requant[0].d = n.contains("d1") ? n.at("d1").get<int>() : 0;
      raw.branch_requant[1].m = n.contains("m2") ? n.at("m2").get<std::int32_t>() : 1;
      raw.branch_requant[1].d = n.contains("d2") ? n.at("d2").get<int>() : 0;
    }
    nodes.push_back(std::move(raw));
  }
  return nodes;
}

const QTensorSpec& tensor_or_throw(const std::map<std::string, QTensorSpec>& tensors,
                                   const std::string& name, const std::string& who) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error(who + ": dangling tensor reference '" + name + "'");
  return it->second;
}

void check_geometry(const LayerSpec& l) {
  int eh = expected_out_extent(l.h_x(), l.kernel_h, l.pad.top, l.pad.bottom, l.stride);
  int ew = expected_out_extent(l.w_x(), l.kernel_w, l.pad.left, l.pad.right, l.stride);
  if (eh != l.h_y() || ew != l.w_y()) {
    std::ostringstream os;
    os << "layer " << l.id << ": geometric inconsistency: declared output " << l.h_y() << "x"
       << l.w_y() << " but floor((h_x - K_h + p_top + p_bot)/s) + 1 = floor((" << l.h_x() << " - "
       << l.kernel_h << " + " << l.pad.top << " + " << l.pad.bottom << ")/" << l.stride
       << ") + 1 = " << eh << " (and " << ew << " for w)";
    throw Error(os.str());
  }
}

}  // namespace

std::vector<LayerSpec> fuse_nodes(const std::vector<RawNode>& nodes,
                                  const std::map<std::string, QTensorSpec>& tensors,
                                  const BlobProvider& blobs) {
  std::vector<LayerSpec> layers;
  bool pending = false;      // a linear op waiting for its quant node
  bool pending_bn = false;

  auto close_check = [&](const std::string& who) {
    if (pending)
      throw Error(who + ": layer " + layers.back().id + " has no quantization node");
  };

  for (const RawNode& raw : nodes) {
    if (raw.kind == "bn") {
      if (!pending) throw Error("bn node without preceding linear op");
      if (pending_bn) throw Error("layer " + layers.back().id + ": duplicate bn node");
      LayerSpec& l = layers.back();
      if (static_cast<int>(raw.kappa.size()) != l.c_y() ||
          static_cast<int>(raw.lambda.size()) != l.c_y())
        throw Error("layer " + l.id + ": kappa/lambda must have length C_y = " +
                    std::to_string(l.c_y()));
      l.has_bn = true;
      l.bn_kappa = raw.kappa;
      l.bn_lambda = raw.lambda;
      pending_bn = true;
      continue;
    }
    if (raw.kind == "quant") {
      if (!pending) throw Error("quant node without preceding linear op (consecutive quant?)");
      LayerSpec& l = layers.back();
      if (raw.d < 0 || raw.d > 31)
        throw Error("layer " + l.id + ": shift d must be in [0, 31], got " + std::to_string(raw.d));
      if (raw.m < 0) throw Error("layer " + l.id + ": requant multiplier m must be >= 0");
      l.requant = {raw.m, raw.d};
      pending = false;
      pending_bn = false;
      continue;
    }

    close_check("node " + raw.id);

    LayerSpec l;
    l.id = raw.id;
    l.kind = layer_kind_from_string(raw.kind);
    l.in_tensors = raw.inputs;
    l.out_tensor = raw.output;
    l.stride = raw.stride;
    l.pad = raw.pad;
    l.kernel_h = raw.kernel_h;
    l.kernel_w = raw.kernel_w;
    l.input = tensor_or_throw(tensors, raw.inputs[0], "node " + raw.id);
    l.output = tensor_or_throw(tensors, raw.output, "node " + raw.id);

    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Depthwise:
      case LayerKind::Pointwise:
      case LayerKind::Linear: {
        if (raw.inputs.size() != 1)
          throw Error("layer " + l.id + ": " + raw.kind + " takes exactly one input");
        if (l.kind == LayerKind::Pointwise) {
          if (raw.kernel_h != 1 || raw.kernel_w != 1 || l.pad != Padding{})
            throw Error("layer " + l.id + ": pointwise requires 1x1 kernel and zero padding");
        }
        if (l.kind == LayerKind::Linear) {
          l.kernel_h = l.h_x();
          l.kernel_w = l.w_x();
          l.pad = {};
          l.stride = 1;
          if (l.h_y() != 1 || l.w_y() != 1)
            throw Error("layer " + l.id + ": linear output must be 1x1xC");
        }
        if (l.kind == LayerKind::Depthwise && l.c_x() != l.c_y())
          throw Error("layer " + l.id + ": depthwise requires C_x = C_y (got " +
                      std::to_string(l.c_x()) + " vs " + std::to_string(l.c_y()) + ")");
        int ci = l.kind == LayerKind::Depthwise ? 1 : l.c_x();
        l.weights = QTensorSpec::weight(l.c_y(), l.kernel_h, l.kernel_w, ci, raw.eps_w,
                                        raw.alpha_w);
        if (raw.weights_file.empty())
          throw Error("layer " + l.id + ": missing 'weights' payload reference");
        std::vector<std::uint8_t> blob = blobs(raw.weights_file);
        if (blob.size() != l.weights->byte_size())
          throw Error("layer " + l.id + ": weight blob '" + raw.weights_file + "' has " +
                      std::to_string(blob.size()) + " bytes, expected " +
                      std::to_string(l.weights->byte_size()));
        l.weight_data.resize(blob.size());
        std::transform(blob.begin(), blob.end(), l.weight_data.begin(),
                       [](std::uint8_t b) { return static_cast<std::int8_t>(b); });
        check_geometry(l);
        break;
      }
      case LayerKind::PoolAvg:
      case LayerKind::PoolMax: {
        if (raw.inputs.size() != 1)
          throw Error("layer " + l.id + ": pooling takes exactly one input");
        if (l.c_x() != l.c_y())
          throw Error("layer " + l.id + ": pooling requires C_x = C_y");
        check_geometry(l);
        break;
      }
      case LayerKind::Add: {
        if (raw.inputs.size() != 2)
          throw Error("layer " + l.id + ": add takes exactly two inputs");
        const QTensorSpec& b = tensor_or_throw(tensors, raw.inputs[1], "node " + raw.id);
        if (b.extent("h") != l.h_x() || b.extent("w") != l.w_x() || b.extent("c") != l.c_x())
          throw Error("layer " + l.id + ": add branch shapes differ");
        l.input2 = b;
        if (l.h_y() != l.h_x() || l.w_y() != l.w_x() || l.c_y() != l.c_x())
          throw Error("layer " + l.id + ": add output shape must equal its inputs");
        l.kernel_h = l.kernel_w = 1;
        l.stride = 1;
        l.pad = {};
        l.branch_requant = raw.branch_requant;
        break;
      }
    }
    layers.push_back(std::move(l));
    pending = true;
    pending_bn = false;
  }
  close_check("end of node list");
  return layers;
}

namespace {

/// Topological order with the longer branch of every fork scheduled first
/// (longest-path-to-output priority, declaration order as tie break).
std::vector<int> priority_topo_order(const std::vector<LayerSpec>& layers,
                                     const std::vector<std::vector<int>>& producer_idx) {
  int n = static_cast<int>(layers.size());
  std::vector<std::vector<int>> consumers(n);
  std::vector<int> indeg(n, 0);
  for (int i = 0; i < n; ++i)
    for (int p : producer_idx[i])
      if (p >= 0) {
        consumers[p].push_back(i);
        ++indeg[i];
      }

  // longest path to any sink
  std::vector<int> dist(n, 0);
  std::vector<int> order_tmp;
  {
    std::vector<int> deg = indeg;
    std::vector<int> q;
    for (int i = 0; i < n; ++i)
      if (deg[i] == 0) q.push_back(i);
    while (!q.empty()) {
      int u = q.back();
      q.pop_back();
      order_tmp.push_back(u);
      for (int v : consumers[u])
        if (--deg[v] == 0) q.push_back(v);
    }
    if (static_cast<int>(order_tmp.size()) != n) throw Error("network graph contains a cycle");
    for (auto it = order_tmp.rbegin(); it != order_tmp.rend(); ++it)
      for (int v : consumers[*it]) dist[*it] = std::max(dist[*it], dist[v] + 1);
  }

  std::vector<int> order;
  std::set<std::pair<std::pair<int, int>, int>> ready;  // ((-dist, idx), idx)
  std::vector<int> deg = indeg;
  for (int i = 0; i < n; ++i)
    if (deg[i] == 0) ready.insert({{-dist[i], i}, i});
  while (!ready.empty()) {
    int u = ready.begin()->second;
    ready.erase(ready.begin());
    order.push_back(u);
    for (int v : consumers[u])
      if (--deg[v] == 0) ready.insert({{-dist[v], v}, v});
  }
  return order;
}

NetworkGraph assemble_graph(std::vector<LayerSpec> layers, const std::string& input_tensor,
                            const std::string& output_tensor,
                            const std::map<std::string, QTensorSpec>& tensors) {
  std::map<std::string, int> producer_of;  // tensor -> layer index
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (producer_of.count(l.out_tensor))
      throw Error("tensor '" + l.out_tensor + "' has more than one producer");
    producer_of[l.out_tensor] = static_cast<int>(i);
  }
  if (!tensors.count(input_tensor)) throw Error("document input names unknown tensor");
  if (!producer_of.count(output_tensor) && output_tensor != input_tensor)
    throw Error("document output tensor '" + output_tensor + "' has no producer");

  std::vector<std::vector<int>> producer_idx(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (const std::string& t : layers[i].in_tensors) {
      if (t == input_tensor) {
        producer_idx[i].push_back(-1);
      } else {
        auto it = producer_of.find(t);
        if (it == producer_of.end())
          throw Error("layer " + layers[i].id + ": dangling tensor reference '" + t + "'");
        producer_idx[i].push_back(it->second);
      }
    }
  }

  std::vector<int> order = priority_topo_order(layers, producer_idx);

  NetworkGraph g;
  g.input = tensors.at(input_tensor);
  g.output = tensors.at(output_tensor);
  std::vector<int> pos(layers.size());
  for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = static_cast<int>(i);
  for (int old_idx : order) {
    LayerSpec l = layers[old_idx];
    l.inputs.clear();
    for (int p : producer_idx[old_idx]) l.inputs.push_back(p < 0 ? "" : layers[p].id);
    g.layers.push_back(std::move(l));
  }
  // consumers map + lifetimes from consumer positions
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    int last_use = -1;
    for (std::size_t j = i + 1; j < g.layers.size(); ++j)
      for (const std::string& in : g.layers[j].inputs)
        if (in == g.layers[i].id) {
          last_use = static_cast<int>(j);
          g.consumers[g.layers[i].id].push_back(g.layers[j].id);
        }
    g.layers[i].activation_lifetime = last_use < 0 ? 1 : last_use - static_cast<int>(i);
  }
  return g;
}

}  // namespace

NetworkGraph parse_network(const std::string& document, const BlobProvider& blobs) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw Error(std::string("network document is not valid JSON: ") + e.what());
  }
  auto tensors = parse_tensors(doc);
  auto raw = parse_raw_nodes(doc);
  std::string input_tensor = require(doc, "input", "document").get<std::string>();
  std::string output_tensor = require(doc, "output", "document").get<std::string>();
  std::vector<LayerSpec> layers = fuse_nodes(raw, tensors, blobs);
  if (layers.empty()) throw Error("document contains no layers");
  NetworkGraph g = assemble_graph(std::move(layers), input_tensor, output_tensor, tensors);
  bool produced = false;
  for (const auto& l : g.layers) produced |= l.out_tensor == output_tensor;
  if (!produced) throw Error("output tensor is not produced by any layer");
  auto diags = validate_graph(g);
  if (!diags.empty())
    throw Error("invalid network: [" + diags.front().where + "] " + diags.front().message);
  return g;
}

std::vector<Diagnostic> validate_graph(const NetworkGraph& g) {
  std::vector<Diagnostic> out;
  std::map<std::string, int> pos;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    if (pos.count(g.layers[i].id))
      out.push_back({g.layers[i].id, "duplicate layer id"});
    pos[g.layers[i].id] = static_cast<int>(i);
  }

  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& l = g.layers[i];
    auto fail = [&](const std::string& msg) { out.push_back({l.id, msg}); };

    for (const std::string& in : l.inputs) {
      if (in.empty()) continue;
      auto it = pos.find(in);
      if (it == pos.end()) {
        fail("input references unknown layer '" + in + "'");
      } else if (it->second >= static_cast<int>(i)) {
        fail("not in topological order: consumes '" + in + "' at position " +
             std::to_string(it->second) + " (cycle:  " + l.id + " <-> " + in + ")");
      }
    }

    if (l.input.bits != 8 || l.input.is_signed) fail("input activations must be unsigned 8-bit");
    if (l.output.bits != 8 || l.output.is_signed) fail("output activations must be unsigned 8-bit");
    if (l.input.quantum <= Rational(0) || l.output.quantum <= Rational(0))
      fail("activation quantum must be > 0");
    if (l.input.zero_point != Rational(0) || l.output.zero_point != Rational(0))
      fail("activation zero point must be 0");
    if (l.input.byte_size() == 0 || l.output.byte_size() == 0)
      fail("tensor byte size must be > 0");
    if (l.requant.d < 0 || l.requant.d > 31) fail("requant shift out of [0, 31]");
    if (l.requant.m < 0) fail("requant multiplier must be >= 0");

    if (l.kind != LayerKind::Add) {
      int eh = expected_out_extent(l.h_x(), l.kernel_h, l.pad.top, l.pad.bottom, l.stride);
      int ew = expected_out_extent(l.w_x(), l.kernel_w, l.pad.left, l.pad.right, l.stride);
      if (eh != l.h_y() || ew != l.w_y())
        fail("geometry: expected output " + std::to_string(eh) + "x" + std::to_string(ew) +
             ", declared " + std::to_string(l.h_y()) + "x" + std::to_string(l.w_y()));
    }
    if (is_weighted(l.kind)) {
      if (!l.weights) {
        fail("missing weight spec");
      } else {
        if (l.weights->bits != 8 || !l.weights->is_signed) fail("weights must be signed 8-bit");
        if (l.weights->extent("c_y") != l.c_y()) fail("weight C_y mismatch");
        int ci = l.kind == LayerKind::Depthwise ? 1 : l.c_x();
        if (l.weights->extent("c_x") != ci) fail("weight C_x mismatch");
        if (static_cast<std::int64_t>(l.weight_data.size()) != l.weights->elem_count())
          fail("weight payload size mismatch");
      }
      if (l.kind == LayerKind::Depthwise && l.c_x() != l.c_y()) fail("depthwise requires C_x = C_y");
      if (l.kind == LayerKind::Pointwise &&
          (l.kernel_h != 1 || l.kernel_w != 1 || l.pad != Padding{}))
        fail("pointwise requires 1x1 kernel, zero padding");
    }
    if (l.kind == LayerKind::Add) {
      if (l.inputs.size() != 2) fail("add must have exactly 2 residual inputs");
      for (const std::string& in : l.inputs) {
        if (in.empty()) continue;
        auto it = pos.find(in);
        if (it == pos.end()) continue;
        const LayerSpec& p = g.layers[it->second];
        if (p.h_y() != l.h_y() || p.w_y() != l.w_y() || p.c_y() != l.c_y())
          fail("add branch '" + in + "' shape differs from output");
      }
    }
    if (l.has_bn && (static_cast<int>(l.bn_kappa.size()) != l.c_y() ||
                     static_cast<int>(l.bn_lambda.size()) != l.c_y()))
      fail("bn kappa/lambda must have length C_y");
  }
  return out;
}

SerializedNetwork serialize_network(const NetworkGraph& g) {
  json doc;
  json tensors = json::object();
  auto put_tensor = [&](const std::string& name, const QTensorSpec& t) {
    if (tensors.contains(name)) return;
    tensors[name] = {{"h", t.extent("h")},      {"w", t.extent("w")}, {"c", t.extent("c")},
                     {"bits", t.bits},          {"signed", t.is_signed},
                     {"eps", rational_to_string(t.quantum)}};
  };

  SerializedNetwork out;
  json nodes = json::array();
  for (const LayerSpec& l : g.layers) {
    put_tensor(l.in_tensors[0], l.input);
    if (l.in_tensors.size() > 1 && l.input2) put_tensor(l.in_tensors[1], *l.input2);
    put_tensor(l.out_tensor, l.output);

    json n;
    n["id"] = l.id;
    n["kind"] = to_string(l.kind);
    n["inputs"] = l.in_tensors;
    n["output"] = l.out_tensor;
    if (l.kind != LayerKind::Add && l.kind != LayerKind::Linear) {
      n["kernel"] = {l.kernel_h, l.kernel_w};
      n["stride"] = l.stride;
      n["padding"] = {l.pad.top, l.pad.bottom, l.pad.left, l.pad.right};
    }
    if (is_weighted(l.kind)) {
      std::string blob_name = l.id + ".bin";
      n["weights"] = blob_name;
      n["eps_w"] = rational_to_string(l.weights->quantum);
      if (l.weights->zero_point != Rational(0))
        n["alpha_w"] = rational_to_string(l.weights->zero_point);
      std::vector<std::uint8_t> blob(l.weight_data.size());
      std::transform(l.weight_data.begin(), l.weight_data.end(), blob.begin(),
                     [](std::int8_t b) { return static_cast<std::uint8_t>(b); });
      out.blobs.emplace(blob_name, std::move(blob));
    }
    if (l.kind == LayerKind::Add) {
      n["m1"] = l.branch_requant[0].m;
      n["d1"] = l.branch_requant[0].d;
      n["m2"] = l.branch_requant[1].m;
      n["d2"] = l.branch_requant[1].d;
    }
    nodes.push_back(n);
    if (l.has_bn) nodes.push_back({{"kind", "bn"}, {"kappa", l.bn_kappa}, {"lambda", l.bn_lambda}});
    nodes.push_back({{"kind", "quant"}, {"m", l.requant.m}, {"d", l.requant.d}});
  }

  // tensor names for the graph boundary
  std::string in_name, out_name;
  for (const LayerSpec& l : g.layers) {
    for (std::size_t k = 0; k < l.inputs.size(); ++k)
      if (l.inputs[k].empty()) in_name = l.in_tensors[k];
  }
  out_name = g.layers.back().out_tensor;

  doc["tensors"] = tensors;
  doc["nodes"] = nodes;
  doc["input"] = in_name;
  doc["output"] = out_name;
  out.document = doc.dump(2);
  return out;
}

BlobProvider directory_blob_provider(const std::string& dir) {
  return [dir](const std::string& name) {
    std::string path = dir.empty() ? name : dir + "/" + name;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open weight blob: " + path);
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    return data;
  };
}

}  // namespace tinytiler::ir
