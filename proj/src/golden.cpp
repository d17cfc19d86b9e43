#include "tinytiler/golden.hpp"

#include <algorithm>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

namespace tinytiler::golden {

namespace {

constexpr std::int64_t kI32Min = std::numeric_limits<std::int32_t>::min();
constexpr std::int64_t kI32Max = std::numeric_limits<std::int32_t>::max();

void check_i32(std::int64_t v, const char* what, const std::string& layer) {
  if (v < kI32Min || v > kI32Max)
    throw Error("layer " + layer + ": " + what + " overflows signed 32-bit range (" +
                std::to_string(v) + ")");
}

}  // namespace

IntTensor IntTensor::zeros(const ir::QTensorSpec& spec) {
  IntTensor t;
  t.spec = spec;
  t.data.assign(spec.elem_count(), 0);
  return t;
}

std::int64_t IntTensor::flat_index(int h, int w, int c) const {
  int H = spec.extent("h"), W = spec.extent("w"), C = spec.extent("c");
  (void)H;
  if (spec.layout == ir::Layout::CHW)
    return (static_cast<std::int64_t>(c) * H + h) * W + w;
  return (static_cast<std::int64_t>(h) * W + w) * C + c;
}

std::int32_t& IntTensor::at(int i0, int i1, int i2) { return data[flat_index(i0, i1, i2)]; }
std::int32_t IntTensor::at(int i0, int i1, int i2) const { return data[flat_index(i0, i1, i2)]; }

void IntTensor::check_range() const {
  std::int64_t lo, hi;
  if (spec.bits == 8) {
    lo = spec.is_signed ? -128 : 0;
    hi = spec.is_signed ? 127 : 255;
  } else {
    lo = kI32Min;
    hi = kI32Max;
  }
  for (std::int32_t v : data)
    if (v < lo || v > hi)
      throw Error("tensor element " + std::to_string(v) + " outside representable range");
}

std::vector<std::uint8_t> IntTensor::to_bytes() const {
  std::vector<std::uint8_t> out;
  if (spec.bits == 8) {
    out.reserve(data.size());
    for (std::int32_t v : data) out.push_back(static_cast<std::uint8_t>(v & 0xff));
  } else {
    out.reserve(data.size() * 4);
    for (std::int32_t v : data) {
      std::uint32_t u = static_cast<std::uint32_t>(v);
      out.push_back(u & 0xff);
      out.push_back((u >> 8) & 0xff);
      out.push_back((u >> 16) & 0xff);
      out.push_back((u >> 24) & 0xff);
    }
  }
  return out;
}

IntTensor IntTensor::from_bytes(const ir::QTensorSpec& spec, std::span<const std::uint8_t> bytes) {
  IntTensor t;
  t.spec = spec;
  std::size_t n = static_cast<std::size_t>(spec.elem_count());
  if (bytes.size() != n * (spec.bits / 8))
    throw Error("byte payload size mismatch: got " + std::to_string(bytes.size()) + ", expected " +
                std::to_string(n * (spec.bits / 8)));
  t.data.resize(n);
  if (spec.bits == 8) {
    for (std::size_t i = 0; i < n; ++i)
      t.data[i] = spec.is_signed ? static_cast<std::int32_t>(static_cast<std::int8_t>(bytes[i]))
                                 : static_cast<std::int32_t>(bytes[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t u = bytes[4 * i] | (bytes[4 * i + 1] << 8) | (bytes[4 * i + 2] << 16) |
                        (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
      t.data[i] = static_cast<std::int32_t>(u);
    }
  }
  return t;
}

namespace {

struct ConvGeom {
  int h_x, w_x, c_x, h_y, w_y, c_y, k_h, k_w, stride;
  ir::Padding pad;
};

ConvGeom geom_of(const ir::LayerSpec& l) {
  return {l.h_x(), l.w_x(), l.c_x(), l.h_y(), l.w_y(), l.c_y(), l.kernel_h, l.kernel_w,
          l.stride, l.pad};
}

/// Flatten each receptive field into one row, (kh, kw, ci) order, zeros where
/// the window leaves the padded input.
std::vector<std::int32_t> build_im2col(const IntTensor& x, const ConvGeom& g) {
  std::int64_t cols = static_cast<std::int64_t>(g.k_h) * g.k_w * g.c_x;
  std::vector<std::int32_t> mat(static_cast<std::size_t>(g.h_y) * g.w_y * cols, 0);
  for (int oy = 0; oy < g.h_y; ++oy) {
    for (int ox = 0; ox < g.w_y; ++ox) {
      std::int64_t row = (static_cast<std::int64_t>(oy) * g.w_y + ox) * cols;
      for (int kh = 0; kh < g.k_h; ++kh) {
        int iy = oy * g.stride - g.pad.top + kh;
        if (iy < 0 || iy >= g.h_x) continue;
        for (int kw = 0; kw < g.k_w; ++kw) {
          int ix = ox * g.stride - g.pad.left + kw;
          if (ix < 0 || ix >= g.w_x) continue;
          std::int64_t dst = row + (static_cast<std::int64_t>(kh) * g.k_w + kw) * g.c_x;
          for (int ci = 0; ci < g.c_x; ++ci) mat[dst + ci] = x.at(iy, ix, ci);
        }
      }
    }
  }
  return mat;
}

IntTensor conv_accumulate(const IntTensor& x, const IntTensor& w, const ir::LayerSpec& layer) {
  ConvGeom g = geom_of(layer);
  std::int64_t cols = static_cast<std::int64_t>(g.k_h) * g.k_w * g.c_x;
  std::vector<std::int32_t> mat = build_im2col(x, g);
  IntTensor phi = IntTensor::zeros(ir::QTensorSpec::accumulator(g.h_y, g.w_y, g.c_y));
  phi.spec.quantum = w.spec.quantum * x.spec.quantum;
  const std::int32_t* wd = w.data.data();
  for (std::int64_t px = 0; px < static_cast<std::int64_t>(g.h_y) * g.w_y; ++px) {
    const std::int32_t* row = mat.data() + px * cols;
    for (int oc = 0; oc < g.c_y; ++oc) {
      const std::int32_t* wr = wd + static_cast<std::int64_t>(oc) * cols;
      std::int64_t acc = 0;
      for (std::int64_t k = 0; k < cols; ++k) {
        acc += static_cast<std::int64_t>(row[k]) * wr[k];
        if (acc < kI32Min || acc > kI32Max)
          throw Error("layer " + layer.id + ": accumulator overflows signed 32-bit range");
      }
      phi.data[px * g.c_y + oc] = static_cast<std::int32_t>(acc);
    }
  }
  return phi;
}

/// Depthwise path mirrors the hybrid model: work on a CHW view so each channel
/// is a contiguous plane, vertical-stripe inner order.
IntTensor depthwise_accumulate(const IntTensor& x, const IntTensor& w, const ir::LayerSpec& layer) {
  ConvGeom g = geom_of(layer);
  IntTensor xc = x.spec.layout == ir::Layout::CHW ? x : convert_layout(x, ir::Layout::CHW);
  IntTensor phi = IntTensor::zeros(ir::QTensorSpec::accumulator(g.h_y, g.w_y, g.c_y));
  phi.spec.quantum = w.spec.quantum * x.spec.quantum;
  for (int c = 0; c < g.c_y; ++c) {
    const std::int32_t* plane = xc.data.data() + static_cast<std::int64_t>(c) * g.h_x * g.w_x;
    const std::int32_t* ker = w.data.data() + static_cast<std::int64_t>(c) * g.k_h * g.k_w;
    for (int ox = 0; ox < g.w_y; ++ox) {
      for (int oy = 0; oy < g.h_y; ++oy) {
        std::int64_t acc = 0;
        for (int kw = 0; kw < g.k_w; ++kw) {
          int ix = ox * g.stride - g.pad.left + kw;
          if (ix < 0 || ix >= g.w_x) continue;
          for (int kh = 0; kh < g.k_h; ++kh) {
            int iy = oy * g.stride - g.pad.top + kh;
            if (iy < 0 || iy >= g.h_x) continue;
            acc += static_cast<std::int64_t>(plane[iy * g.w_x + ix]) * ker[kh * g.k_w + kw];
            check_i32(acc, "accumulator", layer.id);
          }
        }
        phi.at(oy, ox, c) = static_cast<std::int32_t>(acc);
      }
    }
  }
  return phi;
}

}  // namespace

IntTensor linear_accumulate(const IntTensor& x, const IntTensor& w, const ir::LayerSpec& layer) {
  if (!ir::is_weighted(layer.kind))
    throw Error("layer " + layer.id + ": linear_accumulate on a non-weighted kind");
  if (layer.kind == ir::LayerKind::Depthwise) return depthwise_accumulate(x, w, layer);
  return conv_accumulate(x, w, layer);
}

IntTensor batch_norm(const IntTensor& phi, std::span<const std::int32_t> kappa,
                     std::span<const std::int32_t> lambda) {
  int c = phi.spec.extent("c");
  if (static_cast<int>(kappa.size()) != c || static_cast<int>(lambda.size()) != c)
    throw Error("batch_norm: kappa/lambda length must equal C_y");
  IntTensor out = phi;
  std::int64_t n = phi.spec.elem_count();
  for (std::int64_t i = 0; i < n; ++i) {
    int ch = static_cast<int>(i % c);  // HWC: channel innermost
    std::int64_t v = static_cast<std::int64_t>(kappa[ch]) * phi.data[i] + lambda[ch];
    check_i32(v, "batch-norm result", "<bn>");
    out.data[i] = static_cast<std::int32_t>(v);
  }
  return out;
}

std::int32_t requantize_value(std::int64_t phi_prime, std::int32_t m, int d, int out_bits) {
  std::int64_t p = static_cast<std::int64_t>(m) * phi_prime;
  std::int64_t shifted = p >> d;  // arithmetic shift, sign-preserving
  std::int64_t hi = (std::int64_t{1} << out_bits) - 1;
  return static_cast<std::int32_t>(std::clamp<std::int64_t>(shifted, 0, hi));
}

IntTensor requantize(const IntTensor& phi_prime, std::int32_t m, int d, int out_bits,
                     const Rational& eps_y) {
  if (d < 0 || d > 31) throw Error("requantize: shift d out of [0, 31]");
  if (m < 0) throw Error("requantize: m must be >= 0");
  IntTensor out;
  out.spec = ir::QTensorSpec::activation(phi_prime.spec.extent("h"), phi_prime.spec.extent("w"),
                                         phi_prime.spec.extent("c"), eps_y);
  out.spec.layout = phi_prime.spec.layout;
  out.data.resize(phi_prime.data.size());
  for (std::size_t i = 0; i < phi_prime.data.size(); ++i)
    out.data[i] = requantize_value(phi_prime.data[i], m, d, out_bits);
  return out;
}

namespace {

IntTensor pool_accumulate(const IntTensor& x, const ir::LayerSpec& layer) {
  ConvGeom g = geom_of(layer);
  IntTensor phi = IntTensor::zeros(ir::QTensorSpec::accumulator(g.h_y, g.w_y, g.c_y));
  bool is_max = layer.kind == ir::LayerKind::PoolMax;
  for (int oy = 0; oy < g.h_y; ++oy) {
    for (int ox = 0; ox < g.w_y; ++ox) {
      for (int c = 0; c < g.c_y; ++c) {
        std::int64_t acc = 0;
        std::int32_t best = 0;
        bool any = false;
        for (int kh = 0; kh < g.k_h; ++kh) {
          int iy = oy * g.stride - g.pad.top + kh;
          if (iy < 0 || iy >= g.h_x) continue;
          for (int kw = 0; kw < g.k_w; ++kw) {
            int ix = ox * g.stride - g.pad.left + kw;
            if (ix < 0 || ix >= g.w_x) continue;
            std::int32_t v = x.at(iy, ix, c);
            acc += v;
            check_i32(acc, "pool accumulator", layer.id);
            best = any ? std::max(best, v) : v;
            any = true;
          }
        }
        phi.at(oy, ox, c) = is_max ? best : static_cast<std::int32_t>(acc);
      }
    }
  }
  return phi;
}

IntTensor add_accumulate(const IntTensor& a, const IntTensor& b, const ir::LayerSpec& layer) {
  if (a.data.size() != b.data.size())
    throw Error("layer " + layer.id + ": add branch sizes differ");
  IntTensor phi = IntTensor::zeros(
      ir::QTensorSpec::accumulator(layer.h_y(), layer.w_y(), layer.c_y()));
  const auto& q0 = layer.branch_requant[0];
  const auto& q1 = layer.branch_requant[1];
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    std::int64_t t0 = (static_cast<std::int64_t>(q0.m) * a.data[i]) >> q0.d;
    std::int64_t t1 = (static_cast<std::int64_t>(q1.m) * b.data[i]) >> q1.d;
    check_i32(t0, "branch term", layer.id);
    check_i32(t1, "branch term", layer.id);
    std::int64_t s = t0 + t1;
    check_i32(s, "add accumulator", layer.id);
    phi.data[i] = static_cast<std::int32_t>(s);
  }
  return phi;
}

}  // namespace

IntTensor run_layer(const ir::LayerSpec& layer, const std::vector<IntTensor>& inputs) {
  std::size_t arity = layer.kind == ir::LayerKind::Add ? 2 : 1;
  if (inputs.size() != arity)
    throw Error("layer " + layer.id + ": expected " + std::to_string(arity) + " input(s)");

  IntTensor phi;
  switch (layer.kind) {
    case ir::LayerKind::Conv:
    case ir::LayerKind::Depthwise:
    case ir::LayerKind::Pointwise:
    case ir::LayerKind::Linear: {
      IntTensor w;
      w.spec = *layer.weights;
      w.data.assign(layer.weight_data.begin(), layer.weight_data.end());
      phi = linear_accumulate(inputs[0], w, layer);
      break;
    }
    case ir::LayerKind::PoolAvg:
    case ir::LayerKind::PoolMax:
      phi = pool_accumulate(inputs[0], layer);
      break;
    case ir::LayerKind::Add:
      phi = add_accumulate(inputs[0], inputs[1], layer);
      break;
  }
  if (layer.has_bn) phi = batch_norm(phi, layer.bn_kappa, layer.bn_lambda);
  IntTensor y = requantize(phi, layer.requant.m, layer.requant.d, 8, layer.output.quantum);
  return y;
}

std::vector<IntTensor> run_network_trace(const ir::NetworkGraph& graph, const IntTensor& input) {
  if (input.spec.extent("h") != graph.input.extent("h") ||
      input.spec.extent("w") != graph.input.extent("w") ||
      input.spec.extent("c") != graph.input.extent("c"))
    throw Error("network input shape mismatch");
  std::map<std::string, const IntTensor*> produced;
  std::vector<IntTensor> trace;
  trace.reserve(graph.layers.size());
  for (const ir::LayerSpec& l : graph.layers) {
    std::vector<IntTensor> ins;
    for (const std::string& p : l.inputs) {
      if (p.empty()) {
        ins.push_back(input);
      } else {
        auto it = produced.find(p);
        if (it == produced.end()) throw Error("layer " + l.id + ": producer '" + p + "' not run");
        ins.push_back(*it->second);
      }
    }
    trace.push_back(run_layer(l, ins));
    produced[l.id] = &trace.back();
  }
  return trace;
}

IntTensor run_network(const ir::NetworkGraph& graph, const IntTensor& input) {
  auto trace = run_network_trace(graph, input);
  return trace.back();
}

IntTensor convert_layout(const IntTensor& t, ir::Layout target) {
  if (target != ir::Layout::HWC && target != ir::Layout::CHW)
    throw Error("convert_layout: target must be HWC or CHW");
  if (t.spec.layout == target) return t;
  int H = t.spec.extent("h"), W = t.spec.extent("w"), C = t.spec.extent("c");
  IntTensor out;
  out.spec = t.spec;
  out.spec.layout = target;
  out.data.resize(t.data.size());
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      for (int c = 0; c < C; ++c) out.data[out.flat_index(h, w, c)] = t.data[t.flat_index(h, w, c)];
  return out;
}

Rational dequantize_value(const ir::QTensorSpec& spec, std::int32_t code) {
  return spec.zero_point + spec.quantum * Rational(code);
}

void write_tensor(std::ostream& os, const IntTensor& t) {
  os << t.spec.extent("h") << " " << t.spec.extent("w") << " " << t.spec.extent("c") << " "
     << ir::to_string(t.spec.layout) << " " << t.spec.bits << " "
     << (t.spec.is_signed ? "signed" : "unsigned") << "\n";
  auto bytes = t.to_bytes();
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

IntTensor read_tensor(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw Error("tensor dump: missing header line");
  std::istringstream hs(header);
  int h, w, c, bits;
  std::string layout, sign;
  if (!(hs >> h >> w >> c >> layout >> bits >> sign))
    throw Error("tensor dump: malformed header '" + header + "'");
  ir::QTensorSpec spec = ir::QTensorSpec::activation(h, w, c, Rational(1));
  spec.layout = ir::layout_from_string(layout);
  spec.bits = bits;
  spec.is_signed = sign == "signed";
  std::vector<std::uint8_t> bytes(spec.byte_size());
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (is.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw Error("tensor dump: truncated payload");
  return IntTensor::from_bytes(spec, bytes);
}

}  // namespace tinytiler::golden
