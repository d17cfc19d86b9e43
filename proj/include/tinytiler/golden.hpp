#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "tinytiler/ir.hpp"

namespace tinytiler::golden {

/// A tensor of integer codes. Values are stored widened to int32 regardless of
/// the spec's bit width; the spec governs range checks and the byte encoding.
struct IntTensor {
  ir::QTensorSpec spec;
  std::vector<std::int32_t> data;  // flat, in the spec's layout

  static IntTensor zeros(const ir::QTensorSpec& spec);

  std::int32_t& at(int i0, int i1, int i2);        // activation (h, w, c) in spec layout
  std::int32_t at(int i0, int i1, int i2) const;
  std::int64_t flat_index(int h, int w, int c) const;  // logical coords, layout-aware

  void check_range() const;  // every element within the spec's representable range

  std::vector<std::uint8_t> to_bytes() const;  // little-endian, bits/8 bytes per element
  static IntTensor from_bytes(const ir::QTensorSpec& spec, std::span<const std::uint8_t> bytes);

  bool operator==(const IntTensor&) const = default;
};

/// Eq. 2: 32-bit integer accumulation of the layer's linear part (im2col + GEMM
/// for conv-like kinds). Output spec is a 32-bit accumulator (h_y, w_y, C_y).
IntTensor linear_accumulate(const IntTensor& x, const IntTensor& w, const ir::LayerSpec& layer);

/// Eq. 3: per-output-channel affine transform, 64-bit intermediate checked back
/// into int32.
IntTensor batch_norm(const IntTensor& phi, std::span<const std::int32_t> kappa,
                     std::span<const std::int32_t> lambda);

/// Eq. 4: y = clamp((m * phi') >> d, 0, 2^out_bits - 1); 64-bit product,
/// arithmetic shift.
IntTensor requantize(const IntTensor& phi_prime, std::int32_t m, int d, int out_bits,
                     const Rational& eps_y = Rational(1));

std::int32_t requantize_value(std::int64_t phi_prime, std::int32_t m, int d, int out_bits);

IntTensor run_layer(const ir::LayerSpec& layer, const std::vector<IntTensor>& inputs);

IntTensor run_network(const ir::NetworkGraph& graph, const IntTensor& input);

/// Per-layer outputs in graph order (last entry == run_network result).
std::vector<IntTensor> run_network_trace(const ir::NetworkGraph& graph, const IntTensor& input);

IntTensor convert_layout(const IntTensor& t, ir::Layout target);

/// Dequantized value t = alpha + eps * t_hat of one element, exact.
Rational dequantize_value(const ir::QTensorSpec& spec, std::int32_t code);

// Tensor dump format: one text header line "h w c <layout> <bits> <signed|unsigned>"
// followed by the little-endian payload.
void write_tensor(std::ostream& os, const IntTensor& t);
IntTensor read_tensor(std::istream& is);

}  // namespace tinytiler::golden
