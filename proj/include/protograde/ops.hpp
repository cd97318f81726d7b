#pragma once

// Differentiable primitives. Every op takes the tape first and records itself
// only when the tape is recording and some operand requires grad.
//
// Layout conventions: feature maps are [H, W, C], conv kernels are
// [kh, kw, Cin, Cout], dense weights are [n_in, n_out].

#include <span>
#include <vector>

#include "protograde/tensor.hpp"

namespace protograde::ops {

enum class Padding { same, valid };

/// Stride-1 cross-correlation. `same` pads top/left with (k-1)/2 zeros.
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, Padding padding);

/// Adds bias[c] to every spatial cell of channel c; also accepts 1-D inputs.
Tensor add_channel_bias(Tape& tape, const Tensor& input, const Tensor& bias);

/// 2x2 max-pool with stride 2, floor semantics on odd dims.
Tensor max_pool2x2(Tape& tape, const Tensor& input);

/// Global average pool [H, W, C] -> [C].
Tensor gap(Tape& tape, const Tensor& input);

/// input[n] x weights[n, m] + bias[m].
Tensor dense(Tape& tape, const Tensor& input, const Tensor& weights, const Tensor& bias);

Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
/// Max-shifted softmax over a 1-D vector.
Tensor softmax(Tape& tape, const Tensor& x);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
/// scale * x + shift, elementwise.
Tensor affine(Tape& tape, const Tensor& x, double scale, double shift);

/// x[H, W, C] * map[H, W, 1], broadcast over channels.
Tensor mul_map(Tape& tape, const Tensor& x, const Tensor& map);

/// Concatenate [H, W, Ca] and [H, W, Cb] along channels.
Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b);
/// Concatenate 1-D vectors.
Tensor concat(Tape& tape, std::span<const Tensor> parts);

/// Gather scalars into a 1-D vector.
Tensor stack(Tape& tape, std::span<const Tensor> scalars);
/// Mean of all elements -> scalar.
Tensor mean(Tape& tape, const Tensor& x);

/// Floor applied to probabilities before the log in cce_loss.
inline constexpr double kLogFloor = 1e-12;

/// -sum(target * log(max(predicted, kLogFloor))).
Tensor cce_loss(Tape& tape, const Tensor& predicted, std::span<const double> target);

}  // namespace protograde::ops
