#include "protograde/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "protograde/errors.hpp"

namespace protograde::ops {
namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                     shape_to_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
}

Tensor result(Tape& tape, Shape shape, std::initializer_list<const Tensor*> inputs) {
  return Tensor::zeros(std::move(shape), tape.tracks(inputs));
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, Padding padding) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  const std::size_t H = input.dim(0), W = input.dim(1), Cin = input.dim(2);
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), Cout = kernel.dim(3);
  if (kernel.dim(2) != Cin)
    throw ShapeError("conv2d: input has " + std::to_string(Cin) + " channels but kernel expects " +
                     std::to_string(kernel.dim(2)));
  if (padding == Padding::valid && (kh > H || kw > W))
    throw ShapeError("conv2d: kernel " + shape_to_string(kernel.shape()) + " larger than input " +
                     shape_to_string(input.shape()));

  const bool same = padding == Padding::same;
  const std::size_t Ho = same ? H : H - kh + 1;
  const std::size_t Wo = same ? W : W - kw + 1;
  const std::ptrdiff_t pt = same ? static_cast<std::ptrdiff_t>((kh - 1) / 2) : 0;
  const std::ptrdiff_t pl = same ? static_cast<std::ptrdiff_t>((kw - 1) / 2) : 0;

  Tensor out = result(tape, {Ho, Wo, Cout}, {&input, &kernel});

  // Calls fn(out_offset, in_offset, kernel_offset) for every valid tap.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t oh = 0; oh < Ho; ++oh) {
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        const std::size_t o = (oh * Wo + ow) * Cout;
        for (std::size_t i = 0; i < kh; ++i) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + i) - pt;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t j = 0; j < kw; ++j) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow + j) - pl;
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
            fn(o, (static_cast<std::size_t>(ih) * W + static_cast<std::size_t>(iw)) * Cin, (i * kw + j) * Cin * Cout);
          }
        }
      }
    }
  };

  {
    const double* x = input.data().data();
    const double* k = kernel.data().data();
    double* y = out.data().data();
    for_each_tap([&](std::size_t o, std::size_t in, std::size_t ko) {
      double* yo = y + o;
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const double xv = x[in + ci];
        const double* krow = k + ko + ci * Cout;
        for (std::size_t co = 0; co < Cout; ++co) yo[co] += xv * krow[co];
      }
    });
  }

  if (out.requires_grad()) {
    tape.record({input, kernel}, out, [input, kernel, out, for_each_tap, Cin, Cout]() mutable {
      const double* gy = out.grad().data();
      const double* x = input.data().data();
      const double* k = kernel.data().data();
      double* gx = input.requires_grad() ? input.grad().data() : nullptr;
      double* gk = kernel.requires_grad() ? kernel.grad().data() : nullptr;
      for_each_tap([&](std::size_t o, std::size_t in, std::size_t ko) {
        const double* go = gy + o;
        for (std::size_t ci = 0; ci < Cin; ++ci) {
          const double* krow = k + ko + ci * Cout;
          if (gx) {
            double acc = 0.0;
            for (std::size_t co = 0; co < Cout; ++co) acc += krow[co] * go[co];
            gx[in + ci] += acc;
          }
          if (gk) {
            const double xv = x[in + ci];
            double* gkrow = gk + ko + ci * Cout;
            for (std::size_t co = 0; co < Cout; ++co) gkrow[co] += xv * go[co];
          }
        }
      });
    });
  }
  return out;
}

Tensor add_channel_bias(Tape& tape, const Tensor& input, const Tensor& bias) {
  require_rank(bias, 1, "bias");
  const std::size_t C = bias.dim(0);
  if (input.shape().back() != C)
    throw ShapeError("bias of length " + std::to_string(C) + " does not match input " +
                     shape_to_string(input.shape()));
  Tensor out = result(tape, input.shape(), {&input, &bias});
  const auto x = input.data();
  const auto b = bias.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + b[i % C];
  if (out.requires_grad()) {
    tape.record({input, bias}, out, [input, bias, out, C]() mutable {
      const auto gy = out.grad();
      if (input.requires_grad()) {
        auto gx = input.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i % C] += gy[i];
      }
    });
  }
  return out;
}

Tensor max_pool2x2(Tape& tape, const Tensor& input) {
  require_rank(input, 3, "max_pool2x2");
  const std::size_t H = input.dim(0), W = input.dim(1), C = input.dim(2);
  if (H < 2 || W < 2) throw ShapeError("max_pool2x2 needs at least 2x2 input, got " + shape_to_string(input.shape()));
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor out = result(tape, {Ho, Wo, C}, {&input});
  std::vector<std::size_t> argmax(Ho * Wo * C);
  const auto x = input.data();
  auto y = out.data();
  for (std::size_t oh = 0; oh < Ho; ++oh)
    for (std::size_t ow = 0; ow < Wo; ++ow)
      for (std::size_t c = 0; c < C; ++c) {
        std::size_t best = ((2 * oh) * W + 2 * ow) * C + c;
        for (std::size_t dh = 0; dh < 2; ++dh)
          for (std::size_t dw = 0; dw < 2; ++dw) {
            const std::size_t idx = ((2 * oh + dh) * W + 2 * ow + dw) * C + c;
            if (x[idx] > x[best]) best = idx;
          }
        const std::size_t o = (oh * Wo + ow) * C + c;
        y[o] = x[best];
        argmax[o] = best;
      }
  if (out.requires_grad()) {
    tape.record({input}, out, [input, out, argmax = std::move(argmax)]() mutable {
      const auto gy = out.grad();
      auto gx = input.grad();
      for (std::size_t o = 0; o < gy.size(); ++o) gx[argmax[o]] += gy[o];
    });
  }
  return out;
}

Tensor gap(Tape& tape, const Tensor& input) {
  require_rank(input, 3, "gap");
  const std::size_t HW = input.dim(0) * input.dim(1), C = input.dim(2);
  Tensor out = result(tape, {C}, {&input});
  const auto x = input.data();
  auto y = out.data();
  for (std::size_t p = 0; p < HW; ++p)
    for (std::size_t c = 0; c < C; ++c) y[c] += x[p * C + c];
  const double inv = 1.0 / static_cast<double>(HW);
  for (auto& v : y) v *= inv;
  if (out.requires_grad()) {
    tape.record({input}, out, [input, out, HW, C, inv]() mutable {
      const auto gy = out.grad();
      auto gx = input.grad();
      for (std::size_t p = 0; p < HW; ++p)
        for (std::size_t c = 0; c < C; ++c) gx[p * C + c] += gy[c] * inv;
    });
  }
  return out;
}

Tensor dense(Tape& tape, const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require_rank(input, 1, "dense input");
  require_rank(weights, 2, "dense weights");
  require_rank(bias, 1, "dense bias");
  const std::size_t n = input.dim(0), m = weights.dim(1);
  if (weights.dim(0) != n || bias.dim(0) != m)
    throw ShapeError("dense: input " + shape_to_string(input.shape()) + ", weights " +
                     shape_to_string(weights.shape()) + ", bias " + shape_to_string(bias.shape()));
  Tensor out = result(tape, {m}, {&input, &weights, &bias});
  const auto x = input.data();
  const auto w = weights.data();
  auto y = out.data();
  std::copy(bias.data().begin(), bias.data().end(), y.begin());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y[j] += x[i] * w[i * m + j];
  if (out.requires_grad()) {
    tape.record({input, weights, bias}, out, [input, weights, bias, out, n, m]() mutable {
      const auto gy = out.grad();
      if (input.requires_grad()) {
        auto gx = input.grad();
        const auto w = weights.data();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gx[i] += w[i * m + j] * gy[j];
      }
      if (weights.requires_grad()) {
        auto gw = weights.grad();
        const auto x = input.data();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gw[i * m + j] += x[i] * gy[j];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t j = 0; j < m; ++j) gb[j] += gy[j];
      }
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  Tensor out = result(tape, x.shape(), {&x});
  const auto xv = x.data();
  auto y = out.data();
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  if (out.requires_grad()) {
    tape.record({x}, out, [x, out]() mutable {
      const auto gy = out.grad();
      const auto xv = x.data();
      auto gx = x.grad();
      for (std::size_t i = 0; i < gy.size(); ++i)
        if (xv[i] > 0.0) gx[i] += gy[i];
    });
  }
  return out;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  Tensor out = result(tape, x.shape(), {&x});
  const auto xv = x.data();
  auto y = out.data();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    // Split by sign so exp never overflows.
    if (xv[i] >= 0.0) {
      y[i] = 1.0 / (1.0 + std::exp(-xv[i]));
    } else {
      const double e = std::exp(xv[i]);
      y[i] = e / (1.0 + e);
    }
  }
  if (out.requires_grad()) {
    tape.record({x}, out, [x, out]() mutable {
      const auto gy = out.grad();
      const auto y = out.data();
      auto gx = x.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * y[i] * (1.0 - y[i]);
    });
  }
  return out;
}

Tensor softmax(Tape& tape, const Tensor& x) {
  require_rank(x, 1, "softmax");
  Tensor out = result(tape, x.shape(), {&x});
  const auto xv = x.data();
  auto y = out.data();
  const double shift = *std::max_element(xv.begin(), xv.end());
  double total = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) total += (y[i] = std::exp(xv[i] - shift));
  for (auto& v : y) v /= total;
  if (out.requires_grad()) {
    tape.record({x}, out, [x, out]() mutable {
      const auto gy = out.grad();
      const auto y = out.data();
      auto gx = x.grad();
      double dot = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) dot += gy[i] * y[i];
      for (std::size_t i = 0; i < y.size(); ++i) gx[i] += y[i] * (gy[i] - dot);
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = result(tape, a.shape(), {&a, &b});
  const auto av = a.data(), bv = b.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  if (out.requires_grad()) {
    tape.record({a, b}, out, [a, b, out]() mutable {
      const auto gy = out.grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto g = t->grad();
        for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
      }
    });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = result(tape, a.shape(), {&a, &b});
  const auto av = a.data(), bv = b.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  if (out.requires_grad()) {
    tape.record({a, b}, out, [a, b, out]() mutable {
      const auto gy = out.grad();
      const auto av = a.data(), bv = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
      }
    });
  }
  return out;
}

Tensor affine(Tape& tape, const Tensor& x, double scale, double shift) {
  Tensor out = result(tape, x.shape(), {&x});
  const auto xv = x.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = scale * xv[i] + shift;
  if (out.requires_grad()) {
    tape.record({x}, out, [x, out, scale]() mutable {
      const auto gy = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += scale * gy[i];
    });
  }
  return out;
}

Tensor mul_map(Tape& tape, const Tensor& x, const Tensor& map) {
  require_rank(x, 3, "mul_map input");
  require_rank(map, 3, "mul_map map");
  if (map.dim(0) != x.dim(0) || map.dim(1) != x.dim(1) || map.dim(2) != 1)
    throw ShapeError("mul_map: map " + shape_to_string(map.shape()) + " does not fit input " +
                     shape_to_string(x.shape()));
  const std::size_t HW = x.dim(0) * x.dim(1), C = x.dim(2);
  Tensor out = result(tape, x.shape(), {&x, &map});
  const auto xv = x.data(), mv = map.data();
  auto y = out.data();
  for (std::size_t p = 0; p < HW; ++p)
    for (std::size_t c = 0; c < C; ++c) y[p * C + c] = xv[p * C + c] * mv[p];
  if (out.requires_grad()) {
    tape.record({x, map}, out, [x, map, out, HW, C]() mutable {
      const auto gy = out.grad();
      const auto xv = x.data(), mv = map.data();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t p = 0; p < HW; ++p)
          for (std::size_t c = 0; c < C; ++c) gx[p * C + c] += gy[p * C + c] * mv[p];
      }
      if (map.requires_grad()) {
        auto gm = map.grad();
        for (std::size_t p = 0; p < HW; ++p)
          for (std::size_t c = 0; c < C; ++c) gm[p] += gy[p * C + c] * xv[p * C + c];
      }
    });
  }
  return out;
}

Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "concat_channels");
  require_rank(b, 3, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1))
    throw ShapeError("concat_channels: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  const std::size_t HW = a.dim(0) * a.dim(1), Ca = a.dim(2), Cb = b.dim(2), C = Ca + Cb;
  Tensor out = result(tape, {a.dim(0), a.dim(1), C}, {&a, &b});
  const auto av = a.data(), bv = b.data();
  auto y = out.data();
  for (std::size_t p = 0; p < HW; ++p) {
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(p * Ca), Ca, y.begin() + static_cast<std::ptrdiff_t>(p * C));
    std::copy_n(bv.begin() + static_cast<std::ptrdiff_t>(p * Cb), Cb,
                y.begin() + static_cast<std::ptrdiff_t>(p * C + Ca));
  }
  if (out.requires_grad()) {
    tape.record({a, b}, out, [a, b, out, HW, Ca, Cb, C]() mutable {
      const auto gy = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t p = 0; p < HW; ++p)
          for (std::size_t c = 0; c < Ca; ++c) ga[p * Ca + c] += gy[p * C + c];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t p = 0; p < HW; ++p)
          for (std::size_t c = 0; c < Cb; ++c) gb[p * Cb + c] += gy[p * C + Ca + c];
      }
    });
  }
  return out;
}

Tensor concat(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_rank(p, 1, "concat");
    n += p.size();
  }
  Tensor out = Tensor::zeros({n}, tape.tracks(parts));
  auto y = out.data();
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), y.begin() + static_cast<std::ptrdiff_t>(off));
    off += p.size();
  }
  if (out.requires_grad()) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    tape.record(inputs, out, [inputs, out]() mutable {
      const auto gy = out.grad();
      std::size_t off = 0;
      for (auto& p : inputs) {
        if (p.requires_grad()) {
          auto g = p.grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[off + i];
        }
        off += p.size();
      }
    });
  }
  return out;
}

Tensor stack(Tape& tape, std::span<const Tensor> scalars) {
  if (scalars.empty()) throw ShapeError("stack of zero tensors");
  for (const auto& s : scalars)
    if (s.size() != 1) throw ShapeError("stack expects scalars, got " + shape_to_string(s.shape()));
  return concat(tape, scalars);
}

Tensor mean(Tape& tape, const Tensor& x) {
  Tensor out = result(tape, {1}, {&x});
  double total = 0.0;
  for (double v : x.data()) total += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  out[0] = total * inv;
  if (out.requires_grad()) {
    tape.record({x}, out, [x, out, inv]() mutable {
      const double g = out.grad()[0] * inv;
      for (auto& v : x.grad()) v += g;
    });
  }
  return out;
}

Tensor cce_loss(Tape& tape, const Tensor& predicted, std::span<const double> target) {
  require_rank(predicted, 1, "cce_loss");
  if (predicted.size() != target.size())
    throw ShapeError("cce_loss: " + std::to_string(predicted.size()) + " probabilities vs " +
                     std::to_string(target.size()) + " targets");
  Tensor out = result(tape, {1}, {&predicted});
  const auto p = predicted.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (target[i] != 0.0) loss -= target[i] * std::log(std::max(p[i], kLogFloor));
  out[0] = loss;
  if (out.requires_grad()) {
    std::vector<double> y(target.begin(), target.end());
    tape.record({predicted}, out, [predicted, out, y = std::move(y)]() mutable {
      const double g = out.grad()[0];
      const auto p = predicted.data();
      auto gp = predicted.grad();
      for (std::size_t i = 0; i < p.size(); ++i)
        if (y[i] != 0.0 && p[i] > kLogFloor) gp[i] -= g * y[i] / p[i];
    });
  }
  return out;
}

}  // namespace protograde::ops
