#include "afcv/core/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "afcv/core/error.hpp"

namespace afcv::ops {

using ag::Node;

namespace {

using MatR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

Node* in(ag::Node& self, std::size_t i) { return self.inputs[i].get(); }

template <typename Fwd, typename Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  Tensor out(a.shape());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return ag::make_result(std::move(out), {a}, [deriv](ag::Node& self) {
    auto* x = in(self, 0);
    if (!x->requires_grad) return;
    auto& g = x->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * deriv(x->value[i], self.value[i]);
    }
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return ag::make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto* x = in(self, k);
      if (!x->requires_grad) continue;
      auto& g = x->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return ag::make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto* x = in(self, k);
      if (!x->requires_grad) continue;
      const Scalar sign = k == 0 ? 1.0 : -1.0;
      auto& g = x->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return ag::make_result(std::move(out), {a, b}, [](Node& self) {
    auto* x = in(self, 0);
    auto* y = in(self, 1);
    if (x->requires_grad) {
      auto& g = x->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y->value[i];
    }
    if (y->requires_grad) {
      auto& g = y->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x->value[i];
    }
  });
}

Var scale(const Var& a, Scalar s) {
  return unary(a, [s](Scalar x) { return s * x; }, [s](Scalar, Scalar) { return s; });
}

Var add_scalar(const Var& a, Scalar s) {
  return unary(a, [s](Scalar x) { return x + s; }, [](Scalar, Scalar) { return 1.0; });
}

Var relu(const Var& a) {
  return unary(
      a, [](Scalar x) { return x > 0 ? x : 0.0; },
      [](Scalar x, Scalar) { return x > 0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
  return unary(
      a, [](Scalar x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](Scalar, Scalar y) { return y * (1.0 - y); });
}

Var exp(const Var& a) {
  return unary(a, [](Scalar x) { return std::exp(x); }, [](Scalar, Scalar y) { return y; });
}

Var square(const Var& a) {
  return unary(a, [](Scalar x) { return x * x; }, [](Scalar x, Scalar) { return 2.0 * x; });
}

Var sqrt(const Var& a, Scalar eps) {
  return unary(
      a, [eps](Scalar x) { return std::sqrt(x + eps); },
      [](Scalar, Scalar y) { return y > 0 ? 0.5 / y : 0.0; });
}

Var sum(const Var& a) {
  Scalar s = 0;
  for (Scalar v : a.value().values()) s += v;
  return ag::make_result(Tensor({1}, s), {a}, [](Node& self) {
    auto* x = in(self, 0);
    auto& g = x->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

Var mean(const Var& a) {
  if (a.value().size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<Scalar>(a.value().size()));
}

Var add_n(const std::vector<Var>& terms) {
  Scalar s = 0;
  for (const auto& t : terms) {
    if (t.value().size() != 1) throw ShapeError("add_n expects scalars");
    s += t.value()[0];
  }
  return ag::make_result(Tensor({1}, s), terms, [](Node& self) {
    for (auto& x : self.inputs) {
      if (x->requires_grad) x->grad_buffer()[0] += self.grad[0];
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return ag::make_result(std::move(out), {a}, [](Node& self) {
    auto& g = in(self, 0)->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels of nothing");
  const int h = parts[0].value().dim(1);
  const int w = parts[0].value().dim(2);
  int channels = 0;
  for (const auto& p : parts) {
    require_rank(p, 3, "concat_channels");
    if (p.value().dim(1) != h || p.value().dim(2) != w) {
      throw ShapeError("concat_channels: spatial mismatch " + shape_str(p.shape()) + " vs " +
                       shape_str(parts[0].shape()));
    }
    channels += p.value().dim(0);
  }
  Tensor out({channels, h, w});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + offset);
    offset += p.value().size();
  }
  return ag::make_result(std::move(out), parts, [](Node& self) {
    std::size_t off = 0;
    for (auto& x : self.inputs) {
      const std::size_t n = x->value.size();
      if (x->requires_grad) {
        auto& g = x->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
      }
      off += n;
    }
  });
}

Var tile_spatial(const Var& v, int height, int width) {
  require_rank(v, 1, "tile_spatial");
  const int c = v.value().dim(0);
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  Tensor out({c, height, width});
  for (int k = 0; k < c; ++k) {
    std::fill(out.data() + k * plane, out.data() + (k + 1) * plane, v.value()[k]);
  }
  return ag::make_result(std::move(out), {v}, [plane](Node& self) {
    auto& g = in(self, 0)->grad_buffer();
    for (std::size_t k = 0; k < g.size(); ++k) {
      Scalar s = 0;
      for (std::size_t i = 0; i < plane; ++i) s += self.grad[k * plane + i];
      g[k] += s;
    }
  });
}

Var global_avg_pool(const Var& x) {
  require_rank(x, 3, "global_avg_pool");
  const int c = x.value().dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.value().dim(1)) * x.value().dim(2);
  Tensor out({c});
  for (int k = 0; k < c; ++k) {
    Scalar s = 0;
    for (std::size_t i = 0; i < plane; ++i) s += x.value()[k * plane + i];
    out[k] = s / static_cast<Scalar>(plane);
  }
  return ag::make_result(std::move(out), {x}, [plane](Node& self) {
    auto& g = in(self, 0)->grad_buffer();
    for (std::size_t k = 0; k < self.grad.size(); ++k) {
      const Scalar d = self.grad[k] / static_cast<Scalar>(plane);
      for (std::size_t i = 0; i < plane; ++i) g[k * plane + i] += d;
    }
  });
}

Var gather_location(const Var& x, int y, int x_pos) {
  require_rank(x, 3, "gather_location");
  const auto& v = x.value();
  if (y < 0 || y >= v.dim(1) || x_pos < 0 || x_pos >= v.dim(2)) {
    throw ShapeError("gather_location: (" + std::to_string(y) + ", " + std::to_string(x_pos) +
                     ") outside " + shape_str(v.shape()));
  }
  const int c = v.dim(0);
  Tensor out({c});
  for (int k = 0; k < c; ++k) out[k] = v.at(k, y, x_pos);
  return ag::make_result(std::move(out), {x}, [y, x_pos](Node& self) {
    auto& g = in(self, 0)->grad_buffer();
    for (int k = 0; k < static_cast<int>(self.grad.size()); ++k) g.at(k, y, x_pos) += self.grad[k];
  });
}

Var l2_normalize(const Var& v, Scalar eps) {
  Scalar sq = 0;
  for (Scalar a : v.value().values()) sq += a * a;
  const Scalar norm = std::sqrt(sq + eps);
  Tensor out(v.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v.value()[i] / norm;
  return ag::make_result(std::move(out), {v}, [norm](Node& self) {
    // d(v/n) = (g - y <y, g>) / n
    Scalar dot = 0;
    for (std::size_t i = 0; i < self.grad.size(); ++i) dot += self.value[i] * self.grad[i];
    auto& g = in(self, 0)->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += (self.grad[i] - self.value[i] * dot) / norm;
  });
}

namespace {

struct AxisTaps {
  std::vector<int> lo, hi;
  std::vector<Scalar> w_hi;
};

AxisTaps bilinear_taps(int in_size, int out_size) {
  AxisTaps taps;
  taps.lo.resize(out_size);
  taps.hi.resize(out_size);
  taps.w_hi.resize(out_size);
  const Scalar ratio = static_cast<Scalar>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    Scalar src = (o + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    int lo = static_cast<int>(src);
    if (lo > in_size - 1) lo = in_size - 1;
    const int hi = std::min(lo + 1, in_size - 1);
    taps.lo[o] = lo;
    taps.hi[o] = hi;
    taps.w_hi[o] = src - lo;
  }
  return taps;
}

}  // namespace

Var upsample_bilinear(const Var& x, int out_height, int out_width) {
  require_rank(x, 3, "upsample_bilinear");
  const int c = x.value().dim(0);
  const int h = x.value().dim(1);
  const int w = x.value().dim(2);
  if (out_height <= 0 || out_width <= 0) throw ShapeError("upsample_bilinear: empty output");
  auto ty = std::make_shared<AxisTaps>(bilinear_taps(h, out_height));
  auto tx = std::make_shared<AxisTaps>(bilinear_taps(w, out_width));
  Tensor out({c, out_height, out_width});
  const auto& v = x.value();
  for (int k = 0; k < c; ++k) {
    for (int oy = 0; oy < out_height; ++oy) {
      const Scalar wy = ty->w_hi[oy];
      for (int ox = 0; ox < out_width; ++ox) {
        const Scalar wx = tx->w_hi[ox];
        const Scalar top = v.at(k, ty->lo[oy], tx->lo[ox]) * (1 - wx) + v.at(k, ty->lo[oy], tx->hi[ox]) * wx;
        const Scalar bot = v.at(k, ty->hi[oy], tx->lo[ox]) * (1 - wx) + v.at(k, ty->hi[oy], tx->hi[ox]) * wx;
        out.at(k, oy, ox) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return ag::make_result(std::move(out), {x}, [ty, tx, c, out_height, out_width](Node& self) {
    auto& g = in(self, 0)->grad_buffer();
    for (int k = 0; k < c; ++k) {
      for (int oy = 0; oy < out_height; ++oy) {
        const Scalar wy = ty->w_hi[oy];
        for (int ox = 0; ox < out_width; ++ox) {
          const Scalar wx = tx->w_hi[ox];
          const Scalar d = self.grad.at(k, oy, ox);
          g.at(k, ty->lo[oy], tx->lo[ox]) += d * (1 - wy) * (1 - wx);
          g.at(k, ty->lo[oy], tx->hi[ox]) += d * (1 - wy) * wx;
          g.at(k, ty->hi[oy], tx->lo[ox]) += d * wy * (1 - wx);
          g.at(k, ty->hi[oy], tx->hi[ox]) += d * wy * wx;
        }
      }
    }
  });
}

namespace {

struct ConvGeometry {
  int channels, height, width;
  int kh, kw;
  int out_h, out_w;
  Conv2dSpec spec;
  bool pointwise() const {
    return kh == 1 && kw == 1 && spec.stride == 1 && spec.pad_h == 0 && spec.pad_w == 0;
  }
};

// cols: [C*kh*kw, out_h*out_w]
void im2col(const ConvGeometry& g, const Scalar* x, Scalar* cols) {
  const int n = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        Scalar* row = cols + static_cast<std::size_t>((c * g.kh + i) * g.kw + j) * n;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int y = oy * g.spec.stride - g.spec.pad_h + i;
          Scalar* dst = row + oy * g.out_w;
          if (y < 0 || y >= g.height) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const Scalar* src = x + (static_cast<std::size_t>(c) * g.height + y) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int xx = ox * g.spec.stride - g.spec.pad_w + j;
            dst[ox] = (xx >= 0 && xx < g.width) ? src[xx] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const Scalar* cols, Scalar* dx) {
  const int n = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        const Scalar* row = cols + static_cast<std::size_t>((c * g.kh + i) * g.kw + j) * n;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int y = oy * g.spec.stride - g.spec.pad_h + i;
          if (y < 0 || y >= g.height) continue;
          Scalar* dst = dx + (static_cast<std::size_t>(c) * g.height + y) * g.width;
          const Scalar* src = row + oy * g.out_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int xx = ox * g.spec.stride - g.spec.pad_w + j;
            if (xx >= 0 && xx < g.width) dst[xx] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dSpec spec) {
  require_rank(x, 3, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  const auto& xv = x.value();
  const auto& wv = weight.value();
  if (wv.dim(1) != xv.dim(0)) {
    throw ShapeError("conv2d: weight expects " + std::to_string(wv.dim(1)) +
                     " input channels, input has " + std::to_string(xv.dim(0)));
  }
  if (spec.stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  ConvGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), wv.dim(2), wv.dim(3), 0, 0, spec};
  g.out_h = (g.height + 2 * spec.pad_h - g.kh) / spec.stride + 1;
  g.out_w = (g.width + 2 * spec.pad_w - g.kw) / spec.stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0) {
    throw ShapeError("conv2d: kernel larger than padded input " + shape_str(xv.shape()));
  }
  const int out_c = wv.dim(0);
  const int k = g.channels * g.kh * g.kw;
  const int n = g.out_h * g.out_w;
  if (bias && (bias.value().rank() != 1 || bias.value().dim(0) != out_c)) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + " for " +
                     std::to_string(out_c) + " outputs");
  }

  auto cols = std::make_shared<Storage>();
  const Scalar* col_ptr = xv.data();
  if (!g.pointwise()) {
    cols->resize(static_cast<std::size_t>(k) * n);
    im2col(g, xv.data(), cols->data());
    col_ptr = cols->data();
  }

  Tensor out({out_c, g.out_h, g.out_w});
  MapR out_m(out.data(), out_c, n);
  out_m.noalias() = CMapR(wv.data(), out_c, k) * CMapR(col_ptr, k, n);
  if (bias) {
    for (int o = 0; o < out_c; ++o) out_m.row(o).array() += bias.value()[o];
  }

  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(bias);
  return ag::make_result(std::move(out), std::move(inputs), [g, cols, out_c, k, n](Node& self) {
    auto* xn = in(self, 0);
    auto* wn = in(self, 1);
    const Scalar* cp = g.pointwise() ? xn->value.data() : cols->data();
    CMapR dout(self.grad.data(), out_c, n);
    if (wn->requires_grad) {
      MapR dw(wn->grad_buffer().data(), out_c, k);
      dw.noalias() += dout * CMapR(cp, k, n).transpose();
    }
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      auto& db = self.inputs[2]->grad_buffer();
      for (int o = 0; o < out_c; ++o) db[o] += dout.row(o).sum();
    }
    if (xn->requires_grad) {
      auto& dx = xn->grad_buffer();
      if (g.pointwise()) {
        MapR dxm(dx.data(), k, n);
        dxm.noalias() += CMapR(wn->value.data(), out_c, k).transpose() * dout;
      } else {
        MatR dcols = CMapR(wn->value.data(), out_c, k).transpose() * dout;
        col2im_add(g, dcols.data(), dx.data());
      }
    }
  });
}

}  // namespace afcv::ops
