#include "afcv/segcore/mask_head.hpp"

#include <Eigen/Core>
#include <memory>

#include "afcv/core/error.hpp"

namespace afcv::segcore {

namespace {

using MatR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMapR = Eigen::Map<const MatR>;
using MapR = Eigen::Map<MatR>;
using VecMap = Eigen::Map<Eigen::VectorX<Scalar>>;
using CVecMap = Eigen::Map<const Eigen::VectorX<Scalar>>;

struct Activations {
  std::vector<MatR> pre;   // z_l, one per layer
  std::vector<MatR> post;  // relu(z_l) for hidden layers
};

}  // namespace

MaskHeadLayout MaskHeadLayout::for_mask_channels(int mask_channels, int hidden) {
  return {{mask_channels + 2, hidden, hidden, 1}};
}

int MaskHeadLayout::num_params() const {
  int n = 0;
  for (int l = 0; l < num_layers(); ++l) n += channels[l + 1] * channels[l] + channels[l + 1];
  return n;
}

Tensor make_coordinate_map(int x, int y, int height, int width) {
  if (height <= 0 || width <= 0) throw ShapeError("coordinate map needs a non-empty grid");
  if (x < 0 || x >= width || y < 0 || y >= height) {
    throw DataError("anchor (" + std::to_string(x) + ", " + std::to_string(y) + ") outside " +
                    std::to_string(width) + "x" + std::to_string(height) + " grid");
  }
  Tensor map({2, height, width});
  for (int row = 0; row < height; ++row) {
    for (int col = 0; col < width; ++col) {
      map.at(0, row, col) = static_cast<double>(col - x) / width;
      map.at(1, row, col) = static_cast<double>(row - y) / height;
    }
  }
  return map;
}

Var mask_head(const Var& input, const Var& filters, const MaskHeadLayout& layout) {
  const auto& xv = input.value();
  if (xv.rank() != 3 || xv.dim(0) != layout.input_channels()) {
    throw ShapeError("mask_head: input " + shape_str(xv.shape()) + " but layout expects " +
                     std::to_string(layout.input_channels()) + " channels");
  }
  if (static_cast<int>(filters.value().size()) != layout.num_params()) {
    throw ShapeError("mask_head: filter vector has " + std::to_string(filters.value().size()) +
                     " values, expected " + std::to_string(layout.num_params()));
  }
  const int h = xv.dim(1);
  const int w = xv.dim(2);
  const int n = h * w;
  const int layers = layout.num_layers();
  const Scalar* theta = filters.value().data();

  auto acts = std::make_shared<Activations>();
  MatR current = CMapR(xv.data(), layout.channels[0], n);
  std::size_t offset = 0;
  for (int l = 0; l < layers; ++l) {
    const int cin = layout.channels[l];
    const int cout = layout.channels[l + 1];
    CMapR weight(theta + offset, cout, cin);
    CVecMap bias(theta + offset + static_cast<std::size_t>(cout) * cin, cout);
    offset += static_cast<std::size_t>(cout) * cin + cout;
    MatR z = weight * current;
    z.colwise() += bias;
    acts->pre.push_back(z);
    if (l + 1 < layers) {
      current = z.cwiseMax(0.0);
      acts->post.push_back(current);
    } else {
      current = z;
    }
  }
  Tensor out({1, h, w});
  std::copy(current.data(), current.data() + n, out.data());

  return ag::make_result(std::move(out), {input, filters}, [acts, layout, n](ag::Node& self) {
    ag::Node* xn = self.inputs[0].get();
    ag::Node* fn = self.inputs[1].get();
    const Scalar* theta = fn->value.data();
    const int layers = layout.num_layers();

    std::vector<std::size_t> offsets(layers);
    std::size_t off = 0;
    for (int l = 0; l < layers; ++l) {
      offsets[l] = off;
      off += static_cast<std::size_t>(layout.channels[l + 1]) * layout.channels[l] + layout.channels[l + 1];
    }

    MatR delta = CMapR(self.grad.data(), 1, n);
    for (int l = layers - 1; l >= 0; --l) {
      const int cin = layout.channels[l];
      const int cout = layout.channels[l + 1];
      if (l + 1 < layers) delta = delta.cwiseProduct((acts->pre[l].array() > 0.0).cast<Scalar>().matrix());
      const MatR& layer_in = l == 0 ? MatR(CMapR(xn->value.data(), cin, n)) : acts->post[l - 1];
      if (fn->requires_grad) {
        auto& g = fn->grad_buffer();
        MapR dw(g.data() + offsets[l], cout, cin);
        dw.noalias() += delta * layer_in.transpose();
        VecMap db(g.data() + offsets[l] + static_cast<std::size_t>(cout) * cin, cout);
        db += delta.rowwise().sum();
      }
      if (l == 0 && !xn->requires_grad) break;
      CMapR weight(theta + offsets[l], cout, cin);
      MatR next = weight.transpose() * delta;
      if (l == 0) {
        MapR dx(xn->grad_buffer().data(), cin, n);
        dx += next;
      }
      delta = std::move(next);
    }
  });
}

}  // namespace afcv::segcore
