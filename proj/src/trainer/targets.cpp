#include "afcv/trainer/targets.hpp"

#include <algorithm>
#include <limits>

#include "afcv/core/error.hpp"

namespace afcv::trainer {

LocationTargets build_targets(const std::vector<avdata::InstanceAnnotation>& instances, int num_classes,
                              int grid_height, int grid_width, int stride) {
  LocationTargets out;
  out.cls = Tensor({num_classes, grid_height, grid_width}, 0.0);
  const int cells = grid_height * grid_width;
  std::vector<int> owner(cells, -1);
  std::vector<double> owner_area(cells, std::numeric_limits<double>::infinity());
  std::vector<avdata::BBox> boxes;
  std::vector<crossover::GridPoint> anchors;

  auto claim = [&](int cell, int k, double area) {
    if (area < owner_area[cell]) {
      owner[cell] = k;
      owner_area[cell] = area;
    }
  };

  for (int k = 0; k < static_cast<int>(instances.size()); ++k) {
    const auto& inst = instances[k];
    if (inst.class_id < 0 || inst.class_id >= num_classes) {
      throw DataError("instance " + std::to_string(inst.instance_id) + " has class " + std::to_string(inst.class_id) +
                      " outside [0, " + std::to_string(num_classes) + ")");
    }
    const auto box = avdata::tight_bbox(inst.mask);
    boxes.push_back(box);
    anchors.push_back(crossover::instance_anchor(inst.mask, stride));
    if (box.x_max < box.x_min) continue;
    const double area = static_cast<double>(box.x_max - box.x_min + 1) * (box.y_max - box.y_min + 1);
    for (int y = 0; y < grid_height; ++y) {
      for (int x = 0; x < grid_width; ++x) {
        const int py = y * stride + stride / 2;
        const int px = x * stride + stride / 2;
        if (py < inst.mask.height && px < inst.mask.width && inst.mask.at(py, px)) claim(y * grid_width + x, k, area);
      }
    }
  }
  // Anchors last so small or heavily occluded instances still own a cell.
  for (int k = 0; k < static_cast<int>(instances.size()); ++k) {
    const auto& a = anchors[k];
    if (a.x >= grid_width || a.y >= grid_height || boxes[k].x_max < boxes[k].x_min) continue;
    const int cell = a.y * grid_width + a.x;
    if (owner[cell] < 0 || std::find(owner.begin(), owner.end(), k) == owner.end()) {
      owner[cell] = k;
    }
  }

  for (int k = 0; k < static_cast<int>(instances.size()); ++k) {
    const auto& a = anchors[k];
    if (a.x < grid_width && a.y < grid_height && owner[a.y * grid_width + a.x] == k) {
      out.positives[instances[k].instance_id].push_back(a);
    }
  }
  for (int cell = 0; cell < cells; ++cell) {
    const int k = owner[cell];
    if (k < 0) continue;
    const int x = cell % grid_width;
    const int y = cell / grid_width;
    const auto& inst = instances[k];
    out.cls[(static_cast<std::size_t>(inst.class_id) * grid_height + y) * grid_width + x] = 1.0;
    const double cx = x * stride + stride / 2.0;
    const double cy = y * stride + stride / 2.0;
    const auto& b = boxes[k];
    BoxTarget t;
    t.x = x;
    t.y = y;
    const double ltrb[4] = {cx - b.x_min, cy - b.y_min, b.x_max + 1 - cx, b.y_max + 1 - cy};
    for (int i = 0; i < 4; ++i) t.ltrb[i] = std::max(ltrb[i], 0.5) / stride;
    out.boxes.push_back(t);
    auto& cells_of = out.positives[inst.instance_id];
    if (cells_of.empty() || !(cells_of.front() == crossover::GridPoint{x, y})) cells_of.push_back({x, y});
  }
  return out;
}

}  // namespace afcv::trainer
