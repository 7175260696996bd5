#include "octquant/kdtree.hpp"

#include <algorithm>
#include <limits>

#include "octquant/core.hpp"

namespace octquant {

namespace {

double axis_value(const Point3& p, std::uint8_t axis) {
  return axis == 0 ? p.x : axis == 1 ? p.y : p.z;
}

}  // namespace

KdTree3::KdTree3(std::vector<Point3> points) : points_(std::move(points)) {
  if (points_.empty())
    fail(ErrorCode::EmptySurface, "k-d tree over an empty point set");
  nodes_.reserve(points_.size() / 4 + 8);
  root_ = build(0, points_.size(), 0);
}

std::int32_t KdTree3::build(std::size_t begin, std::size_t end, int depth) {
  constexpr std::size_t kLeafSize = 16;
  Node node;
  node.axis = static_cast<std::uint8_t>(depth % 3);
  if (end - begin <= kLeafSize) {
    node.begin = static_cast<std::uint32_t>(begin);
    node.end = static_cast<std::uint32_t>(end);
    nodes_.push_back(node);
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }

  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(points_.begin() + begin, points_.begin() + mid,
                   points_.begin() + end,
                   [axis = node.axis](const Point3& a, const Point3& b) {
                     return axis_value(a, axis) < axis_value(b, axis);
                   });
  node.split = axis_value(points_[mid], node.axis);

  const std::int32_t index = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(node);
  const std::int32_t left = build(begin, mid, depth + 1);
  const std::int32_t right = build(mid, end, depth + 1);
  nodes_[index].left = left;
  nodes_[index].right = right;
  return index;
}

void KdTree3::search(std::int32_t index, const Point3& q,
                     double& best) const {
  const Node& node = nodes_[index];
  if (node.left < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i)
      best = std::min(best, squared_distance(q, points_[i]));
    return;
  }
  const double delta = axis_value(q, node.axis) - node.split;
  const std::int32_t near = delta < 0.0 ? node.left : node.right;
  const std::int32_t far = delta < 0.0 ? node.right : node.left;
  search(near, q, best);
  if (delta * delta <= best) search(far, q, best);
}

double KdTree3::nearest_squared(const Point3& q) const {
  double best = std::numeric_limits<double>::infinity();
  search(root_, q, best);
  return best;
}

}  // namespace octquant
