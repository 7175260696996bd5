#pragma once

// Exact 3D nearest-neighbour index (median-split k-d tree). Distances are
// computed with the same arithmetic the brute-force path uses, so the two
// agree bit-for-bit, not just within tolerance.

#include <cstddef>
#include <cstdint>
#include <vector>

namespace octquant {

struct Point3 {
  double x = 0.0;  // lateral, µm
  double y = 0.0;  // B-scan axis, µm
  double z = 0.0;  // axial, µm
};

inline double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

class KdTree3 {
 public:
  /// Builds over a non-empty point set.
  explicit KdTree3(std::vector<Point3> points);

  /// Squared Euclidean distance from q to the nearest indexed point.
  double nearest_squared(const Point3& q) const;

  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::uint32_t begin = 0;  // leaf payload range into points_
    std::uint32_t end = 0;
    std::uint8_t axis = 0;
    double split = 0.0;
  };

  std::int32_t build(std::size_t begin, std::size_t end, int depth);
  void search(std::int32_t node, const Point3& q, double& best) const;

  std::vector<Point3> points_;
  std::vector<Node> nodes_;
  std::int32_t root_ = -1;
};

}  // namespace octquant
