#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bodyfuse/geometry.hpp"
#include "bodyfuse/kernels.hpp"

namespace bodyfuse {

/// Row-major depth in metres; 0 marks an invalid pixel.
struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<float> depths;

  DepthImage() = default;
  DepthImage(int w, int h) : width(w), height(h), depths(static_cast<std::size_t>(w) * h, 0.0f) {}

  float at(int u, int v) const { return depths[static_cast<std::size_t>(v) * width + u]; }
  float& at(int u, int v) { return depths[static_cast<std::size_t>(v) * width + u]; }
};

struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Unprojects every `stride`-th pixel in row-major order, skipping invalid ones.
PointCloud depth_to_cloud(const DepthImage& img, const CameraIntrinsics& intr, int stride);

PointCloud transformed(const PointCloud& cloud, const RigidTransform& t);

/// Count-prefixed little-endian float32 triplets.
std::vector<std::uint8_t> serialize_cloud(const PointCloud& cloud);
/// Throws TruncatedPayload when the blob is shorter than its count claims.
PointCloud deserialize_cloud(std::span<const std::uint8_t> blob);

struct NearestResult {
  Vec3 point;
  double distance = 0.0;
  std::size_t index = 0;  // position in the indexed cloud
};

/// Exact k-d tree. Leaves are stored as SoA buckets scanned by the active kernel; ties
/// resolve to the lowest original index, matching a linear scan.
class SpatialIndex {
 public:
  explicit SpatialIndex(std::span<const Vec3> points);

  /// Throws EmptyIndex when built over no points.
  NearestResult nearest(const Vec3& q) const;
  std::size_t size() const { return order_.size(); }

 private:
  struct Node {
    int axis = -1;  // -1 for leaves
    double split = 0.0;
    std::uint32_t left = 0, right = 0;  // children, or [begin, end) into the leaf arrays
  };

  std::uint32_t build(std::uint32_t begin, std::uint32_t end, std::vector<std::uint32_t>& idx,
                      std::span<const Vec3> points);
  void search(std::uint32_t node, const Vec3& q, double& best_d2, std::size_t& best_slot) const;

  std::vector<Node> nodes_;
  kernels::SoaPoints leaf_points_;
  std::vector<std::uint32_t> order_;  // leaf slot -> original index
};

/// Weighted least-squares rigid fit mapping `source` onto `target`.
/// Throws LengthMismatch, or DegenerateConfiguration for collinear / coincident input.
RigidTransform kabsch(std::span<const Vec3> source, std::span<const Vec3> target, std::span<const double> weights);
RigidTransform kabsch(std::span<const Vec3> source, std::span<const Vec3> target);

struct IcpParams {
  double reject_threshold = 0.1;  // m
  double epsilon = 1e-6;          // m, minimum RMSE improvement
  int max_iterations = 50;
  double min_inlier_fraction = 0.3;
  std::size_t min_points = 10;
};

struct IcpResult {
  RigidTransform transform;
  double rmse = 0.0;  // over inliers at the final transform
  int iterations = 0;
  bool converged = false;
  double inlier_fraction = 0.0;
  /// Truncated RMSE sqrt(mean(min(d, reject_threshold)^2)) before the first update and after
  /// every iteration. This is the objective ICP descends, so the trace is non-increasing.
  std::vector<double> rmse_trace;
};

/// Point-to-point ICP of `source` onto `target` starting at `init` (target_from_source).
IcpResult icp(const PointCloud& source, const PointCloud& target, const RigidTransform& init,
              const IcpParams& params = {});
/// Same, reusing a prebuilt index over the target.
IcpResult icp(const PointCloud& source, const SpatialIndex& target_index, const RigidTransform& init,
              const IcpParams& params = {});

}  // namespace bodyfuse
